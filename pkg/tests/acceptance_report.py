"""Collects one pass/fail line per acceptance criterion for the terminal summary."""
import contextlib

LINES: list[str] = []


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record PASS if the block finishes, FAIL (then re-raise) if it raises.

    The yielded dict's ``detail`` entry is appended to the line either way.
    """
    rec = {"detail": ""}
    try:
        yield rec
    except BaseException as e:
        msg = str(e).strip()
        detail = rec["detail"] or (msg.splitlines()[0] if msg else type(e).__name__)
        LINES.append(f"criterion {number:>2} FAIL  {title}: {detail}")
        raise
    LINES.append(f"criterion {number:>2} PASS  {title}: {rec['detail']}")
