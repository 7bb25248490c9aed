"""Slow, independent reference implementations used as test oracles."""
import itertools
import math

import numpy as np


def ha_reference(F_rgb, F_th, m_rgb, m_th, w):
    """Hybrid attention for one item with explicit per-token loops.

    ``F_*`` are (C, H, W) arrays, ``m_*`` (H, W), ``w`` maps the six names
    (q_rgb, k_rgb, ...) to C x C arrays.
    """
    C, H, W = F_rgb.shape
    N = H * W

    def tokens(F, m):
        return [[m[n // W, n % W] * F[c, n // W, n % W] for c in range(C)] for n in range(N)]

    def proj(Wm, toks):
        return [[sum(Wm[o][c] * t[c] for c in range(C)) for o in range(C)] for t in toks]

    f_r, f_t = tokens(F_rgb, m_rgb), tokens(F_th, m_th)
    q_r, k_r, v_r = proj(w["q_rgb"], f_r), proj(w["k_rgb"], f_r), proj(w["v_rgb"], f_r)
    q_t, k_t, v_t = proj(w["q_thermal"], f_t), proj(w["k_thermal"], f_t), proj(w["v_thermal"], f_t)
    q_c = [[q_r[n][c] + q_t[n][c] for c in range(C)] for n in range(N)]

    def att(k, v):
        out = []
        for i in range(N):
            logits = [sum(q_c[i][c] * k[j][c] for c in range(C)) / math.sqrt(C) for j in range(N)]
            mx = max(logits)
            e = [math.exp(l - mx) for l in logits]
            s = sum(e)
            out.append([sum(e[j] / s * v[j][c] for j in range(N)) for c in range(C)])
        return out

    a_r, a_t = att(k_r, v_r), att(k_t, v_t)
    out_r = np.zeros((C, H, W))
    out_t = np.zeros((C, H, W))
    for n in range(N):
        for c in range(C):
            out_r[c, n // W, n % W] = f_r[n][c] + a_r[n][c]
            out_t[c, n // W, n % W] = f_t[n][c] + a_t[n][c]
    return out_r, out_t


def central_difference(fn, x, eps=1e-5, indices=None):
    """Numerical gradient of scalar ``fn()`` w.r.t. the float64 tensor ``x`` (perturbed in place)."""
    import torch

    flat = x.data.view(-1)
    idx = range(flat.numel()) if indices is None else indices
    out = {}
    with torch.no_grad():
        for i in idx:
            orig = flat[i].item()
            flat[i] = orig + eps
            fp = float(fn())
            flat[i] = orig - eps
            fm = float(fn())
            flat[i] = orig
            out[i] = (fp - fm) / (2 * eps)
    return out


def max_relative_error(analytic: dict, numeric: dict, floor=1e-6) -> float:
    worst = 0.0
    for i, n in numeric.items():
        a = analytic[i]
        worst = max(worst, abs(a - n) / max(abs(a), abs(n), floor))
    return worst


def greedy_nms_reference(boxes, scores, thresh, top_k=None):
    def box_iou(a, b):
        iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
        ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
        inter = iw * ih
        ua = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
        return inter / ua if ua > 0 else 0.0

    remaining = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    keep = []
    while remaining and (top_k is None or len(keep) < top_k):
        i = remaining.pop(0)
        keep.append(i)
        remaining = [j for j in remaining if box_iou(boxes[i], boxes[j]) < thresh]
    return keep


def mr_by_enumeration(images, refs=None):
    """Log-average MR by re-matching detections from scratch at every score threshold.

    ``images`` is a list of ``(dets, gts)`` where dets are ``(box, score)`` and
    gts are ``(box, ignore)``; matching is greedy by score at IoU 0.5.
    """
    refs = np.logspace(-2, 0, 9) if refs is None else refs
    n_img = len(images)
    n_gt = sum(not ign for _, gts in images for _, ign in gts)
    thresholds = sorted({s for dets, _ in images for _, s in dets}, reverse=True)

    def iou(a, b):
        iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
        ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
        inter = iw * ih
        return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)

    points = []
    for t in thresholds:
        tp = fp = 0
        for dets, gts in images:
            kept = sorted([d for d in dets if d[1] >= t], key=lambda d: -d[1])
            used = set()
            for box, _ in kept:
                best, best_iou = None, 0.5
                for j, (g, ign) in enumerate(gts):
                    if ign or j in used:
                        continue
                    v = iou(box, g)
                    if v >= best_iou and (best is None or v > best_iou):
                        best, best_iou = j, v
                if best is not None:
                    used.add(best)
                    tp += 1
                elif any(ign and iou(box, g) >= 0.5 for g, ign in gts):
                    pass
                else:
                    fp += 1
        points.append((fp / n_img, 1 - tp / n_gt))
    if not points:
        points = [(0.0, 1.0)]
    samples = []
    for r in refs:
        ok = [mr for f, mr in points if f <= r]
        samples.append(ok[-1] if ok else max(mr for _, mr in points))
    floor = 1 / (10 * n_gt)
    return 100 * math.exp(sum(math.log(max(s, floor)) for s in samples) / len(samples)), points


def exhaustive_greedy_match(det_boxes, gt_boxes, gt_ignore, thresh=0.5):
    """Enumerate every assignment of dets to gts (or none) and keep the one the
    greedy-by-score rule selects: processing dets in order, each must take its
    best available gt. Returns per-det statuses (1 TP, 0 FP, -1 ignored)."""

    def iou(a, b):
        iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
        ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
        inter = iw * ih
        return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)

    nd, ng = len(det_boxes), len(gt_boxes)
    real = [j for j in range(ng) if not gt_ignore[j]]
    for assign in itertools.product([None] + real, repeat=nd):
        picked = [a for a in assign if a is not None]
        if len(picked) != len(set(picked)):
            continue
        ok = True
        used = set()
        for i, a in enumerate(assign):
            avail = [(iou(det_boxes[i], gt_boxes[j]), -j) for j in real
                     if j not in used and iou(det_boxes[i], gt_boxes[j]) >= thresh]
            want = -max(avail)[1] if avail else None
            if want != a:
                ok = False
                break
            if a is not None:
                used.add(a)
        if ok:
            status = []
            for i, a in enumerate(assign):
                if a is not None:
                    status.append(1)
                elif any(gt_ignore[j] and iou(det_boxes[i], gt_boxes[j]) >= thresh for j in range(ng)):
                    status.append(-1)
                else:
                    status.append(0)
            return status
    raise AssertionError("no greedy-consistent assignment found")
