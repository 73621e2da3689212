"""Builds the 5-image metric fixture set and its expected values.

Counting is done with plain integer arithmetic on the 8-bit levels, without
reference to the Rust implementation. Run from this directory:

    python3 make_golden.py
"""
import json
import math

import numpy as np

H, W = 12, 12
RADIUS_FRACTION = 0.1
BETA2 = 0.3
rng = np.random.default_rng(20240611)


def write_pgm(path, arr, maxval=255):
    arr = np.asarray(arr)
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode())
        if maxval > 255:
            f.write(arr.astype(">u2").tobytes())
        else:
            f.write(arr.astype(np.uint8).tobytes())


def rect(t, l, b, r):
    m = np.zeros((H, W), bool)
    m[t:b, l:r] = True
    return m


# ---------------------------------------------------------------- inputs
gts = [
    rect(2, 3, 8, 9),
    rect(1, 1, 5, 5) | rect(6, 6, 11, 11),
    rect(3, 0, 12, 4),
    np.zeros((H, W), bool),
    rect(0, 0, 12, 12) & ~rect(4, 4, 8, 8),
]
levels = []
for i, g in enumerate(gts):
    base = np.where(g, rng.integers(120, 256, (H, W)), rng.integers(0, 140, (H, W)))
    # a few confident mistakes
    flip = rng.random((H, W)) < 0.06
    base = np.where(flip, 255 - base, base)
    levels.append(base.astype(int))
levels[0][0, 0] = 0
levels[0][0, 1] = 255
levels[2][:] = np.where(gts[2], 255, 0)

cgts, cpreds = [], []
for i, g in enumerate(gts):
    # 4-connected inner boundary of the ground-truth region
    gp = np.pad(g, 1)
    interior = gp[:-2, 1:-1] & gp[2:, 1:-1] & gp[1:-1, :-2] & gp[1:-1, 2:]
    edge = g & ~interior
    cgts.append(edge)
    shifted = np.roll(edge, 1 if i % 2 else 0, axis=1)
    pred = np.where(shifted, rng.integers(100, 256, (H, W)), rng.integers(0, 60, (H, W)))
    spur = rng.random((H, W)) < 0.04
    pred = np.where(spur, rng.integers(100, 256, (H, W)), pred)
    cpreds.append(pred.astype(int))
cgts[3] = rect(6, 0, 7, 12)

inst_gt, inst_pred, scores = [], [], []
for i, g in enumerate(gts):
    lab = np.zeros((H, W), int)
    if i == 0:
        lab[2:8, 3:6] = 1
        lab[2:8, 6:9] = 2
        pl = np.zeros((H, W), int)
        pl[2:8, 3:6] = 1
        pl[2:8, 5:9] = 2
        pl[0:2, 0:2] = 3
        sc = [0.9, 0.8, 0.8]
    elif i == 1:
        lab[1:5, 1:5] = 1
        lab[6:11, 6:11] = 2
        pl = np.zeros((H, W), int)
        pl[1:5, 1:4] = 1
        pl[6:11, 6:11] = 2
        sc = [0.7, 0.95]
    elif i == 2:
        lab[3:12, 0:4] = 1
        pl = np.zeros((H, W), int)
        pl[3:7, 0:4] = 1
        pl[7:12, 0:4] = 2
        sc = [0.6, 0.6]
    elif i == 3:
        pl = np.zeros((H, W), int)
        pl[0:3, 0:3] = 1
        sc = [0.5]
    else:
        lab[0:4, :] = 1
        lab[4:8, 0:4] = 2
        lab[4:8, 8:12] = 3
        lab[8:12, :] = 4
        pl = np.zeros((H, W), int)
        pl[0:4, :] = 1
        pl[4:8, 0:4] = 2
        pl[8:12, 0:6] = 3
        pl[8:12, 6:12] = 4
        sc = [0.85, 0.4, 0.65, 0.65]
    inst_gt.append(lab)
    inst_pred.append(pl)
    scores.append(sc)

for i in range(5):
    write_pgm(f"sal_{i}.pgm", levels[i])
    write_pgm(f"gt_{i}.pgm", gts[i].astype(int) * 255)
    write_pgm(f"con_{i}.pgm", cpreds[i])
    write_pgm(f"cgt_{i}.pgm", cgts[i].astype(int) * 255)
    write_pgm(f"ins_{i}.pgm", inst_gt[i], 65535)
    write_pgm(f"ipred_{i}.pgm", inst_pred[i], 65535)


# ---------------------------------------------------------------- saliency
def fbeta(p, r, b2):
    d = b2 * p + r
    return 0.0 if d <= 0 else (1 + b2) * p * r / d


def pr_counts(lv, g):
    out = []
    for t in range(256):
        pred = lv > t
        tp = int((pred & g).sum())
        fp = int((pred & ~g).sum())
        fn = int((~pred & g).sum())
        out.append([tp, fp, fn])
    return out


def prec(tp, fp):
    return 1.0 if tp + fp == 0 else tp / (tp + fp)


def rec(tp, fn):
    return 0.0 if tp + fn == 0 else tp / (tp + fn)


saliency = []
curves = []
for lv, g in zip(levels, gts):
    c = pr_counts(lv, g)
    pts = [(prec(tp, fp), rec(tp, fn)) for tp, fp, fn in c]
    maxf = max(fbeta(p, r, BETA2) for p, r in pts)
    # MAE with S = v/255 and G in {0,1}: exact rational, reported as float
    # maps are stored as 8-bit levels and read as float32 v / 255
    s = (lv.astype(np.float32) / np.float32(255)).astype(np.float64)
    mae = float(np.abs(s - g.astype(float)).sum()) / lv.size
    thr = min(2 * float(s.sum()) / lv.size, 1.0)
    passed = s > thr
    tp = int((passed & g).sum()); fp = int((passed & ~g).sum()); fn = int((~passed & g).sum())
    ap, ar = prec(tp, fp), rec(tp, fn)
    saliency.append({
        "counts": c,
        "gt_empty": bool(g.sum() == 0),
        "max_f": maxf,
        "mae": mae,
        "adaptive": {"threshold": thr, "tp": tp, "fp": fp, "fn": fn,
                     "precision": ap, "recall": ar, "f": fbeta(ap, ar, BETA2)},
    })
    if g.sum() > 0:
        curves.append(pts)
mean_pts = [(sum(c[t][0] for c in curves) / len(curves), sum(c[t][1] for c in curves) / len(curves))
            for t in range(256)]
dataset_max_f = max(fbeta(p, r, BETA2) for p, r in mean_pts)


# ---------------------------------------------------------------- contours
def thin(m):
    m = m.copy()
    h, w = m.shape

    def at(y, x):
        return 1 if 0 <= y < h and 0 <= x < w and m[y, x] else 0

    while True:
        changed = False
        for step in range(2):
            remove = []
            for y in range(h):
                for x in range(w):
                    if not m[y, x]:
                        continue
                    p = [at(y - 1, x), at(y - 1, x + 1), at(y, x + 1), at(y + 1, x + 1),
                         at(y + 1, x), at(y + 1, x - 1), at(y, x - 1), at(y - 1, x - 1)]
                    b = sum(p)
                    if not 2 <= b <= 6:
                        continue
                    a = sum(1 for k in range(8) if p[k] == 0 and p[(k + 1) % 8] == 1)
                    if a != 1:
                        continue
                    if step == 0:
                        ok = p[0] * p[2] * p[4] == 0 and p[2] * p[4] * p[6] == 0
                    else:
                        ok = p[0] * p[2] * p[6] == 0 and p[0] * p[4] * p[6] == 0
                    if ok:
                        remove.append((y, x))
            if remove:
                changed = True
            for y, x in remove:
                m[y, x] = False
        if not changed:
            return m


def greedy(pred, gt, radius):
    h, w = pred.shape
    r = int(math.floor(radius))
    used = np.zeros((h, w), bool)
    n = 0
    for y in range(h):
        for x in range(w):
            if not pred[y, x]:
                continue
            best = None
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy, xx = y + dy, x + dx
                    if not (0 <= yy < h and 0 <= xx < w):
                        continue
                    d = dy * dy + dx * dx
                    if d > radius * radius:
                        continue
                    if gt[yy, xx] and not used[yy, xx]:
                        key = (d, yy * w + xx)
                        if best is None or key < best:
                            best = key
            if best is not None:
                used[best[1] // w, best[1] % w] = True
                n += 1
    return n


radius = RADIUS_FRACTION * math.sqrt(H * H + W * W)
contour_counts = []
for cp, cg in zip(cpreds, cgts):
    tg = thin(cg)
    per = []
    for k in range(1, 100):
        # v/255 > k/100  <=>  100 v > 255 k
        p = thin(100 * cp > 255 * k)
        per.append([greedy(p, tg, radius), int(p.sum()), int(tg.sum())])
    contour_counts.append(per)


def cp_(m, p):
    return 1.0 if p == 0 else m / p


def cr_(m, g):
    return 0.0 if g == 0 else m / g


totals = [[sum(c[k][j] for c in contour_counts) for j in range(3)] for k in range(99)]
fs = [fbeta(cp_(m, p), cr_(m, g), 1.0) for m, p, g in totals]
ods = max(fs)
ods_k = fs.index(ods)
ois_vals = [max(fbeta(cp_(m, p), cr_(m, g), 1.0) for m, p, g in c) for c in contour_counts if c[0][2] > 0]
ois = sum(ois_vals) / len(ois_vals)


def interp_ap(points):
    pts = sorted(points, key=lambda q: (q[1], -q[0]))
    ap, prev = 0.0, 0.0
    for i, (p, r) in enumerate(pts):
        if r <= prev:
            continue
        ap += (r - prev) * max(q[0] for q in pts[i:])
        prev = r
    return ap


contour_ap = interp_ap([(cp_(m, p), cr_(m, g)) for m, p, g in totals])


# ---------------------------------------------------------------- instances
def iou(a, b):
    u = (a | b).sum()
    return 0.0 if u == 0 else (a & b).sum() / u


def map_r(tau):
    entries = []
    total = 0
    gts_i = []
    for ii in range(5):
        g = [inst_gt[ii] == l for l in range(1, inst_gt[ii].max() + 1)]
        gts_i.append(g)
        total += len(g)
        for pi, s in enumerate(scores[ii]):
            m = inst_pred[ii] == pi + 1
            ious = [iou(m, gg) for gg in g]
            entries.append((s, max(ious, default=0.0), ii, pi, ious))
    entries.sort(key=lambda e: (-e[0], -e[1], e[2], e[3]))
    matched = [[False] * len(g) for g in gts_i]
    tp = 0
    pts = []
    for rank, e in enumerate(entries):
        best = None
        for gi, v in enumerate(e[4]):
            if not matched[e[2]][gi] and v >= tau and (best is None or v > best[0]):
                best = (v, gi)
        if best is not None:
            matched[e[2]][best[1]] = True
            tp += 1
        pts.append((tp / (rank + 1), tp / total))
    return {"iou_threshold": tau, "ap": interp_ap(pts), "true_positives": tp,
            "predictions": len(entries), "ground_truth": total}


golden = {
    "height": H,
    "width": W,
    "beta2": BETA2,
    "radius_fraction": RADIUS_FRACTION,
    "scores": scores,
    "saliency": saliency,
    "dataset_max_f": dataset_max_f,
    "contour": {"counts": contour_counts, "ods": ods, "ods_threshold": (ods_k + 1) / 100,
                "ois": ois, "ap": contour_ap},
    "map_r": [map_r(0.5), map_r(0.7)],
}
with open("golden.json", "w") as f:
    json.dump(golden, f)
print("dataset max-F", dataset_max_f, "ODS", ods, "OIS", ois, "AP", contour_ap,
      "mAP", golden["map_r"][0]["ap"], golden["map_r"][1]["ap"])
