"""Saliency benchmark metrics: PR curve, F-measure, ROC/AUC, MAE.

Maps are scored in byte form (0..255) against binary masks: each
threshold t binarizes with >=, precision/recall/TPR/FPR are averaged
across frames per threshold, F is computed from the averaged values,
and AUC integrates the averaged ROC (endpoints appended) by trapezoid.
MAE uses the normalized [0,1] form.
"""

from dataclasses import dataclass

import numpy as np

# guards ratios whose denominator can be an empty mask; a non-empty
# denominator is used exactly, so perfect predictors score exactly 1
EPS = 1e-8
DEFAULT_BETA2 = 0.3
THRESHOLDS = np.arange(256)


def _ratio(num, denom):
    return num / max(float(denom), EPS)


class MetricInputError(ValueError):
    """Raised for malformed metric inputs."""


def _as_mask(g):
    g = np.asarray(g)
    if not np.isin(g, (0, 1)).all():
        raise MetricInputError("ground truth must contain only 0 and 1")
    return g.astype(bool)


def _check_sizes(a, b, what):
    if a.shape != b.shape:
        raise MetricInputError(f"{what}: size mismatch {a.shape} vs {b.shape}")


def binarize(s_bytes, t):
    """Mask of pixels >= t, for byte maps and integer thresholds 0..255."""
    if not 0 <= int(t) <= 255 or int(t) != t:
        raise MetricInputError(f"threshold must be an integer in 0..255, got {t}")
    s_bytes = np.asarray(s_bytes)
    if s_bytes.dtype != np.uint8:
        raise MetricInputError(f"binarize expects byte maps, got dtype {s_bytes.dtype}")
    return s_bytes >= t


def precision_recall(m, g):
    m = np.asarray(m, dtype=bool)
    g = _as_mask(g)
    _check_sizes(m, g, "precision_recall")
    inter = float(np.logical_and(m, g).sum())
    return _ratio(inter, m.sum()), _ratio(inter, g.sum())


def f_measure(p, r, beta2=DEFAULT_BETA2):
    """Weighted harmonic mean; 0 at the p=r=0 singularity."""
    denom = beta2 * p + r
    if denom == 0:
        return 0.0
    return (1.0 + beta2) * p * r / denom


def roc_point(m, g):
    m = np.asarray(m, dtype=bool)
    g = _as_mask(g)
    _check_sizes(m, g, "roc_point")
    tpr = _ratio(float(np.logical_and(m, g).sum()), g.sum())
    fpr = _ratio(float(np.logical_and(m, ~g).sum()), (~g).sum())
    return tpr, fpr


def auc(fpr, tpr):
    """Trapezoidal area under (FPR, TPR) points plus (0,0) and (1,1)."""
    fpr = np.concatenate(([0.0], np.asarray(fpr, dtype=float), [1.0]))
    tpr = np.concatenate(([0.0], np.asarray(tpr, dtype=float), [1.0]))
    order = np.lexsort((tpr, fpr))
    return float(np.trapezoid(tpr[order], fpr[order]))


def mae(s_norm, g):
    s_norm = np.asarray(s_norm, dtype=float)
    g = np.asarray(g, dtype=float)
    _check_sizes(s_norm, g, "mae")
    return float(np.abs(s_norm - g).mean())


def resize_bilinear(img, height, width):
    """Plain bilinear resampling with edge clamping (align-corners-free)."""
    img = np.asarray(img, dtype=float)
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img.copy()
    ys = (np.arange(height) + 0.5) * h / height - 0.5
    xs = (np.arange(width) + 0.5) * w / width - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    if img.ndim == 3:
        wy = wy[:, :, None]
        wx = wx[:, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_nearest(img, height, width):
    img = np.asarray(img)
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img.copy()
    ys = np.minimum(((np.arange(height) + 0.5) * h / height).astype(int), h - 1)
    xs = np.minimum(((np.arange(width) + 0.5) * w / width).astype(int), w - 1)
    return img[ys][:, xs]


def _to_byte_and_norm(s, gt_shape):
    """Normalize an input map to (byte form, [0,1] form) at the gt size."""
    s = np.asarray(s)
    resized = False
    if s.dtype == np.uint8:
        norm = s.astype(float) / 255.0
    else:
        if s.size and (s.min() < 0 or s.max() > 1):
            raise MetricInputError("float maps must lie in [0, 1]")
        norm = s.astype(float)
    if norm.shape != tuple(gt_shape):
        norm = resize_bilinear(norm, *gt_shape)
        resized = True
    return np.rint(norm * 255.0).astype(np.uint8), norm, resized


@dataclass
class EvalReport:
    precision: np.ndarray  # per threshold 0..255
    recall: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    f: np.ndarray
    max_f: float
    avg_f: float
    auc: float
    mae: float
    frames: int
    resized_frames: int = 0

    def summary(self):
        return (
            f"frames: {self.frames}\n"
            f"maxF:  {self.max_f:.5f}\n"
            f"avgF:  {self.avg_f:.5f}\n"
            f"AUC:   {self.auc:.5f}\n"
            f"MAE:   {self.mae:.5f}\n"
        )


def evaluate_set(maps, gts, beta2=DEFAULT_BETA2):
    """Score aligned lists of maps and masks into one EvalReport.

    Maps may be uint8 (byte form) or floats in [0,1]; a map whose size
    differs from its mask is bilinearly resized to match first.
    """
    if len(maps) != len(gts):
        raise MetricInputError(f"{len(maps)} maps vs {len(gts)} ground truths")
    if not maps:
        raise MetricInputError("nothing to evaluate")
    n = len(maps)
    prec = np.zeros((n, 256))
    rec = np.zeros((n, 256))
    tpr = np.zeros((n, 256))
    fpr = np.zeros((n, 256))
    maes = np.zeros(n)
    resized_frames = 0
    for fi, (s, g) in enumerate(zip(maps, gts)):
        g = _as_mask(g)
        s_bytes, s_norm, resized = _to_byte_and_norm(s, g.shape)
        resized_frames += int(resized)
        maes[fi] = mae(s_norm, g.astype(float))
        # all 256 thresholds at once: a reversed cumulative histogram
        # counts the pixels >= t, which is exactly the >= binarization
        flat, gflat = s_bytes.reshape(-1), g.reshape(-1)
        pos = np.bincount(flat[gflat], minlength=256).astype(float)
        neg = np.bincount(flat[~gflat], minlength=256).astype(float)
        inter = np.cumsum(pos[::-1])[::-1]
        false_pos = np.cumsum(neg[::-1])[::-1]
        prec[fi] = inter / np.maximum(inter + false_pos, EPS)
        rec[fi] = inter / max(float(gflat.sum()), EPS)
        tpr[fi] = rec[fi]
        fpr[fi] = false_pos / max(float((~gflat).sum()), EPS)
    p_bar, r_bar = prec.mean(axis=0), rec.mean(axis=0)
    tpr_bar, fpr_bar = tpr.mean(axis=0), fpr.mean(axis=0)
    f = np.array([f_measure(p, r, beta2) for p, r in zip(p_bar, r_bar)])
    return EvalReport(
        precision=p_bar,
        recall=r_bar,
        tpr=tpr_bar,
        fpr=fpr_bar,
        f=f,
        max_f=float(f.max()),
        avg_f=float(f.mean()),
        auc=auc(fpr_bar, tpr_bar),
        mae=float(maes.mean()),
        frames=n,
        resized_frames=resized_frames,
    )


def write_pr_csv(path, report):
    with open(path, "w") as fh:
        fh.write("threshold,precision,recall,F\n")
        for t in THRESHOLDS:
            fh.write(
                f"{t},{report.precision[t]:.10g},{report.recall[t]:.10g},"
                f"{report.f[t]:.10g}\n"
            )


def write_roc_csv(path, report):
    with open(path, "w") as fh:
        fh.write("threshold,FPR,TPR\n")
        for t in THRESHOLDS:
            fh.write(f"{t},{report.fpr[t]:.10g},{report.tpr[t]:.10g}\n")


def write_summary(path, report):
    with open(path, "w") as fh:
        fh.write(report.summary())
