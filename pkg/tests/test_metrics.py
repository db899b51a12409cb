"""Benchmark metric correctness against independent loop and rank oracles."""

import numpy as np
import pytest

from nlsal.metrics import (
    DEFAULT_BETA2,
    MetricInputError,
    auc,
    binarize,
    evaluate_set,
    f_measure,
    mae,
    precision_recall,
    resize_bilinear,
    resize_nearest,
    roc_point,
    write_pr_csv,
    write_roc_csv,
    write_summary,
)

# --------------------------------------------------------------- oracles


def curves_loops(maps, gts, beta2=DEFAULT_BETA2):
    """Averaged per-threshold curves built from raw set arithmetic."""
    eps = 1e-8
    P, R, FPR = [], [], []
    for t in range(256):
        ps, rs, fs = [], [], []
        for s, g in zip(maps, gts):
            m = np.asarray(s) >= t
            g = np.asarray(g).astype(bool)
            inter = float((m & g).sum())
            ps.append(inter / max(float(m.sum()), eps))
            rs.append(inter / max(float(g.sum()), eps))
            fs.append(float((m & ~g).sum()) / max(float((~g).sum()), eps))
        P.append(np.mean(ps))
        R.append(np.mean(rs))
        FPR.append(np.mean(fs))
    F = [0.0 if beta2 * p + r == 0 else (1 + beta2) * p * r / (beta2 * p + r)
         for p, r in zip(P, R)]
    return np.array(P), np.array(R), np.array(FPR), np.array(F)


def rank_auc(scores, labels):
    """Mann-Whitney AUC with average ranks for ties."""
    flat = np.asarray(scores, dtype=float).reshape(-1)
    order = np.argsort(flat, kind="stable")
    s = flat[order]
    lab = np.asarray(labels, dtype=bool).reshape(-1)[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[i:j + 1] = 0.5 * (i + j) + 1.0
        i = j + 1
    npos = int(lab.sum())
    nneg = len(s) - npos
    u = ranks[lab].sum() - npos * (npos + 1) / 2.0
    return u / (npos * nneg)


THREE_FRAMES = [
    (np.array([[255, 0], [0, 255]], dtype=np.uint8), np.array([[1, 0], [0, 1]])),
    (np.array([[200, 100], [50, 0]], dtype=np.uint8), np.array([[1, 0], [1, 0]])),
    (np.array([[128, 128], [128, 128]], dtype=np.uint8), np.array([[1, 0], [0, 0]])),
]

# hand-computed from the loop arithmetic above, frozen
THREE_FRAME_MAX_F = 0.76771653543307095
THREE_FRAME_AVG_F = 0.59010499758251622
THREE_FRAME_AUC = 0.86111111111111116
THREE_FRAME_MAE = 0.28464052287581704


# -------------------------------------------------------------- binarize

def test_binarize_boundaries():
    s = np.array([[0, 128], [255, 7]], dtype=np.uint8)
    assert binarize(s, 0).all()
    assert np.array_equal(binarize(s, 255), s == 255)
    u = np.full((2, 2), 128, dtype=np.uint8)
    assert binarize(u, 128).all()
    assert not binarize(u, 129).any()


@pytest.mark.parametrize("t", [-1, 256, 0.5])
def test_binarize_rejects_bad_threshold(t):
    with pytest.raises(MetricInputError):
        binarize(np.zeros((2, 2), dtype=np.uint8), t)


def test_binarize_rejects_float_maps():
    with pytest.raises(MetricInputError):
        binarize(np.zeros((2, 2)), 0)


# ----------------------------------------------------- precision, recall

def test_precision_recall_identity():
    g = np.array([[1, 0], [1, 1]])
    p, r = precision_recall(g.astype(bool), g)
    assert abs(p - 1) <= 1e-7 and abs(r - 1) <= 1e-7


def test_precision_recall_all_ones_mask():
    g = np.zeros((4, 4), dtype=int)
    g[:2, :3] = 1  # 6 of 16
    p, r = precision_recall(np.ones((4, 4), dtype=bool), g)
    assert np.isclose(p, 6 / 16) and r == 1.0


def test_precision_recall_empty_mask():
    p, r = precision_recall(np.zeros((3, 3), dtype=bool), np.eye(3, dtype=int))
    assert p == 0.0 and r == 0.0


def test_precision_recall_size_mismatch():
    with pytest.raises(MetricInputError):
        precision_recall(np.ones((2, 2), dtype=bool), np.ones((3, 3), dtype=int))
    with pytest.raises(MetricInputError):
        precision_recall(np.ones((2, 2), dtype=bool), np.full((2, 2), 2))


# ------------------------------------------------------------- f-measure

@pytest.mark.parametrize("x", [round(0.1 * k, 1) for k in range(1, 11)])
def test_f_of_equal_precision_recall_is_identity(x):
    assert np.isclose(f_measure(x, x), x, rtol=0, atol=1e-12)


def test_f_measure_hand_value_and_limits():
    assert np.isclose(f_measure(0.8, 0.5), 0.52 / 0.74)
    assert f_measure(1.0, 0.0) == 0.0
    assert f_measure(0.0, 0.0) == 0.0


def test_f_measure_monotone_in_each_argument():
    grid = np.linspace(0.05, 1.0, 12)
    for r in (0.2, 0.7):
        vals = [f_measure(p, r) for p in grid]
        assert all(b > a for a, b in zip(vals, vals[1:]))
    for p in (0.2, 0.7):
        vals = [f_measure(p, r) for r in grid]
        assert all(b > a for a, b in zip(vals, vals[1:]))


# ------------------------------------------------------------- roc / auc

def test_roc_point_extremes():
    g = np.array([[1, 0], [0, 1]])
    assert roc_point(g.astype(bool), g) == (1.0, 0.0)
    assert roc_point(np.ones((2, 2), dtype=bool), g) == (1.0, 1.0)
    assert roc_point(np.zeros((2, 2), dtype=bool), g) == (0.0, 0.0)


def test_perfect_predictor_scores_perfectly():
    g = np.zeros((8, 8), dtype=int)
    g[2:6, 3:7] = 1
    report = evaluate_set([(255 * g).astype(np.uint8)], [g])
    assert abs(report.auc - 1.0) <= 1e-12
    assert report.max_f == 1.0
    assert report.mae == 0.0


def test_constant_map_gives_half_auc():
    g = np.zeros((8, 8), dtype=int)
    g[1:4, 1:4] = 1
    report = evaluate_set([np.full((8, 8), 128, dtype=np.uint8)], [g])
    assert abs(report.auc - 0.5) <= 1e-12
    assert np.all(report.recall[:129] == 1.0) and np.all(report.recall[129:] == 0.0)


def test_auc_matches_rank_oracle_on_random_frames():
    rng = np.random.default_rng(3)
    for _ in range(100):
        s = rng.integers(0, 256, (8, 8)).astype(np.uint8)
        g = (rng.random((8, 8)) < 0.4).astype(int)
        npos = g.sum()
        if npos in (0, 64):
            g.flat[0] = 1 - g.flat[0]
            npos = g.sum()
        got = evaluate_set([s], [g]).auc
        want = rank_auc(s, g)
        assert abs(got - want) <= 1.0 / (npos * (64 - npos))


def test_auc_invariant_under_monotone_byte_remap():
    rng = np.random.default_rng(4)
    s = rng.integers(0, 128, (8, 8)).astype(np.uint8)
    g = (rng.random((8, 8)) < 0.5).astype(int)
    remapped = (2 * s.astype(int) + 1).astype(np.uint8)  # strictly increasing
    a = evaluate_set([s], [g]).auc
    b = evaluate_set([remapped], [g]).auc
    assert abs(a - b) <= 1e-12


# ------------------------------------------------------------------- mae

def test_mae_basics():
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert mae(g, g) == 0.0
    assert mae(np.full((2, 2), 0.5), g) == 0.5
    rng = np.random.default_rng(5)
    s, t = rng.random((4, 4)), (rng.random((4, 4)) < 0.5).astype(float)
    assert np.isclose(mae(s, t), float(np.mean([abs(a - b) for a, b
                                                in zip(s.ravel(), t.ravel())])))
    assert np.isclose(mae(s, t), mae(1 - s, 1 - t))
    with pytest.raises(MetricInputError):
        mae(np.zeros((2, 2)), np.zeros((3, 3)))


# ---------------------------------------------------------- evaluate_set

def test_three_frame_report_matches_frozen_hand_computation():
    report = evaluate_set([s for s, _ in THREE_FRAMES],
                          [g for _, g in THREE_FRAMES])
    assert abs(report.max_f - THREE_FRAME_MAX_F) <= 1e-7
    assert abs(report.avg_f - THREE_FRAME_AVG_F) <= 1e-7
    assert abs(report.auc - THREE_FRAME_AUC) <= 1e-7
    assert abs(report.mae - THREE_FRAME_MAE) <= 1e-7
    assert report.frames == 3 and report.resized_frames == 0


def test_report_curves_match_loop_oracle_everywhere():
    maps = [s for s, _ in THREE_FRAMES]
    gts = [g for _, g in THREE_FRAMES]
    P, R, FPR, F = curves_loops(maps, gts)
    report = evaluate_set(maps, gts)
    assert np.allclose(report.precision, P, atol=1e-12, rtol=0)
    assert np.allclose(report.recall, R, atol=1e-12, rtol=0)
    assert np.allclose(report.fpr, FPR, atol=1e-12, rtol=0)
    assert np.allclose(report.f, F, atol=1e-12, rtol=0)
    assert report.max_f == F.max() and report.avg_f == pytest.approx(F.mean())


def test_recall_and_fpr_are_non_increasing_in_threshold():
    rng = np.random.default_rng(6)
    maps = [rng.integers(0, 256, (8, 8)).astype(np.uint8) for _ in range(4)]
    gts = [(rng.random((8, 8)) < 0.5).astype(int) for _ in range(4)]
    report = evaluate_set(maps, gts)
    assert np.all(np.diff(report.recall) <= 0)
    assert np.all(np.diff(report.fpr) <= 0)


def test_duplicated_frame_leaves_report_unchanged():
    s, g = THREE_FRAMES[1]
    one = evaluate_set([s], [g])
    two = evaluate_set([s, s], [g, g])
    assert np.allclose(one.f, two.f, atol=1e-15, rtol=0)
    assert one.max_f == two.max_f and one.auc == two.auc and one.mae == two.mae


def test_float_maps_and_resizing():
    g = np.zeros((16, 16), dtype=int)
    g[4:12, 4:12] = 1
    small = resize_bilinear(g.astype(float), 8, 8)
    report = evaluate_set([small], [g])
    assert report.resized_frames == 1
    assert report.max_f > 0.8
    with pytest.raises(MetricInputError):
        evaluate_set([g.astype(float) * 2], [g])


def test_evaluate_set_rejects_misaligned_inputs():
    s, g = THREE_FRAMES[0]
    with pytest.raises(MetricInputError):
        evaluate_set([s], [g, g])
    with pytest.raises(MetricInputError):
        evaluate_set([], [])


# ----------------------------------------------------------------- resize

def test_resize_preserves_constants_and_shape():
    c = np.full((5, 7), 0.3)
    up = resize_bilinear(c, 11, 13)
    assert up.shape == (11, 13) and np.allclose(up, 0.3)
    assert resize_nearest(c, 3, 4).shape == (3, 4)


def test_resize_nearest_exact_on_integer_upscale():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    up = resize_nearest(a, 4, 4)
    assert np.array_equal(up, np.repeat(np.repeat(a, 2, 0), 2, 1))


def test_resize_bilinear_keeps_row_structure():
    a = np.array([[0.0, 1.0], [0.0, 1.0]])
    up = resize_bilinear(a, 4, 8)
    assert np.allclose(up[0], up[-1])
    assert np.all(np.diff(up[0]) >= 0)


# ------------------------------------------------------------------ files

def test_csv_and_summary_writers(tmp_path):
    maps = [s for s, _ in THREE_FRAMES]
    gts = [g for _, g in THREE_FRAMES]
    report = evaluate_set(maps, gts)

    pr = tmp_path / "pr_curve.csv"
    write_pr_csv(pr, report)
    lines = pr.read_text().splitlines()
    assert lines[0] == "threshold,precision,recall,F" and len(lines) == 257
    t, p, r, f = lines[129].split(",")
    assert int(t) == 128
    assert np.isclose(float(p), report.precision[128], atol=1e-9)
    assert np.isclose(float(f), report.f[128], atol=1e-9)

    roc = tmp_path / "roc_curve.csv"
    write_roc_csv(roc, report)
    lines = roc.read_text().splitlines()
    assert lines[0] == "threshold,FPR,TPR" and len(lines) == 257

    out = tmp_path / "summary.txt"
    write_summary(out, report)
    text = out.read_text()
    assert f"maxF:  {report.max_f:.5f}" in text
    assert f"MAE:   {report.mae:.5f}" in text
