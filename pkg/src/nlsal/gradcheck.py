"""Finite-difference verification of every differentiable operation.

Each named check builds a deterministic scalar loss, runs one tape
backward, then compares every input's analytic gradient against central
differences. The worst relative error across inputs is reported; the
suite passes at rel. err <= 1e-5 in double precision.
"""

import numpy as np

from . import tensor as T
from .nets import NetworkSpec, build_static_net, static_forward
from .nonlocal_block import nl_attend, nl_block
from .tensor import Tape, Tensor
from .train import cross_entropy_loss

TOLERANCE = 1e-5


def max_rel_err(build, tensors):
    """Worst relative gradient error of `build()` over `tensors`.

    `build` must be a deterministic closure over exactly these tensors;
    finite_diff_grad perturbs their data in place.
    """
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        loss = build()
    T.backward(tape, loss)
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = T.finite_diff_grad(lambda _: float(build().data), t)
        denom = np.max(np.abs(numeric.data)) + 1e-12
        worst = max(worst, float(np.max(np.abs(analytic - numeric.data)) / denom))
    return worst


def _wrap(out):
    return T.sum_all(T.sigmoid(out))


def _check_conv2d(rng):
    x = Tensor(rng.normal(size=(1, 6, 5, 2)))
    k = Tensor(rng.normal(size=(3, 3, 2, 3)))
    b = Tensor(rng.normal(size=3))
    return lambda: _wrap(T.conv2d(x, k, b, stride=1, padding="same")), [x, k, b]


def _check_conv2d_strided_valid(rng):
    x = Tensor(rng.normal(size=(1, 7, 6, 2)))
    k = Tensor(rng.normal(size=(3, 3, 2, 2)))
    b = Tensor(rng.normal(size=2))
    return lambda: _wrap(T.conv2d(x, k, b, stride=2, padding="valid")), [x, k, b]


def _check_conv2d_transpose(rng):
    x = Tensor(rng.normal(size=(1, 3, 4, 2)))
    k = Tensor(rng.normal(size=(4, 4, 3, 2)))
    b = Tensor(rng.normal(size=3))
    return lambda: _wrap(T.conv2d_transpose(x, k, b, stride=2)), [x, k, b]


def _check_maxpool2d(rng):
    x = Tensor(rng.normal(size=(1, 5, 6, 2)) * 3)
    return lambda: _wrap(T.maxpool2d(x, 2)), [x]


def _check_relu(rng):
    x = Tensor(rng.normal(size=(1, 4, 4, 3)) + 0.05)
    return lambda: _wrap(T.relu(x)), [x]


def _check_sigmoid(rng):
    x = Tensor(rng.normal(size=(1, 4, 5, 2)))
    return lambda: T.sum_all(T.sigmoid(x)), [x]


def _check_softmax_rows(rng):
    x = Tensor(rng.normal(size=(4, 7)))
    w = Tensor(rng.normal(size=(7, 3)))
    return lambda: _wrap(T.matmul(T.softmax_rows(x), w)), [x, w]


def _check_matmul(rng):
    a = Tensor(rng.normal(size=(4, 3)))
    b = Tensor(rng.normal(size=(3, 5)))
    return lambda: _wrap(T.matmul(a, b)), [a, b]


def _check_add(rng):
    a = Tensor(rng.normal(size=(1, 3, 4, 2)))
    b = Tensor(rng.normal(size=(1, 3, 4, 2)))
    return lambda: _wrap(T.add(a, b)), [a, b]


def _check_concat_channels(rng):
    a = Tensor(rng.normal(size=(1, 3, 3, 2)))
    b = Tensor(rng.normal(size=(1, 3, 3, 3)))
    return lambda: _wrap(T.concat_channels([a, b])), [a, b]


def _check_replicate_pad(rng):
    x = Tensor(rng.normal(size=(1, 3, 4, 2)))
    return lambda: _wrap(T.replicate_pad(x, 2, 3)), [x]


def _check_crop(rng):
    x = Tensor(rng.normal(size=(1, 5, 6, 2)))
    return lambda: _wrap(T.crop(x, 3, 4)), [x]


def _check_reshape_transpose(rng):
    x = Tensor(rng.normal(size=(1, 3, 4, 2)))
    return lambda: _wrap(T.transpose2d(T.reshape(x, (6, 4)))), [x]


def _check_sum_all(rng):
    x = Tensor(rng.normal(size=(1, 3, 3, 2)))
    return lambda: T.sum_all(T.sigmoid(x)), [x]


def _nl_params(rng, c=3, ce=2, activation="linear"):
    from .nonlocal_block import NonLocalParams

    return NonLocalParams(
        w_theta=Tensor(rng.normal(size=(1, 1, c, ce)) * 0.4),
        w_phi=Tensor(rng.normal(size=(1, 1, c, ce)) * 0.4),
        w_g=Tensor(rng.normal(size=(1, 1, c, ce)) * 0.4),
        w_z=Tensor(rng.normal(size=(1, 1, ce, c)) * 0.4),
        embed_activation=activation,
    )


def _check_nl_attend(rng):
    params = _nl_params(rng)
    x = Tensor(rng.normal(size=(1, 3, 3, 3)))
    tensors = [x, params.w_theta, params.w_phi, params.w_g]
    return lambda: _wrap(nl_attend(x, params)[0]), tensors


def _check_nl_block(rng):
    params = _nl_params(rng)
    x = Tensor(rng.normal(size=(1, 3, 3, 3)))
    tensors = [x, params.w_theta, params.w_phi, params.w_g, params.w_z]
    return lambda: _wrap(nl_block(x, params)), tensors


def _check_nl_block_rectified(rng):
    params = _nl_params(rng, activation="rectified")
    x = Tensor(rng.normal(size=(1, 3, 3, 3)))
    tensors = [x, params.w_theta, params.w_phi, params.w_g, params.w_z]
    return lambda: _wrap(nl_block(x, params)), tensors


def _check_cross_entropy(rng):
    # keep the map well inside the clamp so the fused gradient is live
    s = Tensor(rng.uniform(0.05, 0.95, size=(1, 4, 4, 1)))
    gt = (rng.uniform(size=(4, 4)) > 0.5).astype(float)
    return lambda: cross_entropy_loss(s, gt), [s]


TINY_SPEC = NetworkSpec(
    encoder_blocks=((1, 2), (1, 2), (1, 3), (1, 3), (1, 3)),
    nl_after_block=3,
    nl_count=1,
)


def _check_static_net_full(rng):
    """The whole static pipeline on a 16x16 input: pad, encoder, non-local
    block, skip decoder, head, loss. Every parameter plus the input."""
    net = build_static_net(TINY_SPEC, seed=int(rng.integers(2 ** 31)))
    x = Tensor(rng.uniform(0.0, 1.0, size=(1, 16, 16, 3)))
    gt = (rng.uniform(size=(16, 16)) > 0.5).astype(float)
    tensors = list(net.params.values()) + [x]
    return lambda: cross_entropy_loss(static_forward(net, x), gt), tensors


CHECKS = [
    ("conv2d", _check_conv2d),
    ("conv2d_strided_valid", _check_conv2d_strided_valid),
    ("conv2d_transpose", _check_conv2d_transpose),
    ("maxpool2d", _check_maxpool2d),
    ("relu", _check_relu),
    ("sigmoid", _check_sigmoid),
    ("softmax_rows", _check_softmax_rows),
    ("matmul", _check_matmul),
    ("add", _check_add),
    ("concat_channels", _check_concat_channels),
    ("replicate_pad", _check_replicate_pad),
    ("crop", _check_crop),
    ("reshape_transpose", _check_reshape_transpose),
    ("sum_all", _check_sum_all),
    ("nl_attend", _check_nl_attend),
    ("nl_block", _check_nl_block),
    ("nl_block_rectified", _check_nl_block_rectified),
    ("cross_entropy_loss", _check_cross_entropy),
    ("static_net_full", _check_static_net_full),
]


def run_all(seed=0, tolerance=TOLERANCE):
    """Returns [(name, max_rel_err, passed)] for every registered check."""
    results = []
    for name, factory in CHECKS:
        rng = np.random.default_rng([seed, len(results)])
        build, tensors = factory(rng)
        err = max_rel_err(build, tensors)
        results.append((name, err, err <= tolerance))
    return results


def report(results, tolerance=TOLERANCE):
    lines = []
    for name, err, passed in results:
        status = "PASS" if passed else "FAIL"
        lines.append(f"{status}  {name:<24} max rel err {err:.3e}  (tol {tolerance:g})")
    failed = sum(1 for _, _, p in results if not p)
    lines.append(
        f"{len(results) - failed}/{len(results)} gradient checks passed"
        + ("" if failed == 0 else f", {failed} FAILED")
    )
    return "\n".join(lines)
