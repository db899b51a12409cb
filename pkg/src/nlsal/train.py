"""Cross-entropy loss and SGD-with-momentum training for both stages."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nets import dynamic_forward, static_forward
from .tensor import ShapeError, Tape, Tensor

STAGES = ("static", "dynamic")


class TrainingError(RuntimeError):
    """Raised when an optimizer step must be rejected."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    iterations: int = 2000
    loss_clamp_eps: float = 1e-7
    stage: str = "static"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0,1), got {self.momentum}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if not 0 < self.loss_clamp_eps < 0.5:
            raise ValueError(
                f"loss_clamp_eps must be in (0, 0.5), got {self.loss_clamp_eps}"
            )
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")


class OptimizerState:
    """Per-parameter velocity buffers, zero at construction."""

    def __init__(self, params):
        self.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}


def cross_entropy_loss(s_map, gt, clamp_eps=1e-7):
    """Summed binary cross-entropy of a map against a {0,1} mask.

    The map is clamped to [eps, 1-eps] before the logs; inside the
    clamped region the gradient is exactly zero (the clamp is constant
    there). Recorded on the active tape as one fused operation.
    """
    s_map = T.as_tensor(s_map)
    gt = np.asarray(gt, dtype=np.float64)
    s = s_map.data.reshape(-1)
    g = gt.reshape(-1)
    if s_map.data.squeeze().shape != gt.squeeze().shape:
        raise ShapeError(
            f"map shape {s_map.shape} does not match ground truth {gt.shape}"
        )
    if not np.all((g == 0) | (g == 1)):
        raise ValueError("ground truth must be binary")
    sc = np.clip(s, clamp_eps, 1.0 - clamp_eps)
    value = -(g * np.log(sc) + (1.0 - g) * np.log(1.0 - sc)).sum()
    out = Tensor(value)

    def bwd():
        go = out.grad
        if go is None:
            return
        inside = (s >= clamp_eps) & (s <= 1.0 - clamp_eps)
        ds = np.where(inside, -(g / sc) + (1.0 - g) / (1.0 - sc), 0.0)
        s_map.accum_grad((float(go) * ds).reshape(s_map.shape))

    T._record(bwd)
    return out


def sgd_momentum_step(params, grads, state, cfg):
    """Classical heavy-ball update: v <- m*v + g; p <- p - lr*v.

    The step is all-or-nothing: every gradient is screened first, and a
    non-finite value anywhere rejects the whole step naming the parameter.
    """
    for name in params:
        if name not in grads:
            raise KeyError(f"no gradient supplied for parameter {name!r}")
        if grads[name].shape != params[name].data.shape:
            raise ShapeError(
                f"gradient shape {grads[name].shape} does not match "
                f"parameter {name!r} {params[name].data.shape}"
            )
        if not np.all(np.isfinite(grads[name])):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    for name, p in params.items():
        v = state.velocity[name]
        v *= cfg.momentum
        v += grads[name]
        p.data -= cfg.learning_rate * v


def _forward_sample(net, stage, sample):
    if stage == "static":
        frame, gt = sample
        return static_forward(net, Tensor(frame)), gt
    frame_t, frame_t1, s_t, gt = sample
    return dynamic_forward(net, Tensor(frame_t), Tensor(frame_t1), Tensor(s_t)), gt


def train_stage(net, samples, cfg, seed=0, checkpoint_every=0, checkpoint_fn=None):
    """Run cfg.iterations single-sample SGD steps; returns the loss trace.

    Samples for the static stage are (frame, mask) pairs; for the dynamic
    stage, (frame_t, frame_t1, static_map, mask) with the static map
    precomputed by the frozen static net. Sample order is drawn from a
    seeded generator, so a (net seed, data, train seed) triple fixes the
    whole run. `checkpoint_fn(iteration)` fires every `checkpoint_every`
    iterations when configured.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("training requires a non-empty sample list")
    expected = 2 if cfg.stage == "static" else 4
    for s in samples:
        if len(s) != expected:
            raise ValueError(
                f"{cfg.stage} stage expects {expected}-tuples, got {len(s)} fields"
            )
    rng = np.random.default_rng(seed)
    state = OptimizerState(net.params)
    trace = []
    for it in range(1, cfg.iterations + 1):
        sample = samples[int(rng.integers(len(samples)))]
        net.zero_grads()
        with Tape() as tape:
            s_map, gt = _forward_sample(net, cfg.stage, sample)
            loss = cross_entropy_loss(s_map, gt, clamp_eps=cfg.loss_clamp_eps)
        grads = T.backward(tape, loss, params=net.params)
        sgd_momentum_step(net.params, grads, state, cfg)
        trace.append((it, float(loss.data)))
        if checkpoint_every and checkpoint_fn and it % checkpoint_every == 0:
            checkpoint_fn(it)
    return trace


def write_loss_trace(path, trace):
    """Two-column plain text: iteration, loss."""
    with open(path, "w") as fh:
        for it, loss in trace:
            fh.write(f"{it}\t{loss:.17g}\n")
