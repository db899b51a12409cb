"""Placement/count sweep for non-local blocks: accuracy and forward cost.

The attention matrix is quadratic in the number of spatial positions, so
the earlier a block sits in the encoder (larger feature maps), the more a
forward pass costs; the sweep measures that, and optionally trains each
variant briefly for an MAE column.
"""

import gc
import time
from dataclasses import dataclass, replace

import numpy as np

from .nets import NetworkSpec, build_static_net, static_forward
from .tensor import Tensor

AFTER_BLOCKS = (3, 4, 5)
COUNTS = (1, 2, 3, 4, 5)


@dataclass
class AblationRow:
    nl_after_block: int
    nl_count: int
    mae: float
    mean_forward_s: float


def interleaved_forward_times(nets, frame, reps=3):
    """Per-net mean wall-clock seconds per forward pass, warm-up excluded.

    Every net is warmed once, then each timing round visits every net;
    the starting net rotates between rounds so no variant always pays the
    round-start cache penalty.  Garbage collection is paused over the
    timed section.  Interleaving matters on a busy host: timing variant A
    to completion and then variant B hands any slow drift in machine load
    straight to the A-vs-B comparison, while alternating them cancels it.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    x = Tensor(frame)
    for net in nets:
        static_forward(net, x)  # warm-up: allocator, caches
    times = [[] for _ in nets]
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for r in range(reps):
            for i in range(len(nets)):
                j = (r + i) % len(nets)
                t0 = time.perf_counter()
                static_forward(nets[j], x)
                times[j].append(time.perf_counter() - t0)
    finally:
        if was_enabled:
            gc.enable()
        gc.collect()
    return [float(np.mean(t)) for t in times]


def mean_forward_time(net, frame, reps=3):
    """Mean seconds per forward pass for a single net (see above)."""
    return interleaved_forward_times([net], frame, reps=reps)[0]


def train_mae(net, samples, train_cfg, seed):
    """Brief training, then MAE of the net's maps over the given samples."""
    from .metrics import mae
    from .train import train_stage

    if train_cfg.iterations > 0:
        train_stage(net, samples, train_cfg, seed=seed)
    errs = []
    for frame, mask in samples:
        s = static_forward(net, Tensor(frame)).data.reshape(mask.shape)
        errs.append(mae(s, mask.astype(float)))
    return float(np.mean(errs))


def ablation_sweep(base_spec, timing_frame, samples=None, train_cfg=None,
                   seed=0, reps=3, afters=AFTER_BLOCKS, counts=COUNTS,
                   include_baseline=True):
    """Rows over placements x counts; count 0 is the plain baseline net.

    Placement variants with the same count are timed together in
    interleaved rounds: the comparison the sweep exists for is earlier
    placement vs later placement at equal count, and those numbers have
    to come from the same stretch of wall clock to mean anything.
    """
    def make(after, count):
        spec = replace(base_spec, nl_after_block=after, nl_count=count)
        return build_static_net(spec, seed=[seed, after, count])

    rows = {}
    if include_baseline:
        after = base_spec.nl_after_block
        t = interleaved_forward_times([make(after, 0)], timing_frame, reps=reps)
        rows[(after, 0)] = AblationRow(after, 0, float("nan"), t[0])
    for count in counts:
        nets = [make(a, count) for a in afters]
        ts = interleaved_forward_times(nets, timing_frame, reps=reps)
        for after, t in zip(afters, ts):
            rows[(after, count)] = AblationRow(after, count, float("nan"), t)
    if samples is not None and train_cfg is not None:
        for (after, count), row in rows.items():
            net = make(after, count)
            row.mae = train_mae(net, samples, train_cfg,
                                seed=[seed, after, count, 1])
    return list(rows.values())


def _mae_cell(row):
    return "  ---  " if np.isnan(row.mae) else f"{row.mae:7.4f}"


def format_table(rows):
    """Placement columns, count rows; each cell = MAE, mean seconds."""
    by_key = {(r.nl_after_block, r.nl_count): r for r in rows}
    header = f"{'blocks':>6} | " + " | ".join(
        f"after block {a}:  MAE   time(s)" for a in AFTER_BLOCKS
    )
    lines = [header, "-" * len(header)]
    baseline = next((r for r in rows if r.nl_count == 0), None)
    if baseline is not None:
        lines.append(
            f"{0:>6} | no non-local blocks: MAE {_mae_cell(baseline).strip()}, "
            f"time {baseline.mean_forward_s:.4f}s"
        )
    for c in sorted({r.nl_count for r in rows if r.nl_count > 0}):
        cells = []
        for a in AFTER_BLOCKS:
            r = by_key.get((a, c))
            cells.append(" " * 26 if r is None else
                         f"{_mae_cell(r):>16} {r.mean_forward_s:9.4f}")
        lines.append(f"{c:>6} | " + " | ".join(cells))
    return "\n".join(lines)


def write_ablation_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("nl_after_block,nl_count,mae,mean_forward_s\n")
        for r in rows:
            m = "" if np.isnan(r.mae) else f"{r.mae:.10g}"
            fh.write(f"{r.nl_after_block},{r.nl_count},{m},{r.mean_forward_s:.6f}\n")
