"""Embedded-Gaussian non-local saliency block.

Every spatial position attends to every other: pairwise affinities are
exponentials of embedded dot products, row-normalized into an attention
matrix, and used to mix a third embedding of the input. A final 1x1
projection plus residual sum lets a zero-initialized block drop into a
trained network without changing it.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    _record,
    add,
    as_tensor,
    conv2d,
    matmul,
    relu,
    reshape,
    softmax_rows,
    transpose2d,
)

EMBED_ACTIVATIONS = ("linear", "rectified")


def default_embed_channels(channels):
    """Embedding width: half the input channels, rounded up."""
    return (channels + 1) // 2


@dataclass
class NonLocalParams:
    """Four bias-free 1x1 projections.

    w_theta, w_phi, w_g map C -> C_e; w_z maps C_e back to C so the
    residual sum is well-formed. embed_activation selects whether the
    three embeddings pass through a ReLU ('rectified') or not ('linear',
    the default; the output projection w_z is never rectified, otherwise
    a zero w_z could not guarantee the identity insertion).
    """

    w_theta: Tensor
    w_phi: Tensor
    w_g: Tensor
    w_z: Tensor
    embed_activation: str = "linear"

    def __post_init__(self):
        self.w_theta = as_tensor(self.w_theta)
        self.w_phi = as_tensor(self.w_phi)
        self.w_g = as_tensor(self.w_g)
        self.w_z = as_tensor(self.w_z)
        if self.embed_activation not in EMBED_ACTIVATIONS:
            raise ValueError(
                f"embed_activation must be one of {EMBED_ACTIVATIONS}, "
                f"got {self.embed_activation!r}"
            )
        for name, k in self.named_kernels():
            if k.ndim != 4 or k.shape[:2] != (1, 1):
                raise ShapeError(f"{name} must be a 1x1 kernel, got {k.shape}")
        if self.w_theta.shape != self.w_phi.shape:
            raise ShapeError(
                f"w_theta {self.w_theta.shape} and w_phi {self.w_phi.shape} differ"
            )
        c, ce = self.channels, self.embed_channels
        if self.w_g.shape != (1, 1, c, ce):
            raise ShapeError(f"w_g shape {self.w_g.shape} != (1, 1, {c}, {ce})")
        if self.w_z.shape != (1, 1, ce, c):
            raise ShapeError(f"w_z shape {self.w_z.shape} != (1, 1, {ce}, {c})")

    @property
    def channels(self):
        return self.w_theta.shape[2]

    @property
    def embed_channels(self):
        return self.w_theta.shape[3]

    def named_kernels(self):
        return [
            ("theta", self.w_theta),
            ("phi", self.w_phi),
            ("g", self.w_g),
            ("z", self.w_z),
        ]


def init_nonlocal_params(channels, embed_channels=None, rng=None,
                         embed_activation="linear"):
    """Fan-in-scaled uniform embeddings; w_z starts at zero so a fresh
    block is an exact identity."""
    if embed_channels is None:
        embed_channels = default_embed_channels(channels)
    if rng is None:
        rng = np.random.default_rng(0)
    limit = np.sqrt(6.0 / channels)

    def draw(cin, cout):
        return Tensor(rng.uniform(-limit, limit, size=(1, 1, cin, cout)))

    return NonLocalParams(
        w_theta=draw(channels, embed_channels),
        w_phi=draw(channels, embed_channels),
        w_g=draw(channels, embed_channels),
        w_z=Tensor(np.zeros((1, 1, embed_channels, channels))),
        embed_activation=embed_activation,
    )


def _check_input(x, params):
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[0] != 1:
        raise ShapeError(f"non-local input must be 1xHxWxC, got {x.shape}")
    if x.shape[3] != params.channels:
        raise ShapeError(
            f"input has {x.shape[3]} channels, params expect {params.channels}"
        )
    return x


def _embed(x, kernel, params):
    e = conv2d(x, kernel, bias=None, stride=1, padding="same")
    if params.embed_activation == "rectified":
        e = relu(e)
    return e


def nl_attend(x, params):
    """Attention mixing: returns (y, attention).

    attention is (H*W) x (H*W), rows indexed by query position in
    row-major order, each row a softmax over all key positions;
    y[i,j] = sum over keys of attention * g(x).
    """
    x = _check_input(x, params)
    _, h, w, _ = x.shape
    ce = params.embed_channels
    hw = h * w

    theta = reshape(_embed(x, params.w_theta, params), (hw, ce))
    phi = reshape(_embed(x, params.w_phi, params), (hw, ce))
    gx = reshape(_embed(x, params.w_g, params), (hw, ce))

    attention = softmax_rows(matmul(theta, transpose2d(phi)))
    y = reshape(matmul(attention, gx), (1, h, w, ce))
    return y, attention


def nl_block(x, params):
    """Full residual block: z = w_z * y + x, same shape as x."""
    x = _check_input(x, params)
    if not np.any(params.w_z.data):
        # exact identity: skip the arithmetic entirely so z == x bit-for-bit
        # (and w_z still trains, because grad of z w.r.t. w_z at 0 is y,
        # which the explicit branch below provides whenever w_z moves)
        y, _ = nl_attend(x, params)
        zero = conv2d(y, params.w_z, bias=None, stride=1, padding="same")
        return add_identity(x, zero)
    y, _ = nl_attend(x, params)
    return add(conv2d(y, params.w_z, bias=None, stride=1, padding="same"), x)


def add_identity(x, delta):
    """x + delta where delta is known to be exactly zero-valued.

    Forward passes x through untouched (bit-for-bit); backward still
    routes gradients into both operands so w_z receives its update.
    """
    if x.shape != delta.shape:
        raise ShapeError(f"add shapes differ: {x.shape} vs {delta.shape}")
    out = Tensor(x.data.copy())

    def bwd():
        g = out.grad
        if g is None:
            return
        x.accum_grad(g)
        delta.accum_grad(g)

    _record(bwd)
    return out


def nl_oracle(x, params):
    """Brute-force reference: explicit loops and raw exponentials.

    Quadratic in positions; intended for small inputs only. Pure numpy,
    no tape participation.
    """
    x = _check_input(x, params)
    _, h, w, c = x.shape
    ce = params.embed_channels
    if h * w > 256:
        raise ValueError(f"oracle limited to H*W <= 256, got {h * w}")

    wt = params.w_theta.data.reshape(c, ce)
    wp = params.w_phi.data.reshape(c, ce)
    wg = params.w_g.data.reshape(c, ce)

    def emb(vec, m):
        e = m.T @ vec
        if params.embed_activation == "rectified":
            e = np.maximum(e, 0.0)
        return e

    y = np.zeros((1, h, w, ce))
    for i in range(h):
        for j in range(w):
            q = emb(x.data[0, i, j], wt)
            weights = np.zeros((h, w))
            for k in range(h):
                for l in range(w):
                    weights[k, l] = np.exp(q @ emb(x.data[0, k, l], wp))
            norm = weights.sum()
            for k in range(h):
                for l in range(w):
                    y[0, i, j] += (weights[k, l] / norm) * emb(x.data[0, k, l], wg)
    return Tensor(y)
