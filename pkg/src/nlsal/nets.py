"""Static and dynamic saliency networks.

Both share one fully-convolutional body: a 5-block VGG-style encoder
(each block = stacked 3x3 conv+ReLU layers, then 2x2 max pooling), an
optional run of non-local blocks after encoder block 3, 4 or 5, and a
5-stage stride-2 transposed-conv decoder with channel-concatenated skip
connections, finished by a 1x1 sigmoid head. The static net reads a
3-channel frame; the dynamic net reads 7 channels: two consecutive
frames plus the static net's map for the first of them.

Inputs of arbitrary size are replicate-padded up to a multiple of 32
(five halvings) and the output is cropped back.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nonlocal_block import (
    EMBED_ACTIVATIONS,
    NonLocalParams,
    init_nonlocal_params,
    nl_block,
)
from .tensor import ShapeError, Tensor

CONV_KERNEL = 3
DECODER_KERNEL = 4
DECODER_STRIDE = 2
POOL_WINDOW = 2
SIZE_MULTIPLE = 2 ** 5  # one halving per encoder block

DESK_WIDTHS = ((2, 16), (2, 32), (2, 64), (2, 128), (2, 128))
VGG_WIDTHS = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description; all fields are plain data."""

    input_channels: int = 3
    encoder_blocks: tuple = DESK_WIDTHS
    nl_after_block: int = 5
    nl_count: int = 3
    embed_activation: str = "linear"
    decoder_stages: int = 5

    def __post_init__(self):
        if self.input_channels not in (3, 7):
            raise ValueError(f"input_channels must be 3 or 7, got {self.input_channels}")
        blocks = tuple((int(n), int(w)) for n, w in self.encoder_blocks)
        object.__setattr__(self, "encoder_blocks", blocks)
        if self.decoder_stages != 5 or len(blocks) != 5:
            raise ValueError("the architecture is fixed at 5 encoder blocks / 5 decoder stages")
        for n, w in blocks:
            if n < 1 or w < 1:
                raise ValueError(f"bad encoder block ({n}, {w})")
        if self.nl_after_block not in (3, 4, 5):
            raise ValueError(f"nl_after_block must be 3, 4 or 5, got {self.nl_after_block}")
        if not 0 <= self.nl_count <= 5:
            raise ValueError(f"nl_count must be in 0..5, got {self.nl_count}")
        if self.embed_activation not in EMBED_ACTIVATIONS:
            raise ValueError(f"unknown embed_activation {self.embed_activation!r}")

    @property
    def widths(self):
        return tuple(w for _, w in self.encoder_blocks)

    def to_config(self):
        return {
            "input_channels": str(self.input_channels),
            "encoder_blocks": ",".join(f"{n}x{w}" for n, w in self.encoder_blocks),
            "nl_after_block": str(self.nl_after_block),
            "nl_count": str(self.nl_count),
            "embed_activation": self.embed_activation,
        }

    @classmethod
    def from_config(cls, mapping):
        kw = {}
        if "input_channels" in mapping:
            kw["input_channels"] = int(mapping["input_channels"])
        if "encoder_blocks" in mapping:
            blocks = []
            for part in mapping["encoder_blocks"].split(","):
                n, _, w = part.strip().partition("x")
                blocks.append((int(n), int(w)))
            kw["encoder_blocks"] = tuple(blocks)
        if "nl_after_block" in mapping:
            kw["nl_after_block"] = int(mapping["nl_after_block"])
        if "nl_count" in mapping:
            kw["nl_count"] = int(mapping["nl_count"])
        if "embed_activation" in mapping:
            kw["embed_activation"] = mapping["embed_activation"]
        return cls(**kw)


class Network:
    """A NetworkSpec plus its named parameter tensors.

    Parameter names are stable and unique:
      enc{b}.conv{i}.w / .b     encoder block b, layer i (1-based)
      nl{n}.theta/phi/g/z       n-th non-local block (1-based)
      dec{l}.w / .b             decoder stage l, 5 = coarsest
      head.w / .b               1x1 sigmoid head
    """

    def __init__(self, spec, params, nl_groups):
        self.spec = spec
        self.params = params
        self.nl_groups = nl_groups

    def parameters(self):
        return self.params

    def state_arrays(self):
        return {name: p.data for name, p in self.params.items()}

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    def param_count(self):
        return sum(p.size for p in self.params.values())

    def load_state(self, arrays):
        """Copy a loaded weight dict into the parameters, strictly.

        Shapes are compared after rank-4 promotion; any mismatch, missing
        entry, or stray entry is rejected naming the offending parameter.
        """
        from .weights import promote_shape

        stray = set(arrays) - set(self.params)
        if stray:
            raise ShapeError(f"weight file has unknown parameter {sorted(stray)[0]!r}")
        for name, p in self.params.items():
            if name not in arrays:
                raise ShapeError(f"weight file is missing parameter {name!r}")
            arr = arrays[name]
            want = promote_shape(p.shape)
            if tuple(arr.shape) != want:
                raise ShapeError(
                    f"parameter {name!r}: file shape {tuple(arr.shape)} "
                    f"does not match expected {want}"
                )
            p.data[...] = np.asarray(arr, dtype=p.data.dtype).reshape(p.shape)


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape))


def _build(spec, seed):
    rng = np.random.default_rng(seed)
    params = {}

    cin = spec.input_channels
    for b, (layers, width) in enumerate(spec.encoder_blocks, start=1):
        for i in range(1, layers + 1):
            shape = (CONV_KERNEL, CONV_KERNEL, cin, width)
            params[f"enc{b}.conv{i}.w"] = _he_uniform(rng, shape, CONV_KERNEL ** 2 * cin)
            params[f"enc{b}.conv{i}.b"] = Tensor(np.zeros(width))
            cin = width

    nl_groups = []
    nl_channels = spec.widths[spec.nl_after_block - 1]
    for n in range(1, spec.nl_count + 1):
        group = init_nonlocal_params(
            nl_channels, rng=rng, embed_activation=spec.embed_activation
        )
        params[f"nl{n}.theta"] = group.w_theta
        params[f"nl{n}.phi"] = group.w_phi
        params[f"nl{n}.g"] = group.w_g
        params[f"nl{n}.z"] = group.w_z
        nl_groups.append(group)

    widths = spec.widths
    up = widths[4]
    for l in range(5, 0, -1):
        dout = widths[l - 1]
        din = up if l == 5 else up + widths[l - 1]
        shape = (DECODER_KERNEL, DECODER_KERNEL, dout, din)
        params[f"dec{l}.w"] = _he_uniform(rng, shape, DECODER_KERNEL ** 2 * din)
        params[f"dec{l}.b"] = Tensor(np.zeros(dout))
        up = dout

    params["head.w"] = _he_uniform(rng, (1, 1, widths[0], 1), widths[0])
    params["head.b"] = Tensor(np.zeros(1))
    return Network(spec, params, nl_groups)


def build_static_net(spec=None, seed=0):
    spec = spec or NetworkSpec()
    if spec.input_channels != 3:
        raise ValueError("static net requires input_channels=3")
    return _build(spec, seed)


def build_dynamic_net(spec=None, seed=0):
    spec = spec or NetworkSpec(input_channels=7)
    if spec.input_channels != 7:
        raise ValueError("dynamic net requires input_channels=7")
    return _build(spec, seed)


def pad_amounts(h, w, multiple=SIZE_MULTIPLE):
    """(bottom, right) replicate padding taking h x w to the next multiple."""
    return (-h) % multiple, (-w) % multiple


def network_forward(net, x):
    """Run the full body on a 1xhxwxC tensor; returns a 1xhxwx1 map."""
    x = T.as_tensor(x)
    spec = net.spec
    if x.ndim != 4 or x.shape[0] != 1:
        raise ShapeError(f"expected a 1xhxwxC input, got {x.shape}")
    if x.shape[3] != spec.input_channels:
        raise ShapeError(
            f"input has {x.shape[3]} channels, network expects {spec.input_channels}"
        )
    _, h, w, _ = x.shape
    pb, pr = pad_amounts(h, w)
    cur = T.replicate_pad(x, pb, pr)

    p = net.params
    skips = []
    for b, (layers, _) in enumerate(spec.encoder_blocks, start=1):
        for i in range(1, layers + 1):
            cur = T.relu(T.conv2d(cur, p[f"enc{b}.conv{i}.w"], p[f"enc{b}.conv{i}.b"]))
        cur = T.maxpool2d(cur, POOL_WINDOW)
        if b == spec.nl_after_block:
            for group in net.nl_groups:
                cur = nl_block(cur, group)
        skips.append(cur)

    out = skips[4]
    for l in range(5, 0, -1):
        if l < 5:
            out = T.concat_channels([out, skips[l - 1]])
        out = T.relu(
            T.conv2d_transpose(out, p[f"dec{l}.w"], p[f"dec{l}.b"], stride=DECODER_STRIDE)
        )
    s = T.sigmoid(T.conv2d(out, p["head.w"], p["head.b"]))
    return T.crop(s, h, w)


def static_forward(net, frame):
    """Saliency map for one RGB frame."""
    if net.spec.input_channels != 3:
        raise ShapeError("static_forward needs a 3-channel network")
    return network_forward(net, frame)


def dynamic_forward(net, frame_t, frame_t1, static_map):
    """Saliency map for frame t given its successor and the static map.

    The three inputs are concatenated along channels in this exact order.
    """
    if net.spec.input_channels != 7:
        raise ShapeError("dynamic_forward needs a 7-channel network")
    frame_t = T.as_tensor(frame_t)
    frame_t1 = T.as_tensor(frame_t1)
    static_map = T.as_tensor(static_map)
    for name, t, c in (
        ("frame_t", frame_t, 3),
        ("frame_t1", frame_t1, 3),
        ("static_map", static_map, 1),
    ):
        if t.ndim != 4 or t.shape[0] != 1 or t.shape[3] != c:
            raise ShapeError(f"{name} must be 1xhxwx{c}, got {t.shape}")
    if not (frame_t.shape[1:3] == frame_t1.shape[1:3] == static_map.shape[1:3]):
        raise ShapeError(
            f"input sizes disagree: {frame_t.shape}, {frame_t1.shape}, {static_map.shape}"
        )
    stacked = T.concat_channels([frame_t, frame_t1, static_map])
    return network_forward(net, stacked)
