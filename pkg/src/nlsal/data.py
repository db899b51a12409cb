"""Frame and mask ingestion, sequence pairing, manifests, synthetic data.

Datasets follow a directory convention: `<root>/<sequence>/frames/*` for
RGB frames and `<root>/<sequence>/gt/*` for masks, matched by shared
numeric stem (so `00009` and `9` refer to the same frame index). Within a
sequence, frames are ordered by that numeric index, not lexicographically.
"""

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .metrics import resize_bilinear, resize_nearest
from .tensor import Tensor

FRAME_SUFFIXES = (".png", ".ppm", ".pgm", ".bmp")


class DataError(ValueError):
    """Raised for unreadable or inconsistent dataset inputs."""


# --- single-file loaders -------------------------------------------------


def _open_image(path):
    try:
        img = Image.open(path)
        img.load()
        return img
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None


def load_frame(path):
    """8-bit RGB image -> Tensor[1xhxwx3] of doubles in [0,1]."""
    img = _open_image(path)
    if img.mode in ("I", "I;16", "F"):
        raise DataError(f"{path}: expected 8-bit RGB, got mode {img.mode}")
    if img.mode != "RGB":
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return Tensor(arr[None, :, :, :])


def save_frame(path, frame):
    """Write [0,1] doubles as an 8-bit RGB image (PNG or PPM by suffix)."""
    arr = np.asarray(frame, dtype=float)
    if arr.ndim == 4:
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"frame to save must be hxwx3, got {arr.shape}")
    Image.fromarray(np.rint(arr * 255.0).astype(np.uint8), "RGB").save(path)


def load_map_bytes(path):
    """8-bit grayscale saliency map -> uint8 (h, w)."""
    img = _open_image(path)
    if img.mode not in ("L", "P"):
        img = img.convert("L")
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise DataError(f"{path}: expected an 8-bit grayscale map")
    return arr.copy()


def save_map(path, s_norm):
    """Write a [0,1] map as 8-bit grayscale, values round(255*s)."""
    arr = np.asarray(s_norm, dtype=float)
    arr = arr.reshape(arr.shape[-3:-1] if arr.ndim == 4 else arr.shape[:2])
    Image.fromarray(np.rint(arr * 255.0).astype(np.uint8), "L").save(path)


def load_groundtruth(path, flatten=False):
    """Binary mask from an 8-bit grayscale or indexed annotation.

    flatten=True treats every nonzero label as foreground (multi-object
    annotations collapsed to one figure); flatten=False thresholds gray
    values at 128.
    """
    img = _open_image(path)
    if img.mode == "P":
        arr = np.asarray(img)  # palette indices are the labels
    else:
        if img.mode != "L":
            img = img.convert("L")
        arr = np.asarray(img)
    if flatten:
        return (arr != 0).astype(np.uint8)
    return (arr >= 128).astype(np.uint8)


# --- sequences and pairing ------------------------------------------------


_DIGITS = re.compile(r"(\d+)")


def stem_key(name):
    """Sort key: last digit run as an integer, then the stem itself."""
    stem = Path(name).stem
    runs = _DIGITS.findall(stem)
    if runs:
        return (0, int(runs[-1]), stem)
    return (1, 0, stem)


def stem_id(name):
    """Canonical identity for frame/gt matching across zero padding."""
    stem = Path(name).stem
    runs = _DIGITS.findall(stem)
    return str(int(runs[-1])) if runs else stem


@dataclass(frozen=True)
class SampleRecord:
    """One training/inference sample: a consecutive frame pair plus the
    ground truth of the first frame ('-' when absent)."""

    seq_id: str
    frame_t: str
    frame_t1: str
    gt: str = None


@dataclass
class Sequence:
    seq_id: str
    frames: list  # of (frame path, gt path or None), consecutive order


@dataclass
class FrameSet:
    sequences: list

    def records(self):
        out = []
        for seq in self.sequences:
            out.extend(pair_consecutive(seq))
        return out


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        return []
    files = [p for p in directory.iterdir()
             if p.suffix.lower() in FRAME_SUFFIXES and p.is_file()]
    return sorted(files, key=lambda p: stem_key(p.name))


def scan_dataset(root):
    """Build a FrameSet from the directory convention under `root`."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    sequences = []
    for seq_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        frames = list_images(seq_dir / "frames")
        if not frames:
            continue
        gts = {stem_id(p.name): p for p in list_images(seq_dir / "gt")}
        pairs = [(str(f), str(gts[stem_id(f.name)]) if stem_id(f.name) in gts else None)
                 for f in frames]
        sequences.append(Sequence(seq_id=seq_dir.name, frames=pairs))
    if not sequences:
        raise DataError(f"no sequences with frames found under {root}")
    return FrameSet(sequences)


def pair_consecutive(sequence):
    """n frames -> n (I_t, I_t+1, G_t) records; the last frame self-pairs.

    Frames without annotation still serve as I_t+1 context but produce no
    training sample themselves (their record carries gt=None).
    """
    frames = sequence.frames
    if not frames:
        raise DataError(f"sequence {sequence.seq_id!r} is empty")
    records = []
    for i, (frame, gt) in enumerate(frames):
        nxt = frames[i + 1][0] if i + 1 < len(frames) else frame
        records.append(SampleRecord(sequence.seq_id, frame, nxt, gt))
    return records


# --- manifests -------------------------------------------------------------


def write_manifest(path, records):
    with open(path, "w") as fh:
        for r in records:
            gt = r.gt if r.gt else "-"
            fh.write(f"{r.seq_id}\t{r.frame_t}\t{r.frame_t1}\t{gt}\n")


def read_manifest(path):
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
            seq_id, frame_t, frame_t1, gt = parts
            records.append(
                SampleRecord(seq_id, frame_t, frame_t1, None if gt == "-" else gt)
            )
    return records


# --- synthetic sequences ----------------------------------------------------


SQUARE_COLOR = np.array([1.0, 0.95, 0.80])


def synth_frames(frames=20, size=64, motion=2, seed=0, distractor=False,
                 sequences=1):
    """Seeded sequences of a bright square sliding over a static texture.

    Returns a list of dicts {"frames": [hxwx3 doubles], "masks": [hxw u8]}.
    Frame values are byte-quantized so a PNG round trip is lossless. The
    mask marks exactly the moving square. With `distractor`, a second,
    identical-looking square sits still elsewhere and is never in the mask,
    so appearance alone cannot separate figure from ground.
    """
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    if frames < 1:
        raise ValueError(f"frames must be >= 1, got {frames}")
    out = []
    for s in range(sequences):
        rng = np.random.default_rng([seed, s])
        side = max(6, size // 5)
        margin = 2
        lo, hi = margin, size - side - margin

        coarse = rng.uniform(0.05, 0.45, size=(max(4, size // 8), max(4, size // 8), 3))
        background = resize_bilinear(coarse, size, size)

        y_sq = int(rng.integers(lo, hi + 1))
        while True:
            y_dis = int(rng.integers(lo, hi + 1))
            if abs(y_dis - y_sq) >= side + 2:
                break
        x_dis = int(rng.integers(lo, hi + 1))

        x = float(rng.integers(lo, hi + 1))
        vx = float(motion) * (1 if rng.integers(2) else -1)

        seq_frames, seq_masks = [], []
        for _ in range(frames):
            img = background.copy()
            mask = np.zeros((size, size), dtype=np.uint8)
            if distractor:
                img[y_dis : y_dis + side, x_dis : x_dis + side] = SQUARE_COLOR
            xi = int(round(x))
            img[y_sq : y_sq + side, xi : xi + side] = SQUARE_COLOR
            mask[y_sq : y_sq + side, xi : xi + side] = 1
            seq_frames.append(np.rint(img * 255.0) / 255.0)
            seq_masks.append(mask)
            x += vx
            if x > hi:
                x, vx = float(hi), -vx
            elif x < lo:
                x, vx = float(lo), -vx
        out.append({"frames": seq_frames, "masks": seq_masks})
    return out


def synth_dataset(root, frames=20, size=64, motion=2, seed=0, distractor=False,
                  sequences=1):
    """Materialize synth_frames under `root` and return its FrameSet."""
    root = Path(root)
    seqs = synth_frames(frames, size, motion, seed, distractor, sequences)
    for s, seq in enumerate(seqs):
        fdir = root / f"seq{s:03d}" / "frames"
        gdir = root / f"seq{s:03d}" / "gt"
        fdir.mkdir(parents=True, exist_ok=True)
        gdir.mkdir(parents=True, exist_ok=True)
        for i, (frame, mask) in enumerate(zip(seq["frames"], seq["masks"])):
            save_frame(fdir / f"{i:05d}.png", frame)
            Image.fromarray(mask * np.uint8(255), "L").save(gdir / f"{i:05d}.png")
    return scan_dataset(root)


# --- sample assembly --------------------------------------------------------


def _frame_at(path, resolution):
    arr = load_frame(path).data[0]
    if resolution and arr.shape[:2] != (resolution, resolution):
        arr = resize_bilinear(arr, resolution, resolution)
    return arr[None, :, :, :]


def _mask_at(path, resolution, flatten):
    mask = load_groundtruth(path, flatten=flatten)
    if resolution and mask.shape != (resolution, resolution):
        mask = resize_nearest(mask, resolution, resolution)
    return mask


def static_samples(frameset, resolution=None, flatten=False):
    """(frame, mask) pairs for every annotated frame."""
    samples = []
    for seq in frameset.sequences:
        for frame, gt in seq.frames:
            if gt is None:
                continue
            samples.append((_frame_at(frame, resolution), _mask_at(gt, resolution, flatten)))
    if not samples:
        raise DataError("no annotated frames in dataset")
    return samples


def dynamic_samples(frameset, static_net, resolution=None, flatten=False):
    """(I_t, I_t+1, S_t, mask) tuples with S_t from the frozen static net."""
    from .nets import static_forward

    samples = []
    for record in frameset.records():
        if record.gt is None:
            continue
        i_t = _frame_at(record.frame_t, resolution)
        i_t1 = _frame_at(record.frame_t1, resolution)
        s_t = static_forward(static_net, Tensor(i_t)).data
        samples.append((i_t, i_t1, s_t, _mask_at(record.gt, resolution, flatten)))
    if not samples:
        raise DataError("no annotated frames in dataset")
    return samples
