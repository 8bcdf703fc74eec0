"""Triplet ingestion and the training-time augmentation pipeline.

A triplet is three frames of one moment in a video: the two inputs and
the intermediate target.  Augmentation applies the same spatial and
color transforms to all three frames, and can paste a square patch cut
from a different sample so that it translates linearly across the
triplet: the network then sees content that exists in one input frame
but not the other, which is exactly the occlusion case the attention
stages are there to handle.

All randomness is drawn from generators derived by :func:`rng_for` from
a seed plus integer/string tags, never from global state, so any draw
can be reproduced from its coordinates alone.
"""

from __future__ import annotations

import dataclasses
import warnings
import zlib
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Generator keyed by (seed, tags): same coordinates, same stream."""
    words = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            words.append(zlib.crc32(tag.encode()))
        else:
            words.append(int(tag) & 0xFFFFFFFF)
    return np.random.default_rng(words)


# ---------------------------------------------------------------------------
# image files


def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB PNG (or anything PIL reads) to float32 in [0,1]."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0


def save_image(path, arr: np.ndarray) -> None:
    """Write a [0,1] float image as 8-bit RGB, rounding half up."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"expected (h, w, 3) image, got {arr.shape}")
    q = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path)


# ---------------------------------------------------------------------------
# triplets


@dataclasses.dataclass
class Triplet:
    """Frames (i0, it, i1) in [0,1] float32 plus where they came from."""

    i0: np.ndarray
    it: np.ndarray
    i1: np.ndarray
    source_id: str = ""

    def validate(self) -> None:
        shapes = {self.i0.shape, self.it.shape, self.i1.shape}
        if len(shapes) != 1:
            raise DataError(
                f"triplet {self.source_id or '<anon>'}: frame sizes differ: "
                f"{self.i0.shape}, {self.it.shape}, {self.i1.shape}"
            )
        shape = self.i0.shape
        if len(shape) != 3 or shape[2] != 3:
            raise DataError(f"triplet {self.source_id or '<anon>'}: frames must be (h, w, 3)")

    @property
    def frames(self):
        return (self.i0, self.it, self.i1)


class TripletDataset:
    """Deterministically ordered folder of triplets, loaded lazily.

    Two layouts are recognized under one root:
      sequences/<a>/<b>/im1.png im2.png im3.png   (im2 is the target)
      <name>/frame0.png frame1.png frame2.png     (frame1 is the target)

    Items that fail to load are skipped with a warning and counted in
    ``skipped`` rather than aborting a whole run.
    """

    def __init__(self, root):
        root = Path(root)
        if not root.is_dir():
            raise DataError(f"dataset root {root} is not a directory")
        self.entries: list[tuple[str, tuple[Path, Path, Path]]] = []
        seq = root / "sequences"
        if seq.is_dir():
            for sub in sorted(seq.glob("*/*")):
                paths = tuple(sub / f"im{i}.png" for i in (1, 2, 3))
                if all(p.is_file() for p in paths):
                    self.entries.append((str(sub.relative_to(root)), paths))
        for sub in sorted(p for p in root.iterdir() if p.is_dir() and p.name != "sequences"):
            paths = tuple(sub / f"frame{i}.png" for i in (0, 1, 2))
            if all(p.is_file() for p in paths):
                self.entries.append((sub.name, paths))
        if not self.entries:
            raise DataError(f"no triplets found under {root}")
        self.skipped = 0

    def __len__(self) -> int:
        return len(self.entries)

    def load(self, i: int) -> Triplet:
        source_id, (p0, p1, p2) = self.entries[i]
        t = Triplet(
            i0=load_image(p0), it=load_image(p1), i1=load_image(p2), source_id=source_id
        )
        t.validate()
        return t

    def __iter__(self):
        for i in range(len(self.entries)):
            try:
                yield self.load(i)
            except DataError as exc:
                self.skipped += 1
                warnings.warn(f"skipping triplet: {exc}", stacklevel=2)


# ---------------------------------------------------------------------------
# augmentation


@dataclasses.dataclass
class AugmentConfig:
    flip_h: float = 0.5
    flip_v: float = 0.0
    crop_size: tuple | None = None  # None keeps the full frame
    brightness: float = 0.0  # additive per-channel bias amplitude
    contrast: float = 0.0  # multiplicative per-channel gain amplitude
    saturation: float = 0.0  # blend amplitude toward/away from luma
    occluder_enabled: bool = False
    occluder_min_size: int = 21
    occluder_max_size: int = 61
    occluder_probability: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        for name in ("flip_h", "flip_v", "occluder_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {v}")
        for name in ("brightness", "contrast", "saturation"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} amplitude must be >= 0")
        if self.crop_size is not None:
            ch, cw = self.crop_size
            if ch < 1 or cw < 1:
                raise ConfigError(f"crop_size must be positive, got {self.crop_size}")
        if self.occluder_enabled and not (
            21 <= self.occluder_min_size <= self.occluder_max_size <= 61
        ):
            raise ConfigError(
                "occluder sizes must satisfy 21 <= min <= max <= 61, got "
                f"[{self.occluder_min_size}, {self.occluder_max_size}]"
            )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["crop_size"] is not None:
            d["crop_size"] = list(d["crop_size"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown augment config keys: {sorted(extra)}")
        d = dict(d)
        if d.get("crop_size") is not None:
            d["crop_size"] = tuple(d["crop_size"])
        cfg = cls(**d)
        cfg.validate()
        return cfg


def _round_half_up_mid(a: int, b: int) -> int:
    return (a + b + 1) // 2


def paste_moving_patch(t: Triplet, patch: np.ndarray, p0, p1) -> Triplet:
    """Stamp ``patch`` at p0 in i0, p1 in i1, and their midpoint in it.

    The midpoint rounds half up per coordinate, so the patch moves in a
    straight line across the triplet.  Frame pixels under the patch are
    replaced outright.
    """
    if patch.ndim != 3 or patch.shape[0] != patch.shape[1] or patch.shape[2] != 3:
        raise DataError(f"patch must be square (k, k, 3), got {patch.shape}")
    k = patch.shape[0]
    h, w, _ = t.i0.shape
    pt = (_round_half_up_mid(p0[0], p1[0]), _round_half_up_mid(p0[1], p1[1]))
    for name, (py, px) in (("p0", p0), ("pt", pt), ("p1", p1)):
        if not (0 <= py <= h - k and 0 <= px <= w - k):
            raise DataError(f"patch of side {k} at {name}=({py},{px}) leaves {h}x{w} frame")
    frames = []
    for frame, (py, px) in zip(t.frames, (p0, pt, p1)):
        out = frame.copy()
        out[py:py + k, px:px + k, :] = patch
        frames.append(out)
    return Triplet(i0=frames[0], it=frames[1], i1=frames[2], source_id=t.source_id)


def apply_occluder(
    t: Triplet,
    donor: Triplet,
    rng: np.random.Generator,
    min_size: int = 21,
    max_size: int = 61,
) -> Triplet:
    """Cut a random square from the donor's first frame and send it moving
    across the triplet.  Positions are uniform over in-bounds placements;
    the middle-frame position is the rounded midpoint of the endpoints."""
    h, w, _ = t.i0.shape
    dh, dw, _ = donor.i0.shape
    if min(h, w) < max_size or min(dh, dw) < max_size:
        warnings.warn(
            f"frames too small for occluders up to {max_size}px, skipping", stacklevel=2
        )
        return t
    k = int(rng.integers(min_size, max_size + 1))
    sy = int(rng.integers(0, dh - k + 1))
    sx = int(rng.integers(0, dw - k + 1))
    patch = donor.i0[sy:sy + k, sx:sx + k].copy()
    while True:
        p0 = (int(rng.integers(0, h - k + 1)), int(rng.integers(0, w - k + 1)))
        p1 = (int(rng.integers(0, h - k + 1)), int(rng.integers(0, w - k + 1)))
        pt = (_round_half_up_mid(p0[0], p1[0]), _round_half_up_mid(p0[1], p1[1]))
        if 0 <= pt[0] <= h - k and 0 <= pt[1] <= w - k:
            break
    return paste_moving_patch(t, patch, p0, p1)


def _jitter(frames, rng: np.random.Generator, cfg: AugmentConfig):
    gain = 1.0 + rng.uniform(-cfg.contrast, cfg.contrast, size=3).astype(np.float32)
    bias = rng.uniform(-cfg.brightness, cfg.brightness, size=3).astype(np.float32)
    sat = np.float32(1.0 + rng.uniform(-cfg.saturation, cfg.saturation))
    out = []
    for f in frames:
        g = f * gain + bias
        luma = (g @ _LUMA)[:, :, None]
        out.append(np.clip(luma + sat * (g - luma), 0.0, 1.0).astype(np.float32))
    return out


def augment(t: Triplet, cfg: AugmentConfig, donor: Triplet, rng: np.random.Generator) -> Triplet:
    """One augmented copy of ``t``; same transform for all three frames.

    Stage order: crop, flips, color jitter, occluder.  Random draws
    happen in a fixed order independent of which stages fire, except
    that jitter and occluder draws only exist when their stage is
    configured on; the draw count is a function of the config alone, so
    a given (config, rng state) always maps to the same output.
    """
    h, w, _ = t.i0.shape
    ch, cw = cfg.crop_size if cfg.crop_size is not None else (h, w)
    if ch > h or cw > w:
        raise DataError(f"crop {ch}x{cw} larger than frame {h}x{w}")

    u_h = rng.random()
    u_v = rng.random()
    oy = int(rng.integers(0, h - ch + 1))
    ox = int(rng.integers(0, w - cw + 1))

    frames = [f[oy:oy + ch, ox:ox + cw, :] for f in t.frames]
    if u_h < cfg.flip_h:
        frames = [f[:, ::-1, :] for f in frames]
    if u_v < cfg.flip_v:
        frames = [f[::-1, :, :] for f in frames]
    frames = [np.ascontiguousarray(f) for f in frames]

    if cfg.brightness > 0 or cfg.contrast > 0 or cfg.saturation > 0:
        frames = _jitter(frames, rng, cfg)

    out = Triplet(i0=frames[0], it=frames[1], i1=frames[2], source_id=t.source_id)
    if cfg.occluder_enabled and rng.random() < cfg.occluder_probability:
        out = apply_occluder(
            out, donor, rng, min_size=cfg.occluder_min_size, max_size=cfg.occluder_max_size
        )
    return out
