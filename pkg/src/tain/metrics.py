"""Image quality metrics, dataset evaluation, and the inference timing harness.

PSNR and IE are two views of the same mean squared error (peak 1.0 for
[0,1] images, IE in 8-bit units), tied by ie = 255 * 10^(-psnr/20) below
the PSNR cap.  SSIM follows the windowed formulation: 11x11 Gaussian
weights, sigma 1.5, biased local moments, computed per channel over all
fully-valid window positions and averaged.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import rng_for
from .errors import ShapeError

PSNR_CAP_DB = 100.0
_MSE_FLOOR = 1e-10

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _as_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"metric shapes differ: {pred.shape} vs {target.shape}")
    return pred, target


def psnr(pred, target) -> float:
    """Peak signal-to-noise ratio in dB against peak 1.0, capped at 100."""
    p, t = _as_pair(pred, target)
    mse = float(np.mean(np.square(p - t)))
    if mse < _MSE_FLOOR:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def ie(pred, target) -> float:
    """Interpolation error: RMS difference in 8-bit units."""
    p, t = _as_pair(pred, target)
    return float(255.0 * np.sqrt(np.mean(np.square(p - t))))


def _gaussian_1d(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # separable weighted mean over every fully-inside window
    win = np.lib.stride_tricks.sliding_window_view(img, kernel.size, axis=0)
    img = win @ kernel
    win = np.lib.stride_tricks.sliding_window_view(img, kernel.size, axis=1)
    return win @ kernel


def ssim(pred, target) -> float:
    """Mean structural similarity over valid 11x11 windows, channels averaged."""
    p, t = _as_pair(pred, target)
    if p.ndim != 3:
        raise ShapeError(f"ssim expects (h, w, c) images, got shape {p.shape}")
    h, w, c = p.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(
            f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )
    kernel = _gaussian_1d(SSIM_WINDOW, SSIM_SIGMA)
    vals = []
    for ch in range(c):
        x = p[:, :, ch]
        y = t[:, :, ch]
        mx = _filter_valid(x, kernel)
        my = _filter_valid(y, kernel)
        # biased (weighted) second moments
        vx = _filter_valid(x * x, kernel) - mx * mx
        vy = _filter_valid(y * y, kernel) - my * my
        cxy = _filter_valid(x * y, kernel) - mx * my
        s = ((2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)) / (
            (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
        )
        vals.append(s.mean())
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# dataset evaluation


@dataclasses.dataclass
class MetricsReport:
    items: list  # dicts: source_id, psnr, ssim, ie
    psnr: float
    ssim: float
    ie: float
    timing_mean_ms: float | None = None
    timing_std_ms: float | None = None

    @classmethod
    def from_items(cls, items, timing=None) -> "MetricsReport":
        if not items:
            raise ShapeError("metrics report needs at least one item")
        agg = {k: float(np.mean([it[k] for it in items])) for k in ("psnr", "ssim", "ie")}
        mean_ms, std_ms = timing if timing else (None, None)
        return cls(items=list(items), timing_mean_ms=mean_ms, timing_std_ms=std_ms, **agg)

    def to_dict(self) -> dict:
        d = {
            "aggregate": {"psnr": self.psnr, "ssim": self.ssim, "ie": self.ie},
            "items": self.items,
        }
        if self.timing_mean_ms is not None:
            d["timing"] = {"mean_ms": self.timing_mean_ms, "std_ms": self.timing_std_ms}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _eval_threads(requested: int | None) -> int:
    n = requested if requested else (os.cpu_count() or 1)
    cap = os.environ.get("TAIN_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def evaluate(model, triplets, threads: int | None = None) -> MetricsReport:
    """Score a model over triplets; each worker owns its own graph.

    ``model=None`` scores the ground truth against itself, a plumbing
    check that must come out at the PSNR cap with SSIM 1.
    """
    triplets = list(triplets)
    if not triplets:
        raise ShapeError("evaluate: empty dataset")

    def one(t):
        if model is None:
            pred = t.it
        else:
            pred = np.clip(model.infer_padded(t.i0, t.i1), 0.0, 1.0)
        return {
            "source_id": t.source_id,
            "psnr": psnr(pred, t.it),
            "ssim": ssim(pred, t.it),
            "ie": ie(pred, t.it),
        }

    n = _eval_threads(threads)
    if n == 1:
        items = [one(t) for t in triplets]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            items = list(pool.map(one, triplets))
    return MetricsReport.from_items(items)


# ---------------------------------------------------------------------------
# timing


@dataclasses.dataclass
class BenchResult:
    mean_ms: float
    std_ms: float
    n: int
    height: int
    width: int
    warmup: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def bench_inference(model, h: int = 256, w: int = 256, n: int = 300,
                    warmup: int = 5, seed: int = 0) -> BenchResult:
    """Wall-clock the forward pass over seeded random frame pairs.

    Every pass gets a fresh pair; the first ``warmup`` passes are
    discarded.  Only the forward call is inside the clock.
    """
    if n < 2:
        raise ShapeError(f"bench needs n >= 2 for a sample std, got {n}")
    times = []
    with ag.no_grad():
        for i in range(warmup + n):
            rng = rng_for(seed, "bench", i)
            x0 = Tensor(rng.random((h, w, 3), dtype=np.float32))
            x1 = Tensor(rng.random((h, w, 3), dtype=np.float32))
            t0 = time.perf_counter()
            model.forward(x0, x1)
            elapsed = time.perf_counter() - t0
            if i >= warmup:
                times.append(elapsed * 1000.0)
    arr = np.asarray(times)
    return BenchResult(
        mean_ms=float(arr.mean()), std_ms=float(arr.std(ddof=1)),
        n=n, height=h, width=w, warmup=warmup,
    )
