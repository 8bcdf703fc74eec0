"""L1-plus-gradient loss, Adam, binary checkpoints, and the training loop.

Training is deliberately replayable: batch composition and augmentation
draws are keyed by (seed, step, slot) rather than carried generator
state, and checkpoints store raw float32 parameter and moment blobs, so
resuming from step k and training straight through both produce the
same bits.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor, backward
from .data import AugmentConfig, augment, rng_for
from .errors import ConfigError, DataError, ShapeError, TrainingError
from .model import ModelConfig, TainModel

CHECKPOINT_MAGIC = b"TAIN"
CHECKPOINT_VERSION = 1


@dataclasses.dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = 0.1
    batch_size: int = 4
    max_steps: int = 2000
    checkpoint_every: int = 500
    seed: int = 0

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {b}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        for name in ("batch_size", "max_steps", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown train config keys: {sorted(extra)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# loss


def interpolation_loss(pred: Tensor, target: Tensor, gamma: float) -> Tensor:
    """Mean absolute error plus a weighted mean absolute error of the
    forward-difference spatial gradients (both axes pooled into one mean,
    edge rows/columns excluded)."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"loss shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}"
        )
    l1 = ag.mean(ag.absolute(ag.sub(pred, target)))
    if gamma == 0.0:
        return l1
    h, w = pred.data.shape[0], pred.data.shape[1]
    if h < 2 or w < 2:
        raise ShapeError(f"gradient loss needs at least 2x2 images, got {h}x{w}")

    def dh(t):
        return ag.sub(ag.slice_axis(t, 0, 1, h), ag.slice_axis(t, 0, 0, h - 1))

    def dw(t):
        return ag.sub(ag.slice_axis(t, 1, 1, w), ag.slice_axis(t, 1, 0, w - 1))

    n_elems = (h - 1) * w * pred.data.shape[2] + h * (w - 1) * pred.data.shape[2]
    grad_term = ag.mul(
        ag.add(
            ag.sum(ag.absolute(ag.sub(dh(pred), dh(target)))),
            ag.sum(ag.absolute(ag.sub(dw(pred), dw(target)))),
        ),
        1.0 / n_elems,
    )
    return ag.add(l1, ag.mul(grad_term, gamma))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    A step whose gradients contain any non-finite value is skipped
    outright (parameters and moments untouched) and counted, so one bad
    batch cannot poison the moment estimates.
    """

    def __init__(self, named_params, cfg: TrainConfig):
        cfg.validate()
        pairs = list(named_params)
        self.names = [n for n, _ in pairs]
        self.params = [p for _, p in pairs]
        self.cfg = cfg
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0
        self.skipped = 0

    def step(self) -> bool:
        grads = [p.grad for p in self.params]
        for g in grads:
            if not np.isfinite(g).all():
                self.skipped += 1
                return False
        self.t += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * np.square(g)
            p.data -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)
        return True

    def zero_grads(self) -> None:
        for p in self.params:
            p.zero_grad()

    def moments_state(self) -> dict:
        return {
            "t": self.t,
            "skipped": self.skipped,
            "m": {n: arr for n, arr in zip(self.names, self.m)},
            "v": {n: arr for n, arr in zip(self.names, self.v)},
        }

    def load_moments_state(self, state: dict) -> None:
        for moment, store in (("m", self.m), ("v", self.v)):
            table = state[moment]
            if set(table) != set(self.names):
                raise ConfigError(f"optimizer state {moment} does not match parameters")
            for i, name in enumerate(self.names):
                arr = np.asarray(table[name])
                if arr.shape != store[i].shape:
                    raise ConfigError(
                        f"moment {moment}/{name}: shape {arr.shape} vs {store[i].shape}"
                    )
                store[i] = arr.astype(store[i].dtype, copy=True)
        self.t = int(state["t"])
        self.skipped = int(state.get("skipped", 0))


# ---------------------------------------------------------------------------
# checkpoints


@dataclasses.dataclass
class Checkpoint:
    model_config: ModelConfig
    step: int
    params: dict
    adam: dict | None  # {"t", "skipped", "m": {...}, "v": {...}}


def save_checkpoint(path, model: TainModel, optimizer: Adam | None = None, step: int = 0) -> None:
    tensors = [(f"param/{n}", arr) for n, arr in model.state_dict().items()]
    adam_header = None
    if optimizer is not None:
        state = optimizer.moments_state()
        adam_header = {"t": state["t"], "skipped": state["skipped"]}
        tensors += [(f"adam_m/{n}", state["m"][n]) for n in optimizer.names]
        tensors += [(f"adam_v/{n}", state["v"][n]) for n in optimizer.names]

    header = {
        "model_config": model.config.to_dict(),
        "step": int(step),
        "adam": adam_header,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, arr in tensors:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    version = struct.unpack_from("<I", raw, 4)[0]
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header_len = struct.unpack_from("<Q", raw, 8)[0]
    start = 16 + header_len
    if start > len(raw):
        raise DataError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[16:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint header: {exc}") from exc

    offset = start
    tables: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(raw):
            raise DataError(f"{path}: truncated tensor data at {entry['name']}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += nbytes
        kind, _, name = entry["name"].partition("/")
        if kind not in tables:
            raise DataError(f"{path}: unknown tensor kind {kind!r}")
        tables[kind][name] = np.array(arr, dtype=np.float32)  # own, writable copy

    adam = None
    if header.get("adam") is not None:
        adam = {
            "t": int(header["adam"]["t"]),
            "skipped": int(header["adam"].get("skipped", 0)),
            "m": tables["adam_m"],
            "v": tables["adam_v"],
        }
    return Checkpoint(
        model_config=ModelConfig.from_dict(header["model_config"]),
        step=int(header["step"]),
        params=tables["param"],
        adam=adam,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> TainModel:
    model = TainModel(ckpt.model_config)
    model.load_state_dict(ckpt.params)
    return model


# ---------------------------------------------------------------------------
# training loop


@dataclasses.dataclass
class TrainResult:
    steps: list
    losses: list
    final_loss: float
    checkpoint_path: Path | None
    skipped_steps: int


def _pick_donor(arng: np.random.Generator, i: int, n: int) -> int:
    if n == 1:
        return i
    j = int(arng.integers(0, n - 1))
    return j if j < i else j + 1


def train(
    model: TainModel,
    triplets,
    cfg: TrainConfig,
    aug_cfg: AugmentConfig,
    out_dir=None,
    resume=None,
    log_fn=None,
) -> TrainResult:
    """Run the optimization loop over ``triplets``.

    ``resume`` takes a checkpoint path saved by this function; training
    continues from its step with restored moments, reproducing the bits
    of an uninterrupted run.  With ``out_dir`` set, a ``loss.csv`` plus
    periodic and final checkpoints are written there.
    """
    cfg.validate()
    aug_cfg.validate()
    triplets = list(triplets)
    if not triplets:
        raise TrainingError("training needs a non-empty dataset")
    for t in triplets:
        t.validate()
    n = len(triplets)

    optimizer = Adam(model.named_params(), cfg)
    start_step = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        # the init seed is irrelevant once weights are loaded; only the
        # architecture fields have to agree
        ours = {k: v for k, v in model.config.to_dict().items() if k != "seed"}
        theirs = {k: v for k, v in ckpt.model_config.to_dict().items() if k != "seed"}
        if ours != theirs:
            raise ConfigError(
                "checkpoint was written by a different model config; "
                f"got {theirs}, model has {ours}"
            )
        model.load_state_dict(ckpt.params)
        if ckpt.adam is None:
            raise ConfigError("checkpoint has no optimizer state, cannot resume")
        optimizer.load_moments_state(ckpt.adam)
        start_step = ckpt.step

    out_dir = Path(out_dir) if out_dir is not None else None
    csv_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        mode = "a" if (resume is not None and (out_dir / "loss.csv").exists()) else "w"
        csv_file = open(out_dir / "loss.csv", mode)
        if mode == "w":
            csv_file.write("step,loss\n")

    steps, losses = [], []
    ckpt_path = None
    try:
        for step in range(start_step, cfg.max_steps):
            batch_rng = rng_for(cfg.seed, "batch", step)
            idx = [int(i) for i in batch_rng.integers(0, n, size=cfg.batch_size)]
            total = None
            for slot, i in enumerate(idx):
                arng = rng_for(aug_cfg.seed, "aug", step, slot)
                donor = triplets[_pick_donor(arng, i, n)]
                trip = augment(triplets[i], aug_cfg, donor, arng)
                pred = model.forward(trip.i0, trip.i1)
                sample_loss = interpolation_loss(pred, Tensor(trip.it), cfg.gamma)
                total = sample_loss if total is None else ag.add(total, sample_loss)
            total = ag.mul(total, 1.0 / cfg.batch_size)
            loss_val = total.item()
            if not np.isfinite(loss_val):
                sources = ", ".join(triplets[i].source_id or str(i) for i in idx)
                raise TrainingError(
                    f"non-finite loss {loss_val} at step {step} on batch [{sources}]"
                )
            backward(total)
            optimizer.step()
            optimizer.zero_grads()

            steps.append(step)
            losses.append(loss_val)
            if csv_file is not None:
                csv_file.write(f"{step},{loss_val:.10g}\n")
            if log_fn is not None:
                log_fn(step, loss_val)
            if out_dir is not None and (step + 1) % cfg.checkpoint_every == 0:
                ckpt_path = out_dir / f"checkpoint_{step + 1:06d}.tain"
                save_checkpoint(ckpt_path, model, optimizer, step=step + 1)
                csv_file.flush()
        if out_dir is not None:
            ckpt_path = out_dir / "checkpoint_final.tain"
            save_checkpoint(ckpt_path, model, optimizer, step=cfg.max_steps)
    finally:
        if csv_file is not None:
            csv_file.close()

    return TrainResult(
        steps=steps,
        losses=losses,
        final_loss=losses[-1] if losses else float("nan"),
        checkpoint_path=ckpt_path,
        skipped_steps=optimizer.skipped,
    )
