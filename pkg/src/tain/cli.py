"""Command line front end: train, infer, eval, bench, visualize.

Every run resolves its full configuration (defaults, then config file,
then flags) and writes a JSON manifest next to its outputs, so any result
can be reproduced bit-exactly by rerunning with the recorded settings.
Errors exit nonzero with a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys

import numpy as np
from PIL import Image

from . import __version__
from . import autograd as ag
from .data import AugmentConfig, TripletDataset, load_image, save_image
from .errors import ConfigError, DataError, ShapeError, TainError
from .metrics import bench_inference, evaluate
from .model import ModelConfig, TainModel
from .training import TrainConfig, load_checkpoint, model_from_checkpoint, train


# -- config files -------------------------------------------------------------

_MODEL_TYPES = {
    "scale": int, "channels": int, "n_groups": int, "n_blocks": int,
    "reduction": int, "seed": int, "enable_cs": bool, "normalize_qk": bool,
}
_TRAIN_TYPES = {
    "lr": float, "beta1": float, "beta2": float, "eps": float, "gamma": float,
    "batch_size": int, "max_steps": int, "checkpoint_every": int, "seed": int,
}
_AUG_TYPES = {
    "flip_h": float, "flip_v": float, "crop_size": "crop",
    "brightness": float, "contrast": float, "saturation": float,
    "occluder_enabled": bool, "occluder_min_size": int, "occluder_max_size": int,
    "occluder_probability": float, "seed": int,
}
_SECTIONS = {"model": _MODEL_TYPES, "train": _TRAIN_TYPES, "augment": _AUG_TYPES}


def _coerce(section: str, key: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "crop":
            if raw.lower() in ("none", ""):
                return None
            if "x" in raw:
                h, w = raw.split("x", 1)
                return [int(h), int(w)]
            return [int(raw), int(raw)]
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from None


def load_config_file(path: str) -> dict:
    """Read a flat key=value config with [model]/[train]/[augment] sections."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as f:
            cp.read_file(f)
    except OSError as e:
        raise DataError(f"cannot read config file {path}: {e.strerror}") from e
    except configparser.Error as e:
        raise ConfigError(f"malformed config file {path}: {e}") from e
    out = {name: {} for name in _SECTIONS}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}] in {path}")
        types = _SECTIONS[section]
        for key, raw in cp.items(section):
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{section}] of {path}")
            out[section][key] = _coerce(section, key, raw, types[key])
    return out


_TOY_MODEL = dict(scale=2, channels=16, n_groups=2, n_blocks=2, reduction=4)


def resolve_configs(config_path: str | None, toy: bool):
    """Defaults, overlaid by the config file, overlaid by the --toy preset."""
    sections = load_config_file(config_path) if config_path else {
        "model": {}, "train": {}, "augment": {},
    }
    model_d = ModelConfig().to_dict()
    train_d = TrainConfig().to_dict()
    aug_d = AugmentConfig().to_dict()
    model_d.update(sections["model"])
    train_d.update(sections["train"])
    aug_d.update(sections["augment"])
    if toy:
        model_d.update(_TOY_MODEL)
        aug_d["crop_size"] = [64, 64]
    return (
        ModelConfig.from_dict(model_d),
        TrainConfig.from_dict(train_d),
        AugmentConfig.from_dict(aug_d),
    )


# -- manifests ----------------------------------------------------------------

@dataclasses.dataclass
class RunManifest:
    """Everything needed to rerun a command and match its outputs bit-exactly."""

    command: str
    version: str
    seed: int
    model: dict | None = None
    train: dict | None = None
    augment: dict | None = None
    inputs: dict = dataclasses.field(default_factory=dict)
    artifacts: dict = dataclasses.field(default_factory=dict)
    results: dict | None = None

    def to_json(self) -> str:
        doc = {k: v for k, v in dataclasses.asdict(self).items() if v is not None}
        return json.dumps(doc, indent=2, sort_keys=True)

    def write(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json() + "\n")


def _manifest_sibling(out_path: str) -> str:
    root, _ = os.path.splitext(out_path)
    return root + ".manifest.json"


# -- grayscale output ---------------------------------------------------------

def _save_gray(path, arr01: np.ndarray) -> None:
    q = np.clip(np.floor(arr01 * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path)


def _mark_argmax(viz: np.ndarray, pos: tuple) -> np.ndarray:
    """Burn a crosshair into a [0,1] grayscale map: white center, black arms."""
    out = viz.copy()
    h, w = out.shape
    ay, ax = pos
    for d in (1, 2, 3):
        if ay - d >= 0:
            out[ay - d, ax] = 0.0
        if ay + d < h:
            out[ay + d, ax] = 0.0
        if ax - d >= 0:
            out[ay, ax - d] = 0.0
        if ax + d < w:
            out[ay, ax + d] = 0.0
    out[ay, ax] = 1.0
    return out


# -- subcommands --------------------------------------------------------------

def cmd_train(args) -> int:
    model_cfg, train_cfg, aug_cfg = resolve_configs(args.config, args.toy)
    triplets = list(TripletDataset(args.data))
    if not triplets:
        raise DataError(f"no readable triplets under {args.data}")
    model = TainModel(model_cfg)
    os.makedirs(args.out, exist_ok=True)

    every = max(1, train_cfg.max_steps // 20)

    def log_fn(step, loss):
        if step % every == 0 or step == train_cfg.max_steps - 1:
            print(f"step {step}: loss {loss:.6g}")

    result = train(
        model, triplets, train_cfg, aug_cfg,
        out_dir=args.out, resume=args.resume, log_fn=log_fn,
    )

    artifacts = {"loss_csv": os.path.join(args.out, "loss.csv")}
    for name in sorted(os.listdir(args.out)):
        if name.startswith("checkpoint_") and name.endswith(".tain"):
            artifacts[name[: -len(".tain")]] = os.path.join(args.out, name)
    manifest = RunManifest(
        command="train", version=__version__, seed=train_cfg.seed,
        model=model_cfg.to_dict(), train=train_cfg.to_dict(), augment=aug_cfg.to_dict(),
        inputs={"data": args.data, "resume": args.resume},
        artifacts=artifacts,
        results={"final_loss": result.final_loss, "skipped_steps": result.skipped_steps},
    )
    manifest.write(os.path.join(args.out, "manifest.json"))
    print(
        f"trained {len(result.steps)} steps, final loss {result.final_loss:.6g}, "
        f"checkpoint {result.checkpoint_path}"
    )
    return 0


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = model_from_checkpoint(ckpt)
    f0 = load_image(args.frame0)
    f1 = load_image(args.frame1)
    if f0.shape != f1.shape:
        raise ShapeError(f"frames disagree: {f0.shape} vs {f1.shape}")
    pred = model.infer_padded(f0, f1)
    save_image(args.out, pred)
    RunManifest(
        command="infer", version=__version__, seed=model.config.seed,
        model=model.config.to_dict(),
        inputs={"ckpt": args.ckpt, "frame0": args.frame0, "frame1": args.frame1},
        artifacts={"prediction": args.out},
    ).write(_manifest_sibling(args.out))
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    if args.ckpt is None and not args.identity:
        raise ConfigError("eval needs --ckpt (or --identity for the debug baseline)")
    triplets = list(TripletDataset(args.data))
    if not triplets:
        raise DataError(f"no readable triplets under {args.data}")
    model = None if args.identity else model_from_checkpoint(load_checkpoint(args.ckpt))
    report = evaluate(model, triplets)
    with open(args.report, "w") as f:
        f.write(report.to_json() + "\n")
    model_d = None if model is None else model.config.to_dict()
    RunManifest(
        command="eval", version=__version__,
        seed=0 if model is None else model.config.seed,
        model=model_d,
        inputs={"ckpt": args.ckpt, "data": args.data, "identity": args.identity},
        artifacts={"report": args.report},
        results={"psnr": report.psnr, "ssim": report.ssim, "ie": report.ie},
    ).write(_manifest_sibling(args.report))
    print(
        f"evaluated {len(report.items)} triplets: psnr {report.psnr:.4f} dB, "
        f"ssim {report.ssim:.6f}, ie {report.ie:.4f}"
    )
    return 0


def cmd_bench(args) -> int:
    if args.ckpt:
        model = model_from_checkpoint(load_checkpoint(args.ckpt))
    elif args.config or args.toy:
        model_cfg, _, _ = resolve_configs(args.config, args.toy)
        model = TainModel(model_cfg)
    else:
        raise ConfigError("bench needs a model: pass --ckpt, --config, or --toy")
    res = bench_inference(model, h=args.size, w=args.size, n=args.n, seed=args.seed)
    print(
        f"{res.mean_ms:.3f} +- {res.std_ms:.3f} ms per frame "
        f"({res.n} passes at {res.height}x{res.width}, {res.warmup} warmup)"
    )
    RunManifest(
        command="bench", version=__version__, seed=args.seed,
        model=model.config.to_dict(),
        inputs={"ckpt": args.ckpt, "size": args.size, "n": args.n},
        artifacts={},
        results=res.to_dict(),
    ).write(args.out)
    return 0


def cmd_visualize(args) -> int:
    model = model_from_checkpoint(load_checkpoint(args.ckpt))
    cfg = model.config
    n_stages = len(model.cs)
    if n_stages == 0:
        raise ConfigError("model has no cross-similarity stages to visualize")

    f0 = load_image(args.frame0)
    f1 = load_image(args.frame1)
    if f0.shape != f1.shape:
        raise ShapeError(f"frames disagree: {f0.shape} vs {f1.shape}")
    h, w, _ = f0.shape

    if args.query is None:
        qx, qy = w // 2, h // 2
    else:
        try:
            sx, sy = args.query.split(",")
            qx, qy = int(sx), int(sy)
        except ValueError:
            raise ConfigError(f"--query must be 'x,y' integers, got {args.query!r}") from None
    if not (0 <= qx < w and 0 <= qy < h):
        raise ConfigError(f"query ({qx},{qy}) is outside the {w}x{h} frame")

    stage = args.resgroup if args.resgroup is not None else n_stages
    if not 1 <= stage <= n_stages:
        raise ConfigError(f"--resgroup must be in 1..{n_stages}, got {stage}")

    s = cfg.scale
    pad = ((0, (-h) % s), (0, (-w) % s), (0, 0))
    p0 = np.pad(f0, pad, mode="edge")
    p1 = np.pad(f1, pad, mode="edge")
    with ag.no_grad():
        trace = model.trace(p0, p1, keep_similarity=True)
        decoded = [ag.pixel_shuffle(model.tail(y), s) for y in trace.trunk[:-1]]
    decoded.append(trace.prediction)

    os.makedirs(args.out, exist_ok=True)
    artifacts = {}
    for i, out in enumerate(decoded, start=1):
        path = os.path.join(args.out, f"intermediate_{i}.png")
        save_image(path, np.asarray(out.data)[:h, :w])
        artifacts[f"intermediate_{i}"] = path

    hh, ww = p0.shape[0] // s, p0.shape[1] // s
    qidx = (qy // s) * ww + (qx // s)
    r0, r1 = trace.cs_results[stage - 1]
    for tag, r in (("d0", r0), ("d1", r1)):
        row = np.asarray(r.similarity.data[qidx], dtype=np.float64).reshape(hh, ww)
        peak = row.max()
        viz = row / peak if peak > 0 else row
        a_flat = int(r.index[qidx])
        viz = _mark_argmax(viz, (a_flat // ww, a_flat % ww))
        path = os.path.join(args.out, f"{tag}_stage{stage}.png")
        _save_gray(path, viz)
        artifacts[f"{tag}_stage{stage}"] = path

    weights = trace.ia_weights[stage - 1]
    for tag, t in (("a0", weights.a0), ("a1", weights.a1)):
        path = os.path.join(args.out, f"{tag}_stage{stage}.png")
        _save_gray(path, np.asarray(t.data)[:, :, 0])
        artifacts[f"{tag}_stage{stage}"] = path

    RunManifest(
        command="visualize", version=__version__, seed=cfg.seed,
        model=cfg.to_dict(),
        inputs={
            "ckpt": args.ckpt, "frame0": args.frame0, "frame1": args.frame1,
            "query": [qx, qy], "resgroup": stage,
        },
        artifacts=artifacts,
    ).write(os.path.join(args.out, "manifest.json"))
    print(
        f"wrote {len(decoded)} intermediates plus D/A maps for stage {stage} to {args.out}"
    )
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tain", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tain {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train", help="train a model on a triplet dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for checkpoints")
    p.add_argument("--config", help="key=value config file with [model]/[train]/[augment]")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--toy", action="store_true",
                   help="small preset: scale 2, 16 channels, 2 groups, 64x64 crops")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="interpolate the midpoint of two frames")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--frame0", required=True)
    p.add_argument("--frame1", required=True)
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a checkpoint on a triplet dataset")
    p.add_argument("--ckpt")
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="output JSON path")
    p.add_argument("--identity", action="store_true",
                   help="debug baseline: score the ground truth against itself")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time repeated forward passes")
    p.add_argument("--ckpt")
    p.add_argument("--config")
    p.add_argument("--toy", action="store_true")
    p.add_argument("--size", type=int, default=256, help="square frame side")
    p.add_argument("--n", type=int, default=300, help="timed passes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bench.json", help="manifest/results path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("visualize", help="dump intermediates and attention maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--frame0", required=True)
    p.add_argument("--frame1", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--query", help="x,y pixel whose similarity row to plot (default: center)")
    p.add_argument("--resgroup", type=int,
                   help="which attention stage to dump (1-based, default: last)")
    p.set_defaults(func=cmd_visualize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TainError as e:
        print(f"error: {str(e).splitlines()[0]}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
