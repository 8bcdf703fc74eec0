"""Drive the command line end to end: train, infer, eval, visualize.

Builds a small PNG dataset in a scratch directory, then shells out to the
installed `tain` entry point exactly as a user would.  Inspect the scratch
directory afterwards: every run leaves a manifest.json describing it.
"""

import json
import pathlib
import subprocess
import sys
import tempfile

import numpy as np

from tain.data import save_image

scratch = pathlib.Path(tempfile.mkdtemp(prefix="tain-demo-"))
print("working in", scratch)

# -- a four-clip dataset of sliding patterns ----------------------------------
data = scratch / "data"
rng = np.random.default_rng(11)
for i in range(4):
    coarse = rng.uniform(0, 1, (8, 8, 3))
    base = np.repeat(np.repeat(coarse, 8, axis=0), 8, axis=1)  # 64x64
    dy, dx = rng.integers(1, 3, size=2)
    clip = data / f"clip{i}"
    clip.mkdir(parents=True)
    save_image(clip / "frame0.png", np.roll(base, (-dy, -dx), axis=(0, 1)))
    save_image(clip / "frame1.png", base)
    save_image(clip / "frame2.png", np.roll(base, (dy, dx), axis=(0, 1)))


def run(*args):
    cmd = [sys.executable, "-m", "tain.cli", *args]
    print("\n$", "tain", *args)
    proc = subprocess.run(cmd, text=True, capture_output=True)
    print((proc.stdout + proc.stderr).strip())
    proc.check_returncode()


# -- a short toy training run --------------------------------------------------
config = scratch / "run.cfg"
config.write_text("[train]\nmax_steps = 40\nbatch_size = 2\ncheckpoint_every = 40\nlr = 1e-3\n")
run("train", "--toy", "--config", str(config),
    "--data", str(data), "--out", str(scratch / "run"))

ckpt = scratch / "run" / "checkpoint_final.tain"

# -- interpolate one pair -------------------------------------------------------
run("infer", "--ckpt", str(ckpt),
    "--frame0", str(data / "clip0" / "frame0.png"),
    "--frame1", str(data / "clip0" / "frame2.png"),
    "--out", str(scratch / "midpoint.png"))

# -- score the checkpoint on its own training clips -----------------------------
run("eval", "--ckpt", str(ckpt), "--data", str(data),
    "--report", str(scratch / "report.json"))
report = json.loads((scratch / "report.json").read_text())
print("aggregate:", report["aggregate"])

# -- dump attention maps for one pair -------------------------------------------
run("visualize", "--ckpt", str(ckpt),
    "--frame0", str(data / "clip0" / "frame0.png"),
    "--frame1", str(data / "clip0" / "frame2.png"),
    "--out", str(scratch / "viz"), "--query", "32,32")
print("visualization files:", sorted(p.name for p in (scratch / "viz").iterdir()))
