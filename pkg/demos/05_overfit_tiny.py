"""
Overfitting four moving squares
===============================

A minimal end-to-end training run: four synthetic triplets, a toy model,
a few hundred Adam steps.  The pattern in each triplet slides by a fixed
integer offset per frame, so the middle frame is exactly recoverable and
the loss can fall as far as optimization lets it.

Takes about a minute on one core.
"""

import numpy as np

from tain.data import AugmentConfig, Triplet
from tain.model import ModelConfig, TainModel
from tain.training import TrainConfig, train


def sliding_triplet(seed, size=32):
    rng = np.random.default_rng(seed)
    # a smooth random field: coarse noise blown up by simple repetition
    coarse = rng.uniform(0, 1, (size // 8, size // 8, 3)).astype(np.float32)
    base = np.repeat(np.repeat(coarse, 8, axis=0), 8, axis=1)
    dy, dx = rng.integers(1, 3, size=2)
    return Triplet(
        i0=np.roll(base, (-dy, -dx), axis=(0, 1)),
        it=base,
        i1=np.roll(base, (dy, dx), axis=(0, 1)),
        source_id=f"demo-{seed}",
    )


triplets = [sliding_triplet(s) for s in range(4)]

model = TainModel(ModelConfig(scale=2, channels=16, n_groups=2, n_blocks=2, reduction=4))
cfg = TrainConfig(lr=1e-3, gamma=0.1, batch_size=2, max_steps=300, checkpoint_every=10 ** 9)
no_aug = AugmentConfig(flip_h=0, flip_v=0, occluder_enabled=False)

result = train(model, triplets, cfg, no_aug,
               log_fn=lambda step, loss: (step % 50 == 0) and print(f"step {step:4d}  loss {loss:.5f}"))

print(f"\nloss {result.losses[0]:.5f} -> {result.final_loss:.5f} over {len(result.steps)} steps")

l1 = np.mean([np.abs(model.infer_padded(t.i0, t.i1) - t.it).mean() for t in triplets])
print(f"mean L1 against the true middle frames: {l1:.5f}")
