"""Shuffle resolution into channels and back, losslessly.

pixel_unshuffle folds each s-by-s spatial cell into the channel axis, so a
(h, w, c) map becomes (h/s, w/s, c*s*s).  pixel_shuffle is its exact
inverse.  All of the network's heavy work runs on the folded grid.
"""

import numpy as np

from tain import autograd as ag
from tain.autograd import Tensor

rng = np.random.default_rng(7)
frame = Tensor(rng.uniform(0, 1, (256, 448, 3)).astype(np.float32))

down = ag.pixel_unshuffle(frame, 8)
print("unshuffle by 8:", frame.data.shape, "->", down.data.shape)

back = ag.pixel_shuffle(down, 8)
print("round trip bit-exact:", np.array_equal(back.data, frame.data))

# the channel order is (channel, cell row, cell col): channel varies slowest
tiny = Tensor(np.arange(16, dtype=np.float32).reshape(4, 4, 1))
folded = ag.pixel_unshuffle(tiny, 2)
print("4x4 numbers folded to 2x2x4, first cell:", folded.data[0, 0])

# indivisible sizes are refused rather than silently cropped
try:
    ag.pixel_unshuffle(Tensor(np.zeros((5, 4, 3))), 2)
except Exception as e:
    print("5x4 by 2 ->", e)
