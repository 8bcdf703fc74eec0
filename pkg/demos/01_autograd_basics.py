"""
Autograd in five minutes
========================

Every tensor op records onto a per-thread tape; backward() replays the
tape once in reverse and deposits gradients on the leaves.
"""

import numpy as np

from tain import autograd as ag
from tain.autograd import Tensor

# leaves are float32 by default and only get gradients when asked
x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
w = Tensor(np.array([[0.5], [-0.25]]), requires_grad=True)

y = ag.matmul(x, w)          # (2,1)
loss = ag.mean(ag.mul(y, y))  # mean of squares
print("loss =", loss.item())

ag.backward(loss)
print("dloss/dx =\n", x.grad)
print("dloss/dw =\n", w.grad)

# the tape is consumed: a second sweep over the same graph is refused
try:
    ag.backward(loss)
except Exception as e:
    print("second backward ->", type(e).__name__, "-", e)

# check by hand: loss = (y0^2 + y1^2)/2 with y = x @ w, so dloss/dy = y
# (the 2 from squaring cancels the 1/2 of the mean) and dloss/dw = x^T y
y_val = x.data @ w.data
print("x^T y =\n", x.data.T @ y_val, "(matches dloss/dw above)")

# gradients accumulate across separate graphs until cleared
z = ag.sum(ag.mul(w, w))
ag.backward(z)
print("after a second, different graph: dloss/dw + dz/dw =\n", w.grad)

# no_grad turns recording off entirely, useful for inference
with ag.no_grad():
    silent = ag.matmul(x, w)
print("under no_grad the result has no tape:", silent._tape is None)
