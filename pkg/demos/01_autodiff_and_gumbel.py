"""
Gradients and relaxed sampling
==============================

The package trains everything with its own small reverse-mode engine. This
script records a few operations on a tape, runs the backward pass and compares
one gradient with a finite difference. It then shows how the Gumbel-softmax
relaxation sharpens as the temperature drops.
"""
import numpy as np

from scpm import autograd as ag
from scpm.autograd import Rng, Tape, Tensor
from scpm.model import gumbel_softmax_step

rng = np.random.default_rng(0)

# a tiny two-layer scorer: tanh(x W1) W2, summed
x = Tensor(rng.normal(size=(4, 3)))
W1 = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
W2 = Tensor(rng.normal(size=(5, 1)), requires_grad=True)

with Tape() as tape:
    out = ag.tsum(ag.matmul(ag.tanh(ag.matmul(x, W1)), W2))
ag.backward(out, tape)
print("loss:", out.item())


def loss_with(w1):
    return float((np.tanh(x.data @ w1) @ W2.data).sum())


# central difference on one entry of W1
h = 1e-5
bump = np.zeros_like(W1.data)
bump[1, 2] = h
numeric = (loss_with(W1.data + bump) - loss_with(W1.data - bump)) / (2 * h)
print("dW1[1,2] backward:", W1.grad[1, 2], " numeric:", numeric)

# Gumbel-softmax: same logits and noise, falling temperature
logits = Tensor(np.array([[1.0, 0.5, -0.3, 0.2]]))
g = ag.gumbel_noise(Rng(7), (1, 4))
for tau in (1.0, 0.5, 0.1, 0.01):
    u, _ = gumbel_softmax_step(logits, tau, g)
    print(f"tau={tau:<5} sample={np.round(u.data[0], 3)}")

# with zero noise and tau 1 the sample is just the softmax
u, _ = gumbel_softmax_step(logits, 1.0, np.zeros((1, 4)))
print("max |u - softmax|:", np.abs(u.data - ag.softmax(logits).data).max())
