"""
Checking analytic gradients against finite differences
======================================================

Each scorer family ships a hand-written gradient. Central differences on
the same loss give an independent check.
"""

import numpy as np
from rtfe import FAMILIES, SampleBatch, ScorerSpec, init_state, loss_and_grad
from rtfe.oracle import fd_gradient

positives = np.array([[0, 1, 2, 0], [3, 0, 1, 1]])
negatives = np.array([[[4, 1, 2, 0], [0, 1, 5, 0]], [[3, 1, 1, 1], [2, 0, 1, 1]]])
batch = SampleBatch(positives, negatives)

for family in FAMILIES:
    spec = ScorerSpec(family, 8)
    state = init_state(spec, 6, 2, 2, seed=3)
    loss, analytic = loss_and_grad(state, spec, batch)
    numeric = fd_gradient(state, spec, batch)
    err = max(np.abs(numeric[name][1] - analytic[name][1]).max() for name in analytic)
    print(f"{family:<10} loss {loss:8.4f}   max |analytic - numeric| {err:.1e}")
