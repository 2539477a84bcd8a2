"""
Reverse-mode gradients, the fused LSTM and finite-difference checks
===================================================================

Every differentiable step of the model runs on a small tape-based engine.
This script builds a toy loss, reads its gradients off the tape, verifies
them against central differences and takes a few Adam steps.
"""

import numpy as np

from deltalag.tensorcore import (
    AdamState, ParamSet, Tape, adam_step, encoder_forward, grad_check, init_encoder,
    matmul, reduce_mean, square, sub, tanh,
)

rng = np.random.default_rng(0)

# A tiny regression: y ~ tanh(x W).  Parameters live in a named ParamSet.
x = rng.normal(size=(16, 3))
y = np.tanh(x @ np.array([[0.5], [-1.0], [2.0]]))
params = ParamSet({"W": rng.normal(size=(3, 1))})


def loss(p):
    return reduce_mean(square(sub(tanh(matmul(x, p["W"])), y)))


# Recording a forward pass on a Tape lets backward() fill every .grad.
with Tape() as tape:
    value = loss(params)
tape.backward(value)
print("loss", value.item())
print("dL/dW", params["W"].grad.ravel())

# The same gradients, checked against central differences.
params.zero_grad()
print("max relative error vs finite differences:", grad_check(loss, params))

# Adam drives the toy loss down.
state = AdamState.for_params(params, lr=0.05)
for step in range(200):
    with Tape() as tape:
        value = loss(params)
    tape.backward(value)
    adam_step(params, state)
print("loss after 200 Adam steps", loss(params).item())

# The LSTM encoder is one fused op with a hand-written backward pass.
# A batch of windows (L, B, F) yields hidden states (L, B, N).
enc = ParamSet(init_encoder(rng, n_features=6, hidden=4))
windows = rng.normal(size=(10, 5, 6))
print("hidden states", encoder_forward(windows, enc).shape)
print("encoder gradient check:",
      grad_check(lambda p: reduce_mean(square(encoder_forward(windows, p))), enc))
