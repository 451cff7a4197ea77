"""Gradient checking the reverse-mode autodiff engine.

Builds the full sensing + reconstruction graph at a tiny size and compares
every analytic gradient against central finite differences.
"""

import numpy as np

from cfalearn import autodiff as ad
from cfalearn import data as dp
from cfalearn import reconnet, sensor

P, K, F = 2, 2, 3
rng = np.random.default_rng(0)

pattern = sensor.SensorPattern.init(P, 4, seed=1)
params = reconnet.init_params(P, K, F, seed=2)
x = rng.uniform(0.2, 1.0, size=(2, 3 * P, 3 * P, 4))
y = rng.uniform(0.0, 1.0, size=(2, P, P, 3))


def loss_value():
    sel = sensor.soft_select(pattern, alpha=3.0)
    s = sensor.measure(sel, x)
    out = reconnet.forward(s, params)
    return ad.mse_loss(out.y_hat, y)


loss = loss_value()
ad.backward(loss)
analytic = {i: p.grad.copy() for i, p in enumerate([pattern.w] + params.parameters())}

h = 1e-5
worst = 0.0
for i, p in enumerate([pattern.w] + params.parameters()):
    numeric = np.zeros_like(p.data)
    flat = p.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        up = float(loss_value().data)
        flat[j] = orig - h
        dn = float(loss_value().data)
        flat[j] = orig
        num_flat[j] = (up - dn) / (2 * h)
    denom = max(np.linalg.norm(numeric), 1e-12)
    rel = np.linalg.norm(analytic[i] - numeric) / denom
    worst = max(worst, rel)
    print(f"parameter {i}: shape {p.data.shape}, relative error {rel:.2e}")

print(f"worst relative error: {worst:.2e} (threshold 1e-4)")
assert worst < 1e-4
