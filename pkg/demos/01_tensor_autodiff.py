"""Tour of the tensor engine: forward graphs, backward, and a gradient check.

The engine stores float32 arrays (float64 on request), records ops into a
graph, and backpropagates in reverse topological order. Here we build a tiny
convnet, take one loss gradient, and confirm it against central finite
differences.
"""

import numpy as np

from metaretrain.nn import Conv2d, Dense, Flatten, MaxPool2d, Model, ModelSpec, ReLU, Tensor, backward
from metaretrain.nn import functional as F

# --- scalar-level autodiff on a couple of ops ---------------------------------
x = Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
y = ((x * x).sum())  # d/dx sum(x^2) = 2x
y.backward()
print("x:\n", x.data)
print("grad of sum(x^2):\n", x.grad)

# --- a small convnet end to end ------------------------------------------------
spec = ModelSpec(
    input_shape=(1, 8, 8), num_classes=4,
    layers=(Conv2d(4, 3, padding=1), ReLU(), MaxPool2d(2), Flatten(), Dense(4)),
)
model = Model(spec, seed=0, dtype=np.float64)
rng = np.random.default_rng(0)
batch = rng.normal(size=(3, 1, 8, 8))
targets = F.one_hot([0, 1, 3], 4, dtype=np.float64)

logits = model.forward(Tensor(batch))
loss = F.softmax_cross_entropy(logits, targets)
print(f"\nloss on random batch: {loss.item():.4f}")

model.zero_grads()
backward(model, loss)

# --- verify one parameter against finite differences ---------------------------
name, p = model.named_parameters()[0]
eps = 1e-4
fd = np.zeros_like(p.data)
flat, fd_flat = p.data.reshape(-1), fd.reshape(-1)
for i in range(flat.size):
    orig = flat[i]
    flat[i] = orig + eps
    up = F.softmax_cross_entropy(model.forward(Tensor(batch)), targets).item()
    flat[i] = orig - eps
    down = F.softmax_cross_entropy(model.forward(Tensor(batch)), targets).item()
    flat[i] = orig
    fd_flat[i] = (up - down) / (2 * eps)

err = np.max(np.abs(fd - p.grad) / np.maximum(1.0, np.abs(fd)))
print(f"finite-difference check on {name}: max rel err {err:.2e}")
