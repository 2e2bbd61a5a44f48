"""Scoring a model with metamorphic test suites.

One suite per relation over a shared source set. Label-preserving suites check
self-consistency (prediction on g(x) vs prediction on x — no labels needed);
the MNIST rot180 suite checks against the mapped ground truth. The global
success rate SR_MT is the robustness metric, and the failed/passed partition
is what the retraining loop feeds on.
"""

import numpy as np

from metaretrain.data import subsample_and_split
from metaretrain.nn import SGD, Model, Tensor, backward, model_spec
from metaretrain.nn import functional as F
from metaretrain.relations import catalog_default
from metaretrain.synthdigits import make_digits
from metaretrain.tester import build_suites, partition, robustness

split = subsample_and_split(make_digits(3000, seed=5), 0.2, (0.5, 0.0, 0.5), seed=5)
model = Model(model_spec("cnn_small", (1, 28, 28), 10), seed=5)
suites = build_suites(catalog_default("mnist"), split.test, max_cases=60, seed=5)

print("untrained model:")
before = robustness(model.snapshot(), suites, pass_threshold=0.8)
print(before.to_text())

# --- a short supervised warm-up, then retest ------------------------------------
opt = SGD(0.05, momentum=0.9)
images = np.stack([s.pixels for s in split.labeled]).astype(np.float32) / 255.0
labels = F.one_hot([s.label for s in split.labeled], 10)
for epoch in range(8):
    order = np.random.default_rng(epoch).permutation(len(images))
    for start in range(0, len(images), 32):
        idx = order[start : start + 32]
        model.zero_grads()
        loss = F.softmax_cross_entropy(model.forward(Tensor(images[idx])), labels[idx])
        backward(model, loss)
        opt.step(model)

print("\nafter a short supervised warm-up:")
after = robustness(model.snapshot(), suites, pass_threshold=0.8)
print(after.to_text())

failed, passed = partition(after.outcomes)
print("\nfailed relations (these would become the next adaptive strong pool):")
print(" ", [mr.id for mr in failed])
print("passed relations:")
print(" ", [mr.id for mr in passed])
