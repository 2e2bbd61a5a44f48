"""The relation catalog: transforms paired with label mappings.

A metamorphic relation is the pair (g, h): transform the image with g, map the
expected label with h. Most relations keep the label (h = identity); the MNIST
180-degree rotation swaps 2<->5 and 6<->9.
"""

import numpy as np

from metaretrain.relations import apply, catalog_by_id, catalog_default, compose, label_map_array
from metaretrain.synthdigits import make_digits

samples = {s.label: s for s in make_digits(10, seed=3)}

print("MNIST catalog:")
for mr in catalog_default("mnist"):
    print(f"  {mr.id:16s} kind={mr.kind:22s} strength={mr.strength}")

mrs = catalog_by_id("mnist")

# --- the non-label-preserving rotation ----------------------------------------
print("\nrot180 label map:", label_map_array(mrs["rot180"], 10).tolist())
image, label = apply(mrs["rot180"], samples[2])
print(f"a '2' under rot180 carries expected label {label}")
image, label = apply(mrs["rot180"], samples[6])
print(f"a '6' under rot180 carries expected label {label}")

# --- composition ----------------------------------------------------------------
double = compose([mrs["rot180"], mrs["rot180"]])
image, label = apply(double, samples[2])
print(f"\n{double.id}: label back to {label}, pixels identical:",
      np.array_equal(image, samples[2].pixels))

quarter_twice = compose([mrs["rot90"], mrs["rot90"]])
img_a, _ = apply(quarter_twice, samples[7])
img_b, _ = apply(mrs["rot180"], samples[7])
print(f"{quarter_twice.id} equals rot180 pixel-for-pixel:", np.array_equal(img_a, img_b))

# --- stochastic relations are keyed, hence reproducible -------------------------
n1, _ = apply(mrs["noise8"], samples[4], seed=11)
n2, _ = apply(mrs["noise8"], samples[4], seed=11)
n3, _ = apply(mrs["noise8"], samples[4], seed=12)
print("\nnoise with the same key is identical:", np.array_equal(n1, n2))
print("noise with a different key differs:", not np.array_equal(n1, n3))
