#!/usr/bin/env python3
"""How sample adaptability is measured.

Run me directly:  python3 demos/adaptability_walkthrough.py

Given teacher logits z_p and student logits z_q for a batch of samples, we
build the disagreement vector p_ds = softmax(z_p - z_q), take its entropy,
and normalize against the uniform maximum ln C. A sample whose h' is near 1
tells the student nothing new (the two networks already agree); a sample
near 0 is so far outside the student's reach that training on it mostly
adds noise. The generator is rewarded for keeping h' between two margins.
"""

import numpy as np

from adadfq.adaptability import (
    classify_samples,
    disagreement_vector,
    info_entropy,
    margin_terms,
    normalize_entropy,
)
from adadfq.tensor import Tensor

C = 4
rng = np.random.default_rng(7)

# ---------------------------------------------------------------------------
# 1. Three hand-built samples: agreement, mild disagreement, strong one
# ---------------------------------------------------------------------------

z_p = Tensor(np.array([
    [4.0, 0.0, 0.0, 0.0],   # teacher confident in class 0
    [4.0, 0.0, 0.0, 0.0],
    [4.0, 0.0, 0.0, 0.0],
]))
z_q = Tensor(np.array([
    [4.0, 0.0, 0.0, 0.0],   # student agrees exactly
    [2.5, 1.5, 0.0, 0.0],   # student leans the same way, less sure
    [0.0, 5.0, 0.0, 0.0],   # student convinced it is class 1
]))
y = np.eye(C)[[0, 0, 0]]

p_ds = disagreement_vector(z_p, z_q)
h = info_entropy(p_ds)
h_prime = normalize_entropy(h, C)

print("p_ds rows:")
print(np.round(p_ds.data, 3))
print("entropy      ", np.round(h.data, 3), f" (max ln {C} = {np.log(C):.3f})")
print("normalized h'", np.round(h_prime.data, 3))
print("kinds        ", classify_samples(z_p.data, z_q.data, y))

# Identical logits give a uniform p_ds and the top entropy; the strongly
# disagreeing sample drops toward zero after normalization.

# ---------------------------------------------------------------------------
# 2. The margin penalty
# ---------------------------------------------------------------------------
# The generator maximizes a score that includes
#   -max(lambda_l - h', 0) - max(h' - lambda_u, 0)
# so samples outside [lambda_l, lambda_u] cost it linearly. Samples below
# the lower margin are too hard (the student cannot learn from them yet);
# samples above the upper margin are too easy to be informative.

for lo, hi in [(0.1, 0.8), (0.4, 0.6)]:
    m = margin_terms(h_prime, lo, hi)
    print(f"margin [{lo}, {hi}] -> penalty {float(m.data):+.4f}")

# ---------------------------------------------------------------------------
# 3. A random batch, and what calibration does to it
# ---------------------------------------------------------------------------
# Pull the student's logits 30% of the way toward the teacher's and watch
# every sample's raw disagreement entropy rise: agreement pushes p_ds toward
# uniform, which is exactly what the student's calibration loss rewards.

z_p = Tensor(rng.normal(size=(6, C)))
z_q = Tensor(rng.normal(size=(6, C)))
before = info_entropy(disagreement_vector(z_p, z_q))
z_q_pulled = Tensor(0.7 * z_q.data + 0.3 * z_p.data)
after = info_entropy(disagreement_vector(z_p, z_q_pulled))
print("\nentropy before calibration step:", np.round(before.data, 3))
print("entropy after pulling toward z_p:", np.round(after.data, 3))
