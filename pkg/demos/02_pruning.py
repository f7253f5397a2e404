"""Pruning a layer to 2:4 and unstructured patterns.

Scoring weights by |w| times the activation norm of their input channel
(instead of |w| alone) keeps the weights that actually carry signal, which
shows up directly in the layer's output error.
"""

import numpy as np

from slim import (
    apply_mask,
    compute_calibration,
    magnitude_scores,
    semistructured_mask,
    unstructured_mask,
    wanda_scores,
)

rng = np.random.default_rng(1)
d_in, d_out = 256, 128

w = rng.normal(0.0, 0.02, size=(d_in, d_out))
# activations with very uneven channel scales, as attention projections have
scales = rng.permutation(np.geomspace(0.05, 5.0, d_in))
x = rng.normal(size=(2048, d_in)) * scales
stats = compute_calibration([x])

reference = x @ w
rules = {"magnitude": magnitude_scores(w), "activation-aware": wanda_scores(w, stats)}


def output_err(mask):
    return float(np.linalg.norm(x @ apply_mask(w, mask) - reference) / np.linalg.norm(reference))


# --- 2:4 under both scoring rules -------------------------------------------
for label, scores in rules.items():
    mask = semistructured_mask(scores, 2, 4)
    print(f"2:4 {label:>17}: density = {mask.density:.2f}  "
          f"relative output error = {output_err(mask):.4f}")

# --- unstructured sweep ------------------------------------------------------
print("\nunstructured")
print(f"{'drop':>6}  {'magnitude':>10}  {'activation-aware':>17}")
for ratio in (0.3, 0.5, 0.7):
    errs = [output_err(unstructured_mask(scores, ratio)) for scores in rules.values()]
    print(f"{ratio:>6.0%}  {errs[0]:>10.4f}  {errs[1]:>17.4f}")
