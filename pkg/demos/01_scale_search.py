"""Choosing a quantization scale by expected error instead of max|w|.

Heavy-tailed weights waste most of a 4-bit grid on a handful of outliers
when the scale is the raw maximum. Searching the scale against a histogram
of magnitudes trades a little clipping for a much finer grid everywhere
else.
"""

import numpy as np

from slim import (
    absmax_alpha,
    build_abs_histogram,
    dequantize,
    estimate_error,
    quantize_symmetric,
    slimquant_search,
)

rng = np.random.default_rng(0)
w = rng.laplace(0.0, 0.05, size=(512, 512))

hist = build_abs_histogram(w)
print(f"weights: {w.shape}, max|w| = {hist.max_abs:.4f}, histogram bins = {hist.num_bins}")

# --- 4-bit: full-range scale vs. searched scale ---------------------------
q = 4
alpha_naive = absmax_alpha(w)
alpha_best, predicted = slimquant_search(hist, q)

print(f"\n{q}-bit symmetric grid")
for label, alpha in (("absmax", alpha_naive), ("searched", alpha_best)):
    restored = dequantize(quantize_symmetric(w, alpha, q))
    measured = float(((restored - w) ** 2).mean())
    print(
        f"  {label:>8}: alpha = {alpha:.5f}  "
        f"measured mse = {measured:.3e}  predicted = {estimate_error(hist, alpha, q):.3e}"
    )

naive_err = estimate_error(hist, alpha_naive, q)
print(f"  error ratio absmax / searched = {naive_err / predicted:.2f}x")

# --- the gap closes as the grid gets finer ---------------------------------
print("\nbits  searched/absmax alpha   error ratio")
for q in (2, 3, 4, 6, 8):
    alpha_best, best_err = slimquant_search(hist, q)
    ratio = estimate_error(hist, alpha_naive, q) / best_err
    print(f"  {q}        {alpha_best / alpha_naive:6.3f}              {ratio:6.2f}x")
