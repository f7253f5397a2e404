"""Analytic memory and compute budgets across model sizes.

The calculators count transformer block weights against the embedding
tables, so the same scheme helps more as models grow (embeddings stop
dominating) and a 16-bit adapter costs relatively less on larger models.
"""

from slim import SchemeConfig, flop_reduction, load_preset, memory_reduction, preset_names

# smallest to largest; preset_names() is alphabetical
presets = ["opt-125m", "opt-350m", "opt-1.3b", "opt-2.7b", "opt-6.7b", "opt-13b",
           "llama-2-7b", "llama-2-13b"]
assert set(presets) == set(preset_names())

schemes = {
    "4-bit + 2:4": SchemeConfig(density=0.5, weight_bits=4),
    "+ rank 0.1 adapter (16-bit)": SchemeConfig(density=0.5, weight_bits=4, rank_ratio=0.1),
    "+ rank 0.1 adapter (4-bit)": SchemeConfig(
        density=0.5, weight_bits=4, rank_ratio=0.1, adapter_bits=4
    ),
}

width = max(len(name) for name in schemes) + 2

print("memory, fraction of the dense 16-bit model (lower is better)")
print(" " * width + "  ".join(f"{p:>10}" for p in presets))
for name, scheme in schemes.items():
    row = "  ".join(f"{memory_reduction(load_preset(p), scheme):>10.2f}" for p in presets)
    print(f"{name:<{width}}{row}")

print("\nmatmul speedup over dense (higher is better, bit-width agnostic)")
flop_schemes = {
    "2:4 alone": SchemeConfig(density=0.5),
    "2:4 + rank 0.1 adapter": SchemeConfig(density=0.5, rank_ratio=0.1),
}
for name, scheme in flop_schemes.items():
    row = "  ".join(f"{flop_reduction(load_preset(p), scheme):>10.2f}" for p in presets)
    print(f"{name:<{width}}{row}")
