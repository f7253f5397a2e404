"""Release acceptance gate.

One test per release criterion. Each prints a single
``[criterion N] <label>: PASS|FAIL`` line (run pytest with ``-s`` to see
the lines stream). Everything goes through public entry points and is
checked against the independent reference implementations in oracles.py.
"""

from __future__ import annotations

import dataclasses
import io
import json
import time
from contextlib import contextmanager, redirect_stdout

import numpy as np

from slim import (
    CalibrationStats,
    IoError,
    LayerCompressionConfig,
    SaliencyVector,
    SparsityPattern,
    build_abs_histogram,
    compress_layer,
    compute_calibration,
    error_report,
    estimate_error,
    fp8_fake_quantize,
    layer_output,
    magnitude_scores,
    naive_lora,
    saliency_vector,
    slim_lora,
    slimquant_search,
    unstructured_mask,
    wanda_scores,
)
from slim.artifact import layer_from_bytes, layer_to_bytes
from slim.cli import main as cli_main
from slim.container import MAGIC, container_from_bytes, container_to_bytes

from oracles import (
    dense_grid_alpha,
    fp8_snap_oracle,
    fp8_value_table,
    per_element_quant_mse,
    topk_column_mask,
)


@contextmanager
def verdict(number: int, label: str):
    try:
        yield
    except BaseException:
        print(f"[criterion {number}] {label}: FAIL")
        raise
    print(f"[criterion {number}] {label}: PASS")


def _draw(dist: str, shape: tuple, scale: float, rng) -> np.ndarray:
    n = int(np.prod(shape))
    if dist == "gaussian":
        w = rng.normal(0.0, scale, n)
    elif dist == "laplace":
        w = rng.laplace(0.0, scale, n)
    else:
        # mixture: mostly narrow gaussian with a 10% wide component
        w = rng.normal(0.0, scale, n)
        w[rng.random(n) < 0.1] *= 10.0
    return w.reshape(shape)


# ---------------------------------------------------------------------------
# 1. Scale search quality


def test_criterion_1_scale_search_quality():
    with verdict(1, "scale search near dense grid, never worse than absmax"):
        dists = ["gaussian", "laplace", "mixture"]
        results = []
        elapsed = 0.0
        for i in range(50):
            rng = np.random.default_rng(1000 + i)
            t0 = time.perf_counter()
            w = _draw(dists[i % 3], (100, 100) if i % 2 == 0 else (250, 400),
                      0.25 * (1 + i % 7), rng)
            h = build_abs_histogram(w)
            _, err = slimquant_search(h, 4)
            elapsed += time.perf_counter() - t0
            results.append((h, err))
        near_dense = 0
        for h, err in results:
            _, dense_err = dense_grid_alpha(h, 4, points=5000)
            if err <= 1.02 * dense_err:
                near_dense += 1
            # the full-range scale is on the coarse grid, so the search
            # can never lose to it
            assert err <= estimate_error(h, h.max_abs, 4)
        assert near_dense >= 48, f"within 1.02x of dense grid on only {near_dense}/50"
        assert elapsed < 30.0, f"50 searches took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 2. Histogram error estimate vs. per-element truth


def test_criterion_2_error_estimate_accuracy():
    with verdict(2, "histogram estimate within 2% of per-element MSE"):
        for i in range(9):
            rng = np.random.default_rng(2000 + i)
            w = _draw(["gaussian", "laplace", "mixture"][i % 3], (100, 100),
                      1.0 + 0.5 * i, rng)
            h = build_abs_histogram(w, 2000)
            m = h.max_abs
            for alpha in (0.5 * m, 0.8 * m, m, slimquant_search(h, 4)[0]):
                est = estimate_error(h, alpha, 4)
                exact = per_element_quant_mse(w, alpha, 4)
                assert abs(est - exact) <= 0.02 * exact, (i, alpha)


# ---------------------------------------------------------------------------
# 3. Low-rank fits beat random competitors


def test_criterion_3_adapters_beat_random_factor_pairs():
    with verdict(3, "rank-r fits beat 20 random factor pairs each"):
        for i in range(100):
            rng = np.random.default_rng(3000 + i)
            w = rng.normal(size=(16, 16))
            w_c = w + 0.5 * rng.normal(size=(16, 16))
            target = w - w_c
            r = int(rng.integers(1, 6))
            s = SaliencyVector(rng.uniform(0.5, 2.0, 16))
            res_naive = np.linalg.norm(target - naive_lora(w, w_c, r).correction())
            res_slim = np.linalg.norm(
                s.values[:, None] * (target - slim_lora(w, w_c, s, r).correction())
            )
            for _ in range(20):
                competitor = rng.normal(size=(16, r)) @ rng.normal(size=(r, 16))
                gap = target - competitor
                assert res_naive <= np.linalg.norm(gap) + 1e-6
                assert res_slim <= np.linalg.norm(s.values[:, None] * gap) + 1e-6
            scale = np.linalg.norm(target)
            full_naive = naive_lora(w, w_c, 16).correction()
            full_slim = slim_lora(w, w_c, s, 16).correction()
            assert np.linalg.norm(target - full_naive) < 1e-5 * scale
            assert np.linalg.norm(target - full_slim) < 1e-5 * scale


# ---------------------------------------------------------------------------
# 4. Pruning exactness


def test_criterion_4_pruning_exactness():
    with verdict(4, "2:4 group counts exact, unstructured matches sort oracle"):
        ratios = [0.5, 0.25, 0.75, 0.3, 0.6]
        cfg = LayerCompressionConfig(
            quant_method="none",
            sparsity=SparsityPattern.parse("2:4"),
            prune_scores="magnitude",
        )
        for i in range(1000):
            rng = np.random.default_rng(4000 + i)
            layer = compress_layer(rng.normal(size=(16, 8)), None, cfg)
            kept = np.count_nonzero(layer.effective_weight().reshape(4, 4, 8), axis=1)
            assert (kept == 2).all()
            if i % 5 == 0:
                # coarse integer scores force heavy ties
                scores = rng.integers(0, 4, size=(12, 6)).astype(np.float64)
            else:
                scores = rng.normal(size=(12, 6))
            ratio = ratios[i % 5]
            mask = unstructured_mask(scores, ratio)
            assert np.array_equal(mask.keep, topk_column_mask(scores, ratio))


# ---------------------------------------------------------------------------
# 5. The weighted adapter strictly helps


def test_criterion_5_adapter_strictly_reduces_error():
    with verdict(5, "adapter cuts weighted weight error and output error"):
        cfg = LayerCompressionConfig(
            quant_method="slim_quant",
            weight_bits=4,
            sparsity=SparsityPattern.parse("2:4"),
            prune_scores="wanda",
            adapter_method="slim",
            rank_ratio=0.1,
        )
        for i in range(50):
            rng = np.random.default_rng(5000 + i)
            w = rng.normal(size=(64, 64))
            x = rng.normal(size=(128, 64))
            stats = compute_calibration([x])
            layer = compress_layer(w, stats, cfg)
            assert layer.adapter is not None and layer.adapter.rank == 7
            bare = dataclasses.replace(layer, adapter=None)
            sal = saliency_vector(stats)
            with_adapter = error_report(w, layer, x, sal)
            without = error_report(w, bare, x, sal)
            assert with_adapter.weighted_weight_mse < without.weighted_weight_mse
            assert with_adapter.output_mse < without.output_mse


# ---------------------------------------------------------------------------
# 6. Frozen budget tables through the command line


OPT_PRESETS = ["opt-125m", "opt-350m", "opt-1.3b", "opt-2.7b", "opt-6.7b", "opt-13b"]
MEMORY_ROWS = {
    (): [0.40, 0.30, 0.25, 0.17, 0.15, 0.14],
    ("--rank-ratio", "0.1"): [0.50, 0.42, 0.38, 0.31, 0.30, 0.29],
    ("--rank-ratio", "0.1", "--adapter-bits", "4"): [0.42, 0.33, 0.28, 0.20, 0.19, 0.18],
}
FLOP_ROWS = {
    (): [1.52, 1.66, 1.75, 1.91, 1.94, 1.96],
    ("--rank-ratio", "0.1"): [1.32, 1.39, 1.43, 1.50, 1.51, 1.52],
}


def _budget_cli(preset: str, *extra: str) -> dict:
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = cli_main(["budget", "--arch", preset, "--density", "0.5",
                         "--wbits", "4", "--json", *extra])
    assert code == 0
    return json.loads(buf.getvalue())


def test_criterion_6_budget_tables():
    with verdict(6, "reduction tables reproduced by the budget command"):
        base = _budget_cli("opt-125m")
        lora16 = _budget_cli("opt-125m", "--rank-ratio", "0.1")
        lora4 = _budget_cli("opt-125m", "--rank-ratio", "0.1", "--adapter-bits", "4")
        assert abs(base["memory_reduction"] - 0.40) <= 0.005
        assert abs(lora16["memory_reduction"] - 0.50) <= 0.005
        assert abs(lora4["memory_reduction"] - 0.42) <= 0.005
        assert abs(base["flop_reduction"] - 1.52) <= 0.005
        assert abs(lora16["flop_reduction"] - 1.32) <= 0.005
        for flags, row in MEMORY_ROWS.items():
            for preset, expected in zip(OPT_PRESETS, row):
                got = _budget_cli(preset, *flags)["memory_reduction"]
                assert abs(got - expected) <= 0.01, (preset, flags)
        for flags, row in FLOP_ROWS.items():
            for preset, expected in zip(OPT_PRESETS, row):
                got = _budget_cli(preset, *flags)["flop_reduction"]
                assert abs(got - expected) <= 0.01, (preset, flags)


# ---------------------------------------------------------------------------
# 7. Exact equivalences


def test_criterion_7_equivalences():
    with verdict(7, "scaling round trip, constant saliency, unit norms"):
        # channel scaling alone must not change the layer output
        cfg = LayerCompressionConfig(quant_method="none", channel_scaling=True,
                                     scale_fraction=0.05)
        for i in range(20):
            rng = np.random.default_rng(7000 + i)
            w = rng.normal(size=(48, 32))
            x = rng.normal(size=(96, 48))
            layer = compress_layer(w, compute_calibration([x]), cfg)
            assert layer.channel_scaling is not None
            ref = x @ w
            assert np.linalg.norm(layer_output(x, layer) - ref) <= 1e-6 * np.linalg.norm(ref)
        # a constant saliency reduces the weighted fit to the plain one
        for i in range(20):
            rng = np.random.default_rng(7100 + i)
            w = rng.normal(size=(24, 18))
            w_c = w + 0.4 * rng.normal(size=(24, 18))
            r = 1 + i % 5
            const = SaliencyVector(np.full(24, 1.7))
            slim_corrected = w_c + slim_lora(w, w_c, const, r).correction()
            naive_corrected = w_c + naive_lora(w, w_c, r).correction()
            assert np.allclose(slim_corrected, naive_corrected, rtol=1e-5, atol=1e-5)
        # unit activation norms collapse activation-weighted scores to magnitudes
        for i in range(100):
            rng = np.random.default_rng(7200 + i)
            w = rng.normal(size=(20, 12))
            stats = CalibrationStats(d_in=20, mean_abs=np.full(20, 0.8),
                                     l2_norm=np.ones(20), token_count=7)
            assert np.array_equal(wanda_scores(w, stats), magnitude_scores(w))


# ---------------------------------------------------------------------------
# 8. Serialization: bit-exact round trips, fuzzed inputs never crash


_RT_SHAPES = [(8, 8), (16, 12), (12, 16), (4, 20)]
_RT_CONFIGS = [
    LayerCompressionConfig(quant_method="none"),
    LayerCompressionConfig(quant_method="absmax", weight_bits=5),
    LayerCompressionConfig(quant_method="group_absmax", weight_bits=3, group_size=8),
    LayerCompressionConfig(quant_method="slim_quant"),
    LayerCompressionConfig(quant_method="slim_quant_o", scale_fraction=0.1),
    LayerCompressionConfig(sparsity=SparsityPattern.parse("2:4")),
    LayerCompressionConfig(sparsity=SparsityPattern.parse("unstructured:0.4"),
                           prune_scores="magnitude"),
    LayerCompressionConfig(adapter_method="naive", rank_ratio=0.25),
    LayerCompressionConfig(adapter_method="slim", rank_ratio=0.25),
    LayerCompressionConfig(adapter_method="slim", rank_ratio=0.5,
                           quantize_adapters=True, group_size=8),
    LayerCompressionConfig(quant_method="slim_quant_o",
                           sparsity=SparsityPattern.parse("2:4"),
                           adapter_method="slim", rank_ratio=0.25,
                           quantize_adapters=True, group_size=8, input_fp8=True),
]
_RT_DTYPES = [np.float32, np.int8, np.uint8]
_RT_TENSOR_SHAPES = [(), (1,), (7,), (3, 5), (2, 3, 4), (0,), (4, 0, 2)]


def _random_container(rng) -> dict:
    tensors = {}
    for _ in range(int(rng.integers(0, 5))):
        while True:
            name = "".join(chr(97 + c) for c in rng.integers(0, 26, int(rng.integers(1, 9))))
            if name not in tensors:
                break
        dtype = _RT_DTYPES[int(rng.integers(0, 3))]
        shape = _RT_TENSOR_SHAPES[int(rng.integers(0, len(_RT_TENSOR_SHAPES)))]
        if dtype is np.float32:
            tensors[name] = rng.normal(size=shape).astype(np.float32)
        else:
            lo = -100 if dtype is np.int8 else 0
            tensors[name] = rng.integers(lo, 100, size=shape).astype(dtype)
    return tensors


def _mutate(base: bytes, rng) -> bytes:
    buf = bytearray(base)
    op = int(rng.integers(0, 6))
    if op == 0 and buf:
        for _ in range(int(rng.integers(1, 17))):
            buf[int(rng.integers(0, len(buf)))] = int(rng.integers(0, 256))
    elif op == 1:
        buf = buf[: int(rng.integers(0, len(buf) + 1))]
    elif op == 2:
        buf += bytes(rng.integers(0, 256, int(rng.integers(1, 65))).astype(np.uint8))
    elif op == 3:
        noise = bytes(rng.integers(0, 256, int(rng.integers(0, 64))).astype(np.uint8))
        buf = bytearray(MAGIC + noise if rng.random() < 0.5 else noise)
    elif op == 4 and len(buf) >= 20:
        # hit the fixed-size prefix specifically
        buf[int(rng.integers(0, 20))] = int(rng.integers(0, 256))
    else:
        cut = int(rng.integers(0, len(buf) + 1))
        buf = buf[:cut] + buf[: int(rng.integers(0, len(buf) + 1))]
    return bytes(buf)


def test_criterion_8_serialization_round_trip_and_fuzz():
    with verdict(8, "1000 bit-exact round trips, 10k fuzz cases contained"):
        fuzz_bases = []
        for i in range(600):
            rng = np.random.default_rng(8000 + i)
            tensors = _random_container(rng)
            blob = container_to_bytes(tensors)
            back = container_from_bytes(blob)
            assert container_to_bytes(back) == blob
            assert set(back) == set(tensors)
            for name, arr in tensors.items():
                assert back[name].dtype == arr.dtype
                assert np.array_equal(back[name], arr)
            if i < 4:
                fuzz_bases.append(blob)
        for i in range(400):
            rng = np.random.default_rng(8600 + i)
            cfg = _RT_CONFIGS[i % len(_RT_CONFIGS)]
            d_in, d_out = _RT_SHAPES[i % len(_RT_SHAPES)]
            w = rng.normal(size=(d_in, d_out))
            stats = compute_calibration([rng.normal(size=(3 * d_in, d_in))])
            blob = layer_to_bytes(compress_layer(w, stats, cfg))
            assert layer_to_bytes(layer_from_bytes(blob)) == blob
            if i < 4:
                fuzz_bases.append(blob)

        rng = np.random.default_rng(86_000)
        failures = []
        for i in range(10_000):
            payload = _mutate(fuzz_bases[int(rng.integers(0, len(fuzz_bases)))], rng)
            reader = container_from_bytes if i % 2 == 0 else layer_from_bytes
            try:
                reader(payload)
            except IoError:
                pass
            except Exception as exc:  # noqa: BLE001 - the point is catching escapes
                failures.append((i, type(exc).__name__, str(exc)[:100]))
        assert not failures, failures[:5]


# ---------------------------------------------------------------------------
# 9. 8-bit float snapping vs. the exhaustive table


def test_criterion_9_fp8_exactness():
    with verdict(9, "fp8 snapping matches table oracle, switch at 448"):
        tables = {v: fp8_value_table(v) for v in ("E4M3", "E5M2")}
        rng = np.random.default_rng(9000)

        mags = np.exp(rng.uniform(np.log(1e-5), np.log(448.0), 5000))
        small = np.where(rng.random(5000) < 0.5, -1.0, 1.0) * np.minimum(mags, 440.0)
        small[0] = 440.0  # keep the max below the switch point
        y, fmt = fp8_fake_quantize(small.reshape(50, 100))
        assert fmt.variant == "E4M3"
        expected = np.array([fp8_snap_oracle(float(v), tables["E4M3"]) for v in small])
        assert np.array_equal(y.ravel(), expected)

        mags = np.exp(rng.uniform(np.log(1e-3), np.log(57344.0), 5000))
        big = np.where(rng.random(5000) < 0.5, -1.0, 1.0) * mags
        big[0] = 5000.0  # force the wide format
        y, fmt = fp8_fake_quantize(big.reshape(100, 50))
        assert fmt.variant == "E5M2"
        expected = np.array([fp8_snap_oracle(float(v), tables["E5M2"]) for v in big])
        assert np.array_equal(y.ravel(), expected)

        above = np.nextafter(448.0, np.inf)
        assert fp8_fake_quantize(np.array([[448.0]]))[1].variant == "E4M3"
        assert fp8_fake_quantize(np.array([[-448.0]]))[1].variant == "E4M3"
        assert fp8_fake_quantize(np.array([[above]]))[1].variant == "E5M2"
        assert fp8_fake_quantize(np.array([[-above]]))[1].variant == "E5M2"
