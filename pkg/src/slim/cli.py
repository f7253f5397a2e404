"""Command-line front end.

Subcommands: ``compress`` (run the pipeline on every tensor of a weights
container), ``eval`` (error report for an artifact against the original),
``budget`` (analytic memory/FLOP ratios), ``oracle-alpha`` (dense-grid
check of the scale search), ``calib`` (build calibration statistics from
activation containers), ``gen-fixture`` (seeded synthetic tensors).

Exit codes: 0 success, 1 usage error, 2 data or validation error.
Diagnostics go to stderr; the ``SLIM_LOG`` environment variable
(error|warn|info|debug) sets the verbosity.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifact import deserialize_compressed_layer, serialize_compressed_layer
from .budget import ArchConfig, SchemeConfig, flop_reduction, load_arch, load_preset, memory_reduction, preset_names
from .calibration import compute_calibration, load_calibration, save_calibration
from .errors import SlimError
from .lora import SaliencyVector, saliency_vector
from .pipeline import CompressedLayer, LayerCompressionConfig, compress_layer, error_report
from .prune import SparsityPattern
from .quant import estimate_error_batch, slimquant_search
from .container import read_container, write_container
from .tensor import build_abs_histogram

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

_QUANT_FLAG_TO_METHOD = {
    "absmax": "absmax",
    "group-absmax": "group_absmax",
    "slim": "slim_quant",
    "slim-o": "slim_quant_o",
    "none": "none",
}

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class UsageError(Exception):
    """Raised for bad flags/combinations; mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage problems by default; route
    # through UsageError instead so usage errors exit 1 and data errors
    # keep exit 2.
    def error(self, message):
        raise UsageError(message)


def _configure_logging() -> None:
    raw = os.environ.get("SLIM_LOG", "").strip().lower()
    level = _LOG_LEVELS.get(raw, logging.WARNING)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def _parse_shape(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise UsageError(f"shape must look like ROWSxCOLS, got {text!r}")
    try:
        rows, cols = int(parts[0]), int(parts[1])
    except ValueError:
        raise UsageError(f"shape must look like ROWSxCOLS, got {text!r}") from None
    if rows < 1 or cols < 1:
        raise UsageError(f"shape dimensions must be positive, got {text!r}")
    return rows, cols


def _single_tensor(tensors: dict, source: str, prefer: str | None = None) -> tuple[str, np.ndarray]:
    if prefer is not None:
        if prefer not in tensors:
            raise SlimError(f"{source} has no tensor named {prefer!r}")
        return prefer, tensors[prefer]
    named = {k: v for k, v in tensors.items() if not k.startswith("__")}
    if len(named) != 1:
        raise SlimError(
            f"{source} holds {len(named)} tensors; pass --tensor to pick one"
        )
    return next(iter(named.items()))


def _weight_space_report(w: np.ndarray, layer: CompressedLayer, sal: SaliencyVector) -> dict:
    w_eff = layer.corrected_weight()
    diff = w_eff - np.asarray(w, dtype=np.float64)
    weighted = sal.values[:, None] * diff
    density = layer.mask.density if layer.mask is not None else 1.0
    return {
        "weight_mse": float(np.mean(diff**2)),
        "weighted_weight_mse": float(np.mean(weighted**2)),
        "density": density,
        "alpha": layer.provenance.alpha,
    }


def _build_compress_config(args) -> LayerCompressionConfig:
    sparsity = SparsityPattern.parse(args.sparsity)
    return LayerCompressionConfig(
        quant_method=_QUANT_FLAG_TO_METHOD[args.quant],
        weight_bits=args.wbits,
        group_size=args.group_size,
        sparsity=sparsity,
        prune_scores=args.scores,
        adapter_method=args.lora,
        rank_ratio=args.rank_ratio,
        quantize_adapters=args.quantize_lora,
        input_fp8=args.input_fp8,
    )


def cmd_compress(args) -> int:
    try:
        cfg = _build_compress_config(args)
    except SlimError as exc:
        raise UsageError(str(exc)) from exc

    if cfg.needs_stats() and args.calib is None:
        raise UsageError(
            "--calib is required with --scores wanda (when pruning), "
            "--lora slim, or --quant slim-o"
        )

    weights = read_container(args.weights)
    names = [n for n in weights if not n.startswith("__")]
    if not names:
        raise SlimError(f"{args.weights} holds no weight tensors")
    stats = load_calibration(args.calib) if args.calib is not None else None

    out_stem = Path(args.out)
    report: dict[str, dict] = {}

    def one(name: str) -> tuple[str, dict]:
        layer = compress_layer(weights[name], stats, cfg)
        path = out_stem.parent / f"{out_stem.name}.{name}.slim"
        serialize_compressed_layer(layer, path)
        if stats is not None:
            sal = saliency_vector(stats)
        else:
            sal = SaliencyVector.constant(layer.shape[0])
        entry = _weight_space_report(weights[name], layer, sal)
        entry["artifact"] = str(path)
        entry["effective_bits_per_weight"] = _effective_bits_entry(layer)
        return name, entry

    if args.jobs > 1 and len(names) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
            for name, entry in pool.map(one, names):
                report[name] = entry
    else:
        for name in names:
            report[name] = one(name)[1]

    for name in names:
        entry = report[name]
        print(
            f"{name}: weight_mse={entry['weight_mse']:.6g} "
            f"weighted={entry['weighted_weight_mse']:.6g} "
            f"density={entry['density']:.4f} -> {entry['artifact']}"
        )
    if args.report is not None:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True))
        logger.info("report written to %s", args.report)
    return EXIT_OK


def _effective_bits_entry(layer: CompressedLayer) -> float:
    from .pipeline import _effective_bits

    return _effective_bits(layer)


def cmd_eval(args) -> int:
    originals = read_container(args.original)
    _, w = _single_tensor(originals, args.original, args.tensor)
    layer = deserialize_compressed_layer(args.compressed)
    inputs = read_container(args.inputs)
    _, x_eval = _single_tensor(inputs, args.inputs)
    sal = saliency_vector(compute_calibration([x_eval]))
    rep = error_report(w, layer, x_eval, sal)
    if args.report is not None:
        Path(args.report).write_text(rep.to_json())
    print(
        f"output_mse={rep.output_mse:.6g} (no adapter {rep.output_mse_no_adapter:.6g}) "
        f"weight_mse={rep.weight_mse:.6g} density={rep.density:.4f} "
        f"bits/weight={rep.effective_bits_per_weight:.3f}"
    )
    return EXIT_OK


def _load_arch_arg(text: str) -> ArchConfig:
    path = Path(text)
    if path.exists():
        return load_arch(path)
    return load_preset(text)


def cmd_budget(args) -> int:
    arch = _load_arch_arg(args.arch)
    scheme = SchemeConfig(
        density=args.density,
        weight_bits=args.wbits,
        dense_bits=args.dense_bits,
        rank_ratio=args.rank_ratio,
        adapter_bits=args.adapter_bits,
        sparsity_metadata_bits=args.meta_bits,
    )
    mem = memory_reduction(arch, scheme)
    flops = flop_reduction(arch, scheme)
    if args.json:
        print(json.dumps({"memory_reduction": round(mem, 4), "flop_reduction": round(flops, 4)}))
    else:
        print(f"memory_reduction {mem:.4f}")
        print(f"flop_reduction {flops:.4f}")
    return EXIT_OK


def cmd_oracle_alpha(args) -> int:
    if args.grid_points < 100:
        raise UsageError(f"--grid-points must be >= 100, got {args.grid_points}")
    tensors = read_container(args.weights)
    _, w = _single_tensor(tensors, args.weights, args.tensor)
    hist = build_abs_histogram(np.asarray(w, dtype=np.float64), args.bins)
    m = hist.max_abs
    if m == 0.0:
        dense_alpha, dense_err = 1.0, 0.0
        search_alpha, search_err = slimquant_search(hist, args.wbits)
    else:
        grid = m * np.arange(1, args.grid_points + 1, dtype=np.float64) / args.grid_points
        errs = estimate_error_batch(hist, grid, args.wbits)
        k = int(np.argmin(errs))
        dense_alpha, dense_err = float(grid[k]), float(errs[k])
        search_alpha, search_err = slimquant_search(hist, args.wbits)
    if dense_err > 0.0:
        ratio = search_err / dense_err
    else:
        ratio = 1.0 if search_err <= 1e-18 else float("inf")
    print(f"dense grid: alpha={dense_alpha:.6g} error={dense_err:.6g}")
    print(f"search:     alpha={search_alpha:.6g} error={search_err:.6g}")
    print(f"ratio: {ratio:.4f}")
    return EXIT_OK


def cmd_calib(args) -> int:
    batches = []
    for path in args.inputs:
        tensors = read_container(path)
        for name, value in tensors.items():
            if name.startswith("__"):
                continue
            batches.append(np.asarray(value, dtype=np.float64))
    stats = compute_calibration(batches)
    save_calibration(args.out, stats)
    print(f"{stats.token_count} tokens x {stats.d_in} channels -> {args.out}")
    return EXIT_OK


def cmd_gen_fixture(args) -> int:
    rows, cols = _parse_shape(args.shape)
    rng = np.random.default_rng(args.seed)
    size = (rows, cols)
    if args.dist == "gaussian":
        data = rng.standard_normal(size) * args.scale
    elif args.dist == "laplace":
        data = rng.laplace(0.0, args.scale, size)
    elif args.dist == "two-point":
        data = args.scale * (2.0 * rng.integers(0, 2, size) - 1.0)
    else:  # mixture: mostly narrow Gaussian with a wide outlier component
        wide = rng.random(size) < 0.1
        data = np.where(
            wide,
            rng.normal(0.0, 10.0 * args.scale, size),
            rng.normal(0.0, args.scale, size),
        )
    write_container(args.out, {args.name: data.astype(np.float32)})
    print(f"{args.dist} {rows}x{cols} seed={args.seed} -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slim", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("compress", help="compress every tensor of a weights container")
    p.add_argument("--weights", required=True, help="input tensor container")
    p.add_argument("--calib", help="calibration statistics container")
    p.add_argument("--out", required=True, help="artifact stem; writes OUT.<tensor>.slim")
    p.add_argument("--quant", choices=sorted(_QUANT_FLAG_TO_METHOD), default="slim")
    p.add_argument("--wbits", type=int, default=4, help="weight code bits (default 4)")
    p.add_argument("--group-size", type=int, default=128, help="group length (default 128)")
    p.add_argument("--sparsity", default="none", help="none, unstructured:RATIO, or N:M")
    p.add_argument("--scores", choices=("wanda", "magnitude"), default="wanda")
    p.add_argument("--lora", choices=("none", "naive", "slim"), default="none")
    p.add_argument("--rank-ratio", type=float, default=None,
                   help="adapter rank / min(dim) (default 0.1 when --lora is set)")
    p.add_argument("--quantize-lora", action="store_true", help="store adapters 4-bit grouped")
    p.add_argument("--input-fp8", action="store_true", help="snap inputs to 8-bit float at inference")
    p.add_argument("--jobs", type=int, default=1, help="compress tensors in parallel")
    p.add_argument("--report", help="write a JSON report here")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("eval", help="error report for an artifact against the original")
    p.add_argument("--original", required=True, help="container with the original weight")
    p.add_argument("--compressed", required=True, help="compressed-layer artifact")
    p.add_argument("--inputs", required=True, help="container with evaluation activations")
    p.add_argument("--tensor", help="tensor name inside --original")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("budget", help="analytic memory and FLOP reduction")
    p.add_argument("--arch", required=True,
                   help=f"arch JSON path or preset ({', '.join(preset_names())})")
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--wbits", type=int, default=16)
    p.add_argument("--rank-ratio", type=float, default=0.0)
    p.add_argument("--adapter-bits", type=int, default=16)
    p.add_argument("--dense-bits", type=int, default=16)
    p.add_argument("--meta-bits", type=float, default=0.0,
                   help="sparsity metadata bits per weight")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("oracle-alpha", help="dense-grid oracle vs the multi-grid scale search")
    p.add_argument("--weights", required=True)
    p.add_argument("--tensor", help="tensor name inside --weights")
    p.add_argument("--wbits", type=int, default=4)
    p.add_argument("--grid-points", type=int, default=5000)
    p.add_argument("--bins", type=int, default=None, help="histogram bins (default automatic)")
    p.set_defaults(func=cmd_oracle_alpha)

    p = sub.add_parser("calib", help="compute calibration statistics from activation containers")
    p.add_argument("--inputs", required=True, nargs="+", help="activation containers")
    p.add_argument("--out", required=True, help="output statistics container")
    p.set_defaults(func=cmd_calib)

    p = sub.add_parser("gen-fixture", help="deterministic synthetic tensor containers")
    p.add_argument("--dist", required=True, choices=("gaussian", "laplace", "two-point", "mixture"))
    p.add_argument("--shape", required=True, help="ROWSxCOLS")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--name", default="weights", help="tensor name in the container")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_fixture)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SlimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help / --version
        code = exc.code
        return code if isinstance(code, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
