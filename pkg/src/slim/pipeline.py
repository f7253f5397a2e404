"""Layer compression pipeline: quantize, prune, compensate.

A layer is compressed in a fixed order: optional activation-aware channel
scaling, weight quantization, pruning of the quantized weight, then a
low-rank adapter fitted to whatever error the first steps left behind
(optionally quantized itself). Each stage's result is kept on the
artifact so inference and reporting can replay the exact arithmetic.

Weights are stored in the scaled coordinate system when channel scaling is
on; inference divides the matching activation channels by the scale
factor, and adapters always live in the caller's original coordinates so
``w ~ effective_weight + left @ right`` holds as seen by the caller.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import prune as prune_mod
from .calibration import CalibrationStats
from .errors import ConfigInvalid, ShapeMismatch
from .lora import (
    LowRankAdapter,
    SaliencyVector,
    default_rank,
    naive_lora,
    quantize_adapter,
    saliency_vector,
    slim_lora,
)
from .prune import SparsityMask, SparsityPattern
from .quant import (
    ChannelScaling,
    QuantizedTensor,
    absmax_alpha,
    activation_aware_scale,
    compensate_activations,
    dequantize,
    fp8_fake_quantize,
    group_absmax_quantize,
    quantize_symmetric,
    slimquant_search,
)
from .tensor import as_matrix, build_abs_histogram

logger = logging.getLogger(__name__)

__all__ = [
    "LayerCompressionConfig",
    "Provenance",
    "CompressedLayer",
    "ErrorReport",
    "compress_layer",
    "layer_output",
    "error_report",
]

QUANT_METHODS = ("absmax", "group_absmax", "slim_quant", "slim_quant_o", "none")
SCORE_METHODS = ("wanda", "magnitude")
ADAPTER_METHODS = ("naive", "slim", "none")

#: Bit width assumed for uncompressed storage in effective-bit accounting.
DENSE_BITS = 16


@dataclass(frozen=True)
class LayerCompressionConfig:
    """Knobs for one compression run.

    Attributes:
        quant_method: One of absmax, group_absmax, slim_quant, slim_quant_o
            (scale search plus channel scaling), none.
        weight_bits: Integer code width for the weights, 2..8.
        group_size: Group length for grouped quantization (weights when
            quant_method is group_absmax, and adapter factors).
        sparsity: Target sparsity pattern, or None to skip pruning.
        prune_scores: "wanda" (activation-weighted) or "magnitude".
        adapter_method: "naive", "slim", or "none".
        rank_ratio: Adapter rank as a fraction of min(d_in, d_out). Must be
            left at None when adapter_method is "none"; defaults to 0.1
            otherwise.
        quantize_adapters: Store adapter factors 4-bit group-quantized.
        input_fp8: Snap activations to an 8-bit float grid at inference.
        channel_scaling: Force channel scaling on/off; None means "on for
            slim_quant_o, off otherwise".
        scale_fraction: Fraction of input channels boosted by scaling.
        scale_factor: Boost multiplier (> 1).
    """

    quant_method: str = "slim_quant"
    weight_bits: int = 4
    group_size: int = 128
    sparsity: SparsityPattern | None = None
    prune_scores: str = "wanda"
    adapter_method: str = "none"
    rank_ratio: float | None = None
    quantize_adapters: bool = False
    input_fp8: bool = False
    channel_scaling: bool | None = None
    scale_fraction: float = 0.01
    scale_factor: float = 2.0

    def __post_init__(self):
        if self.quant_method not in QUANT_METHODS:
            raise ConfigInvalid(f"unknown quant_method {self.quant_method!r}")
        if self.prune_scores not in SCORE_METHODS:
            raise ConfigInvalid(f"unknown prune_scores {self.prune_scores!r}")
        if self.adapter_method not in ADAPTER_METHODS:
            raise ConfigInvalid(f"unknown adapter_method {self.adapter_method!r}")
        if self.quant_method != "none" and not (2 <= int(self.weight_bits) <= 8):
            raise ConfigInvalid(f"weight_bits {self.weight_bits} not in [2, 8]")
        if self.group_size < 1:
            raise ConfigInvalid(f"group_size must be >= 1, got {self.group_size}")
        if self.adapter_method == "none":
            if self.rank_ratio is not None:
                raise ConfigInvalid("rank_ratio given but adapter_method is none")
            if self.quantize_adapters:
                raise ConfigInvalid("quantize_adapters given but adapter_method is none")
        else:
            r = self.effective_rank_ratio
            if not (0.0 < r <= 1.0):
                raise ConfigInvalid(f"rank_ratio must be in (0, 1], got {r}")
        if not (0.0 < self.scale_fraction <= 1.0):
            raise ConfigInvalid(f"scale_fraction must be in (0, 1], got {self.scale_fraction}")
        if not (self.scale_factor > 1.0):
            raise ConfigInvalid(f"scale_factor must be > 1, got {self.scale_factor}")

    @property
    def effective_rank_ratio(self) -> float:
        from .lora import DEFAULT_RANK_RATIO

        if self.rank_ratio is not None:
            return float(self.rank_ratio)
        return DEFAULT_RANK_RATIO

    @property
    def scaling_enabled(self) -> bool:
        if self.channel_scaling is not None:
            return bool(self.channel_scaling)
        return self.quant_method == "slim_quant_o"

    def needs_stats(self) -> bool:
        """True when this configuration reads calibration statistics."""
        return (
            self.scaling_enabled
            or self.adapter_method == "slim"
            or (self.sparsity is not None and self.prune_scores == "wanda")
        )


@dataclass(frozen=True)
class Provenance:
    """Where the artifact came from: source shape plus chosen scale.

    ``created_at`` stays None unless the caller sets it, keeping artifacts
    byte-identical across runs by default.
    """

    rows: int
    cols: int
    alpha: float | None = None
    created_at: str | None = None


@dataclass(frozen=True)
class CompressedLayer:
    """Everything produced by :func:`compress_layer` for one weight matrix."""

    weights: QuantizedTensor | np.ndarray
    mask: SparsityMask | None
    adapter: LowRankAdapter | None
    channel_scaling: ChannelScaling | None
    config: LayerCompressionConfig
    provenance: Provenance

    @property
    def shape(self) -> tuple[int, int]:
        return (self.provenance.rows, self.provenance.cols)

    def stored_weight(self) -> np.ndarray:
        """Dense weight in stored (possibly channel-scaled) coordinates."""
        if isinstance(self.weights, QuantizedTensor):
            return dequantize(self.weights)
        return np.asarray(self.weights, dtype=np.float64)

    def effective_weight(self) -> np.ndarray:
        """Dense compressed weight in the caller's coordinates (no adapter)."""
        w = self.stored_weight()
        scaling = self.channel_scaling
        if scaling is not None and scaling.channel_indices.size:
            w = w.copy()
            w[scaling.channel_indices, :] /= scaling.factor
        return w

    def corrected_weight(self) -> np.ndarray:
        """effective_weight plus the adapter correction, if any."""
        w = self.effective_weight()
        if self.adapter is not None:
            w = w + self.adapter.correction()
        return w


@dataclass(frozen=True)
class ErrorReport:
    """Reconstruction-quality summary for one compressed layer.

    All mean-squared errors are normalized per element. ``density`` is the
    kept-weight fraction; ``effective_bits_per_weight`` charges the weight
    codes at their bit width times density plus the adapter storage spread
    over the weight count.
    """

    weight_mse: float
    weighted_weight_mse: float
    output_mse: float
    output_mse_no_adapter: float
    density: float
    effective_bits_per_weight: float

    def to_dict(self) -> dict:
        return {
            "weight_mse": self.weight_mse,
            "weighted_weight_mse": self.weighted_weight_mse,
            "output_mse": self.output_mse,
            "output_mse_no_adapter": self.output_mse_no_adapter,
            "density": self.density,
            "effective_bits_per_weight": self.effective_bits_per_weight,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _quantize_weights(w_s: np.ndarray, cfg: LayerCompressionConfig):
    """Quantize the (possibly scaled) weight; returns (stored, alpha)."""
    method = cfg.quant_method
    if method == "none":
        return w_s.astype(np.float64), None
    if method == "absmax":
        alpha = absmax_alpha(w_s)
        return quantize_symmetric(w_s, alpha, cfg.weight_bits), alpha
    if method == "group_absmax":
        return group_absmax_quantize(w_s, cfg.group_size, cfg.weight_bits), None
    # slim_quant / slim_quant_o share the histogram-driven scale search.
    hist = build_abs_histogram(w_s)
    alpha, err = slimquant_search(hist, cfg.weight_bits)
    logger.debug("scale search: alpha=%.6g expected_mse=%.6g", alpha, err)
    return quantize_symmetric(w_s, alpha, cfg.weight_bits), alpha


def _mask_weights(stored, mask: SparsityMask):
    """Zero dropped entries in the stored representation."""
    if isinstance(stored, QuantizedTensor):
        codes = np.where(mask.keep, stored.codes, np.int8(0)).astype(np.int8)
        return QuantizedTensor(
            codes=codes,
            scales=stored.scales,
            group_size=stored.group_size,
            bits=stored.bits,
        )
    return np.where(mask.keep, stored, 0.0)


def compress_layer(
    w,
    stats: CalibrationStats | None,
    cfg: LayerCompressionConfig,
) -> CompressedLayer:
    """Run the full pipeline on one weight matrix.

    Order: optional channel scaling, quantization, pruning of the
    quantized weight, adapter fit against the total remaining error
    (in the caller's coordinates), optional adapter quantization.

    Args:
        w: Weight matrix, input channels as rows.
        stats: Calibration statistics; required whenever the configuration
            uses them (channel scaling, activation-weighted scores, or the
            saliency-weighted adapter), otherwise may be None.
        cfg: Pipeline configuration.

    Raises:
        ConfigInvalid: required statistics missing.
        ShapeMismatch: statistics do not match the weight's input dimension.
    """
    w0 = as_matrix(w, "w")
    d_in, d_out = w0.shape
    if stats is not None and stats.d_in != d_in:
        raise ShapeMismatch(f"stats cover {stats.d_in} channels, weight has {d_in} rows")
    if stats is None and cfg.needs_stats():
        raise ConfigInvalid(
            "calibration statistics are required by this configuration "
            "(channel scaling, wanda scores, or slim adapter)"
        )

    # 1. Channel scaling (stored coordinates = scaled coordinates).
    scaling = None
    w_s = w0
    if cfg.scaling_enabled:
        w_s, scaling = activation_aware_scale(
            w0, stats, cfg.scale_fraction, cfg.scale_factor
        )

    # 2. Quantize.
    stored, alpha = _quantize_weights(w_s, cfg)

    # 3. Prune the quantized weight (scores see the caller-coordinate values).
    mask = None
    if cfg.sparsity is not None:
        provisional = CompressedLayer(
            weights=stored, mask=None, adapter=None,
            channel_scaling=scaling, config=cfg,
            provenance=Provenance(rows=d_in, cols=d_out, alpha=alpha),
        )
        w_q = provisional.effective_weight()
        if cfg.prune_scores == "wanda":
            scores = prune_mod.wanda_scores(w_q, stats)
        else:
            scores = prune_mod.magnitude_scores(w_q)
        mask = prune_mod.build_mask(scores, cfg.sparsity)
        stored = _mask_weights(stored, mask)

    layer = CompressedLayer(
        weights=stored, mask=mask, adapter=None,
        channel_scaling=scaling, config=cfg,
        provenance=Provenance(rows=d_in, cols=d_out, alpha=alpha),
    )

    # 4. Adapter against the total error left after steps 1-3.
    if cfg.adapter_method != "none":
        w_c = layer.effective_weight()
        r = default_rank(d_in, d_out, cfg.effective_rank_ratio)
        if cfg.adapter_method == "slim":
            adapter = slim_lora(w0, w_c, saliency_vector(stats), r)
        else:
            adapter = naive_lora(w0, w_c, r)
        if cfg.quantize_adapters:
            adapter = quantize_adapter(adapter, cfg.group_size)
        layer = CompressedLayer(
            weights=stored, mask=mask, adapter=adapter,
            channel_scaling=scaling, config=cfg,
            provenance=layer.provenance,
        )
    return layer


def layer_output(x, layer: CompressedLayer) -> np.ndarray:
    """Forward pass through a compressed layer.

    Computes ``x' @ W_stored + (x' @ L) @ R`` where x' is the input after
    optional 8-bit float fake quantization, and channel-scaling
    compensation is applied to the main-path activations before the
    product. The adapter contributes through two thin products; the dense
    L @ R is never materialized here.

    Raises:
        ShapeMismatch: ``x`` column count differs from the layer's input dim.
    """
    xa = as_matrix(x, "x")
    d_in, _ = layer.shape
    if xa.shape[1] != d_in:
        raise ShapeMismatch(f"x has {xa.shape[1]} columns, layer expects {d_in}")
    if layer.config.input_fp8:
        xa, _ = fp8_fake_quantize(xa)
    x_main = compensate_activations(xa, layer.channel_scaling)
    y = x_main @ layer.stored_weight()
    if layer.adapter is not None:
        y = y + (xa @ layer.adapter.left) @ layer.adapter.right
    return y


def _effective_bits(layer: CompressedLayer) -> float:
    """Analytic storage cost per weight element (scales/metadata excluded)."""
    cfg = layer.config
    d_in, d_out = layer.shape
    weight_bits = cfg.weight_bits if cfg.quant_method != "none" else DENSE_BITS
    density = layer.mask.density if layer.mask is not None else 1.0
    bits = weight_bits * density
    if layer.adapter is not None:
        adapter_bits = 4 if cfg.quantize_adapters else DENSE_BITS
        r = layer.adapter.rank
        bits += adapter_bits * r * (d_in + d_out) / (d_in * d_out)
    return float(bits)


def error_report(
    w,
    layer: CompressedLayer,
    x_eval,
    x_saliency: SaliencyVector,
) -> ErrorReport:
    """Compare a compressed layer against the original weight.

    ``weight_mse`` and ``weighted_weight_mse`` measure the dense
    reconstruction (with adapter) per element, the weighted variant scaling
    each input row by ``x_saliency``. ``output_mse`` is the per-element
    squared difference between ``x_eval @ W_reconstructed`` and
    ``x_eval @ w``; ``output_mse_no_adapter`` drops the adapter term.

    Raises:
        ShapeMismatch: any operand disagrees on dimensions.
    """
    w0 = as_matrix(w, "w")
    d_in, d_out = layer.shape
    if w0.shape != (d_in, d_out):
        raise ShapeMismatch(f"w shape {w0.shape} does not match layer {layer.shape}")
    xe = as_matrix(x_eval, "x_eval")
    if xe.shape[1] != d_in:
        raise ShapeMismatch(f"x_eval has {xe.shape[1]} columns, layer expects {d_in}")
    if len(x_saliency) != d_in:
        raise ShapeMismatch(f"saliency length {len(x_saliency)} != d_in {d_in}")

    w_c = layer.effective_weight()
    w_eff = w_c if layer.adapter is None else w_c + layer.adapter.correction()
    diff = w_eff - w0
    weight_mse = float(np.mean(diff**2))
    weighted = x_saliency.values[:, None] * diff
    weighted_mse = float(np.mean(weighted**2))

    y_ref = xe @ w0
    out_err = float(np.mean((xe @ w_eff - y_ref) ** 2))
    out_err_no_adapter = float(np.mean((xe @ w_c - y_ref) ** 2))

    return ErrorReport(
        weight_mse=weight_mse,
        weighted_weight_mse=weighted_mse,
        output_mse=out_err,
        output_mse_no_adapter=out_err_no_adapter,
        density=layer.mask.density if layer.mask is not None else 1.0,
        effective_bits_per_weight=_effective_bits(layer),
    )
