"""Analytic parameter and FLOP accounting for any architecture config.

Convention: one fused multiply-add counts as one FLOP. A linear map m x n
applied over N tokens costs N*m*n; the attention score and value products cost
N_q*N_kv*C each. Softmax, layer norm, GELU, and additions (biases, residuals,
fusion sums) are excluded. Parameters count everything trained in the given
regime: encoder plus prediction head for fine-tuning, encoder plus decoder for
pretraining.

The fine-tuning regime runs on the full token lattice; the pretraining regime
runs the encoder on the visible subset and the decoder on the full lattice,
with the patch embedding always applied to the full lattice.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

from .config import ArchConfig, validate

VARIANTS = ("full", "vit_baseline", "tp_only", "sbt_only")


@dataclass(frozen=True)
class StagePlan:
    """One encoder stage: block kind, depth, and whether temporal
    downsampling precedes it.

    For the "sbt" kind, depth M means M-1 bottleneck blocks plus one
    resolution-restoring block after the spatial-attention summary.
    """

    kind: str
    depth: int
    downsample: bool


def _std_block_params(c: int) -> int:
    return 12 * c * c + 9 * c


def _sbt_block_params(c: int) -> int:
    return 16 * c * c + 11 * c


def _reverse_block_params(c: int) -> int:
    return 12 * c * c + 9 * c


def _spatial_attention_params(c: int, g: int) -> int:
    return c * 4 * c + 4 * c + 4 * c * g + g


def _downsample_params(c: int, k: int, mode: str = "conv") -> int:
    return c * c * k + c if mode == "conv" else 0


def _sbt_stage_params(cfg: ArchConfig, depth: int) -> int:
    c, g = cfg.embed_dim, cfg.bottleneck_tokens
    return (_spatial_attention_params(c, g)
            + (depth - 1) * _sbt_block_params(c)
            + _reverse_block_params(c))


def _matched_depth(cfg: ArchConfig, depth: int, include_downsample: bool) -> int:
    """Standard-block depth whose parameter mass best matches a bottleneck stage."""
    mass = _sbt_stage_params(cfg, depth)
    if include_downsample:
        mass += _downsample_params(cfg.embed_dim, cfg.temporal_stride)
    return max(1, round(mass / _std_block_params(cfg.embed_dim)))


def stage_plan(cfg: ArchConfig,
               variant: str = "full") -> Tuple[StagePlan, StagePlan, StagePlan]:
    """Per-stage structure of an encoder variant.

    "full" keeps temporal downsampling and bottleneck stages; "tp_only" keeps
    downsampling but swaps bottleneck stages for parameter-matched standard
    stacks; "sbt_only" keeps bottleneck stages at full temporal length;
    "vit_baseline" is a parameter-matched plain transformer.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    m1, m2, m3 = cfg.stage_depths
    if variant == "full":
        return (StagePlan("standard", m1, False),
                StagePlan("sbt", m2, True),
                StagePlan("sbt", m3, True))
    if variant == "sbt_only":
        return (StagePlan("standard", m1, False),
                StagePlan("sbt", m2, False),
                StagePlan("sbt", m3, False))
    keep_downsample = variant == "tp_only"
    d2 = _matched_depth(cfg, m2, include_downsample=not keep_downsample)
    d3 = _matched_depth(cfg, m3, include_downsample=not keep_downsample)
    return (StagePlan("standard", m1, False),
            StagePlan("standard", d2, keep_downsample),
            StagePlan("standard", d3, keep_downsample))


def _std_block_flops(n: int, c: int) -> int:
    return 12 * n * c * c + 2 * n * n * c


def _sbt_block_flops(nb: int, n: int, c: int) -> int:
    return 14 * nb * c * c + 2 * n * c * c + 2 * c * nb * (n + nb)


def _reverse_block_flops(n: int, nb: int, c: int) -> int:
    return 10 * n * c * c + 2 * nb * c * c + 2 * n * nb * c


def _spatial_attention_flops(n: int, c: int, g: int) -> int:
    return n * c * 4 * c + n * 4 * c * g + n * c * g


def _encoder_params(cfg: ArchConfig, plans, downsample_mode: str = "conv") -> Dict[str, int]:
    c = cfg.embed_dim
    parts = {"patch_embed": cfg.patch_dim * c + c}
    for i, plan in enumerate(plans, start=1):
        if plan.downsample:
            parts[f"downsample{i}"] = _downsample_params(c, cfg.temporal_stride,
                                                         downsample_mode)
        if plan.kind == "standard":
            parts[f"stage{i}"] = plan.depth * _std_block_params(c)
        else:
            parts[f"stage{i}"] = _sbt_stage_params(cfg, plan.depth)
    return parts


def _encoder_flops(cfg: ArchConfig, plans, spatial: int,
                   downsample_mode: str = "conv") -> Dict[str, int]:
    c, g, k = cfg.embed_dim, cfg.bottleneck_tokens, cfg.temporal_stride
    slices = cfg.grid[0]
    parts = {"patch_embed": cfg.num_tokens * cfg.patch_dim * c}
    for i, plan in enumerate(plans, start=1):
        if plan.downsample:
            slices //= k
            conv = downsample_mode == "conv"
            parts[f"downsample{i}"] = slices * spatial * c * c * k if conv else 0
        n = slices * spatial
        if plan.kind == "standard":
            parts[f"stage{i}"] = plan.depth * _std_block_flops(n, c)
        else:
            nb = slices * g
            parts[f"stage{i}"] = (_spatial_attention_flops(n, c, g)
                                  + (plan.depth - 1) * _sbt_block_flops(nb, n, c)
                                  + _reverse_block_flops(n, nb, c))
    return parts


def _decoder_params(cfg: ArchConfig) -> Dict[str, int]:
    c, d, p = cfg.embed_dim, cfg.decoder_dim, cfg.patch_dim
    return {
        "decoder_proj": c * d + d,
        "decoder_mask_token": d,
        "decoder_blocks": cfg.decoder_depth * _std_block_params(d),
        "decoder_norm": 2 * d,
        "decoder_head": d * p + p,
    }


def _decoder_flops(cfg: ArchConfig, visible: int) -> Dict[str, int]:
    c, d, p, n = cfg.embed_dim, cfg.decoder_dim, cfg.patch_dim, cfg.num_tokens
    return {
        "decoder_proj": visible * c * d,
        "decoder_blocks": cfg.decoder_depth * _std_block_flops(n, d),
        "decoder_head": n * d * p,
    }


@dataclass(frozen=True)
class CostReport:
    """Per-part parameter and FLOP tallies for one config/variant."""

    variant: str
    input: Tuple[int, int, int]
    patch: Tuple[int, int, int]
    masking_ratio: float
    head_classes: int
    params_encoder: Dict[str, int]
    params_decoder: Dict[str, int]
    params_head: int
    flops_finetune: Dict[str, int]
    flops_pretrain: Dict[str, int]

    @property
    def params_encoder_total(self) -> int:
        return sum(self.params_encoder.values())

    @property
    def params_finetune_total(self) -> int:
        return self.params_encoder_total + self.params_head

    @property
    def params_pretrain_total(self) -> int:
        return self.params_encoder_total + sum(self.params_decoder.values())

    @property
    def flops_finetune_total(self) -> int:
        return sum(self.flops_finetune.values())

    @property
    def flops_pretrain_total(self) -> int:
        return sum(self.flops_pretrain.values())


def count(cfg: ArchConfig, variant: str = "full", head_classes: int = 7,
          downsample_mode: str = "conv") -> CostReport:
    """Symbolic cost tally for one clip (batch of one) in both regimes."""
    validate(cfg)
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if head_classes < 1:
        raise ValueError("head_classes must be a positive integer")
    plans = stage_plan(cfg, variant)
    c = cfg.embed_dim

    flops_ft = _encoder_flops(cfg, plans, cfg.spatial_tokens, downsample_mode)
    flops_ft["head"] = c * head_classes
    flops_pt = _encoder_flops(cfg, plans, cfg.visible_spatial, downsample_mode)
    flops_pt.update(_decoder_flops(cfg, cfg.grid[0] * cfg.visible_spatial))

    return CostReport(
        variant=variant,
        input=cfg.input,
        patch=cfg.patch,
        masking_ratio=cfg.masking_ratio,
        head_classes=head_classes,
        params_encoder=_encoder_params(cfg, plans, downsample_mode),
        params_decoder=_decoder_params(cfg),
        params_head=c * head_classes + head_classes,
        flops_finetune=flops_ft,
        flops_pretrain=flops_pt,
    )


def variant_grid(cfg: ArchConfig, head_classes: int = 7) -> Dict[str, CostReport]:
    """Cost reports for every encoder variant of one config."""
    return {variant: count(cfg, variant, head_classes) for variant in VARIANTS}


def reduction(full: CostReport, baseline: CostReport) -> Dict[str, float]:
    """Percent cost reduction of `full` relative to `baseline`, per field."""
    if full.input != baseline.input or full.patch != baseline.patch:
        raise ValueError("reports have different geometry")
    fields = {
        "params_finetune": (full.params_finetune_total,
                            baseline.params_finetune_total),
        "params_pretrain": (full.params_pretrain_total,
                            baseline.params_pretrain_total),
        "flops_finetune": (full.flops_finetune_total,
                           baseline.flops_finetune_total),
        "flops_pretrain": (full.flops_pretrain_total,
                           baseline.flops_pretrain_total),
    }
    out = {}
    for name, (ours, base) in fields.items():
        if base == 0:
            raise ValueError(f"zero baseline for {name}")
        out[name] = 100.0 * (1.0 - ours / base)
    return out


def attention_entries_standard(slices: int, spatial: int) -> int:
    """Score-matrix entries of one standard block on slices*spatial tokens."""
    n = slices * spatial
    return n * n


def attention_entries_sbt(slices: int, spatial: int, g: int) -> int:
    """Score-matrix entries of one bottleneck block: cross plus self terms."""
    return g * (g + spatial) * slices * slices


def token_ledger(cfg: ArchConfig, regime: str = "finetune",
                 variant: str = "full") -> Dict[str, object]:
    """Token counts at every stage boundary for one clip."""
    if regime not in ("finetune", "pretrain"):
        raise ValueError(f"regime must be 'finetune' or 'pretrain', got {regime!r}")
    spatial = cfg.spatial_tokens if regime == "finetune" else cfg.visible_spatial
    plans = stage_plan(cfg, variant)
    slices = cfg.grid[0]
    stage_tokens = []
    bottlenecks = {}
    for i, plan in enumerate(plans, start=1):
        if plan.downsample:
            slices //= cfg.temporal_stride
        stage_tokens.append(slices * spatial)
        if plan.kind == "sbt":
            bottlenecks[i] = slices * cfg.bottleneck_tokens
    ledger = {
        "spatial": spatial,
        "stage_tokens": tuple(stage_tokens),
        "bottleneck_tokens": bottlenecks,
    }
    if regime == "pretrain":
        ledger["fused_tokens"] = stage_tokens[0]
    return ledger


def format_count(value: int) -> str:
    """Human-readable count: millions for parameters, billions for FLOPs."""
    if value >= 10 ** 9:
        return f"{value / 1e9:.2f}G"
    if value >= 10 ** 6:
        return f"{value / 1e6:.2f}M"
    return f"{value / 1e3:.2f}K" if value >= 10 ** 3 else str(value)


def report_rows(report: CostReport):
    """Flattened (section, part, count) rows, totals last per section."""
    rows = []
    for name, value in report.params_encoder.items():
        rows.append(("params_encoder", name, value))
    rows.append(("params_encoder", "total", report.params_encoder_total))
    for name, value in report.params_decoder.items():
        rows.append(("params_decoder", name, value))
    rows.append(("params_head", "head", report.params_head))
    rows.append(("params_total", "finetune", report.params_finetune_total))
    rows.append(("params_total", "pretrain", report.params_pretrain_total))
    for name, value in report.flops_finetune.items():
        rows.append(("flops_finetune", name, value))
    rows.append(("flops_finetune", "total", report.flops_finetune_total))
    for name, value in report.flops_pretrain.items():
        rows.append(("flops_pretrain", name, value))
    rows.append(("flops_pretrain", "total", report.flops_pretrain_total))
    return rows


def format_report(report: CostReport) -> str:
    """Aligned text table of one cost report."""
    header = (f"variant={report.variant}  input={report.input}  "
              f"patch={report.patch}  ratio={report.masking_ratio}  "
              f"classes={report.head_classes}")
    lines = [header, "-" * len(header)]
    lines.append(f"{'section':<16}{'part':<20}{'count':>16}{'pretty':>10}")
    for section, part, value in report_rows(report):
        lines.append(f"{section:<16}{part:<20}{value:>16}{format_count(value):>10}")
    return "\n".join(lines)


def measured_flops(module, *inputs) -> int:
    """Multiply-add count of one forward pass, measured operation by operation.

    Requires torch; the instrumented counter reports two FLOPs per multiply-add
    for matrix products and convolutions, so the raw total is halved to match
    the convention used by `count`.
    """
    from torch.utils.flop_counter import FlopCounterMode

    counter = FlopCounterMode(display=False)
    with counter:
        module(*inputs)
    total = counter.get_total_flops()
    if total % 2:
        raise RuntimeError("instrumented FLOP total is odd; convention mismatch")
    return total // 2
