"""Sweep runner contrasting graph-block and dense-attention interaction costs."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .complexity import interaction_cost, measure_interaction
from .encoder import ModelConfig


@dataclass
class BenchReport:
    rows: list[dict]

    def render(self) -> str:
        header = (
            f"{'size':>5} {'M':>4} {'T':>7} {'graph state':>12} {'attn state':>12} "
            f"{'graph MACs':>12} {'attn MACs':>12} {'diffuse us':>11} {'attn ms':>8}"
        )
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r['size']:>5} {r['m']:>4} {r['tokens']:>7} {r['greab_state_entries']:>12,} "
                f"{r['mha_state_entries']:>12,} {r['greab_macs']:>12,} {r['mha_macs']:>12,} "
                f"{r['greab_diffusion_seconds'] * 1e6:>11.2f} {r['mha_forward_seconds'] * 1e3:>8.2f}"
            )
        return "\n".join(lines)


def run_bench(
    m_values=(8, 16, 32, 64),
    sizes=(16, 32, 64),
    patch_side: int = 4,
    channels: int = 32,
    repetitions: int = 3,
) -> BenchReport:
    """Measured and closed-form interaction costs over an (image size, M) grid."""
    rows = []
    for size in sizes:
        for m in m_values:
            cfg = ModelConfig(
                patch_side=patch_side,
                channels=channels,
                nodes=m,
                image_height=size,
                image_width=size,
            ).validate()
            greab_cost = interaction_cost(cfg)
            mha_cost = interaction_cost(replace(cfg, interaction="mha"))
            measured = measure_interaction(cfg, repetitions=repetitions)
            rows.append(
                {
                    "size": size,
                    "m": m,
                    "tokens": cfg.tokens_per_image,
                    "greab_macs": greab_cost.total_interaction_macs,
                    "mha_macs": mha_cost.total_interaction_macs,
                    "greab_state_formula": greab_cost.state_entries,
                    "mha_state_formula": mha_cost.state_entries,
                    **measured,
                }
            )
    return BenchReport(rows=rows)


def diffusion_time_slope(
    m_values=(128, 256, 512, 1024), channels: int = 32, repetitions: int = 11
) -> tuple[float, list[dict]]:
    """Log-log slope of diffusion wall time against node count.

    Uses node counts large enough that the quadratic term dominates both the
    linear update-map term and per-call overhead; at desk-test sizes
    (M <= 64) the call overhead flattens the curve.
    """
    points = []
    for m in m_values:
        cfg = ModelConfig(
            patch_side=4, channels=channels, nodes=m, image_height=16, image_width=16
        )
        measured = measure_interaction(cfg, repetitions=repetitions)
        points.append({"m": m, "seconds": measured["greab_diffusion_seconds"]})
    logs_m = np.log([p["m"] for p in points])
    logs_t = np.log([p["seconds"] for p in points])
    slope = float(np.polyfit(logs_m, logs_t, 1)[0])
    return slope, points
