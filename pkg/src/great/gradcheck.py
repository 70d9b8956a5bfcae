"""Analytic-vs-finite-difference gradient verification.

For each parameter group the analytic gradient from one backward pass is
compared against the central-difference oracle. The pass metric is the
group's relative error max|a - b| / max(max|a|, max|b|, 1e-8): central
differences at eps=1e-5 on an O(1) loss carry ~1e-11 of roundoff noise, so
individual near-zero entries cannot be certified any tighter no matter how
correct the backward rules are, while any actual rule bug perturbs the
gradient at its own scale and trips the group metric immediately. The
entrywise worst is still reported for inspection.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .encoder import ModelConfig, init_model, model_loss, named_parameters
from .greab import greab_forward, init_greab
from .attention import init_mha, mha_forward
from .patching import TokenGrid
from .tensor import Tensor, backward, finite_diff_grad, mul, tsum

THRESHOLD = 1e-4


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Worst entrywise relative error with denominator max(|a|, |b|, 1e-8)."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float((np.abs(a - b) / denom).max())


def group_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Relative error of the gradient as a vector: max|a-b| over the group scale."""
    scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)), 1e-8)
    return float(np.abs(a - b).max()) / scale


@dataclass
class GroupResult:
    rel_err: float  # group-scale relative error; the pass metric
    entry_err: float  # worst entrywise relative error, informational


@dataclass
class GradcheckReport:
    groups: dict[str, GroupResult]
    eps: float
    threshold: float = THRESHOLD

    @property
    def passed(self) -> bool:
        return all(r.rel_err < self.threshold for r in self.groups.values())

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.groups, key=lambda k: self.groups[k].rel_err)
        return name, self.groups[name].rel_err

    def failing(self) -> list[str]:
        return [k for k, r in self.groups.items() if r.rel_err >= self.threshold]

    def render(self) -> str:
        lines = [f"{'group':<44} {'rel err':>10} {'entry err':>10}"]
        for k, r in self.groups.items():
            status = "ok" if r.rel_err < self.threshold else "FAIL"
            lines.append(f"{k:<44} {r.rel_err:>10.3e} {r.entry_err:>10.3e}  {status}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(
            f"{verdict}: worst {self.worst[0]} at {self.worst[1]:.3e} (threshold {self.threshold:.0e})"
        )
        return "\n".join(lines)


def _check_groups(
    leaves: dict[str, Tensor], loss_fn: Callable[[], Tensor], eps: float
) -> dict[str, GroupResult]:
    for t in leaves.values():
        t.grad = None
        t.requires_grad = True
    backward(loss_fn())
    analytic = {k: t.grad.copy() for k, t in leaves.items()}
    for t in leaves.values():
        t.requires_grad = False
        t.grad = None
    results = {}
    for name, t in leaves.items():
        def f(candidate: Tensor, target=t) -> float:
            saved = target.data
            target.data = candidate.data
            try:
                return loss_fn().item()
            finally:
                target.data = saved
        fd = finite_diff_grad(f, t, eps)
        results[name] = GroupResult(
            rel_err=group_rel_err(analytic[name], fd),
            entry_err=max_rel_err(analytic[name], fd),
        )
    return results


def check_greab(cfg: ModelConfig, seed: int, eps: float = 1e-5) -> dict[str, float]:
    """Gradients of a standalone graph block wrt input and every weight."""
    rng = np.random.default_rng([seed, 2])
    n, l2, c = cfg.n_patches, cfg.positions, cfg.channels
    x = Tensor(rng.uniform(-1, 1, size=(n, l2, c)), requires_grad=True)
    gw = init_greab(rng, cfg.nodes, n, l2, c, cfg.graph_depth)
    cot = Tensor(rng.uniform(-1, 1, size=(n, l2, c)))
    leaves = {"x": x, "w_proj": gw.w_proj}
    for j, gl in enumerate(gw.layers):
        leaves[f"graph{j}.adjacency"] = gl.adjacency
        leaves[f"graph{j}.update"] = gl.update

    def loss_fn():
        grid = TokenGrid(x, cfg.image_height, cfg.image_width, cfg.patch_side)
        return tsum(mul(greab_forward(grid, gw).tokens, cot))

    return _check_groups(leaves, loss_fn, eps)


def check_mha(cfg: ModelConfig, seed: int, eps: float = 1e-5) -> dict[str, float]:
    """Gradients of standalone dense attention wrt input and every map."""
    rng = np.random.default_rng([seed, 3])
    n, l2, c = cfg.n_patches, cfg.positions, cfg.channels
    x = Tensor(rng.uniform(-1, 1, size=(n, l2, c)), requires_grad=True)
    mw = init_mha(rng, c, cfg.heads)
    cot = Tensor(rng.uniform(-1, 1, size=(n, l2, c)))
    leaves = {"x": x, "out": mw.out}
    for h, head in enumerate(mw.heads):
        leaves[f"head{h}.wq"] = head.wq
        leaves[f"head{h}.wk"] = head.wk
        leaves[f"head{h}.wv"] = head.wv

    def loss_fn():
        grid = TokenGrid(x, cfg.image_height, cfg.image_width, cfg.patch_side)
        return tsum(mul(mha_forward(grid, mw).tokens, cot))

    return _check_groups(leaves, loss_fn, eps)


def check_model(cfg: ModelConfig, seed: int, eps: float = 1e-5) -> dict[str, float]:
    """End-to-end gradients of cross-entropy over encoder plus head."""
    rng = np.random.default_rng([seed, 4])
    mw = init_model(replace(cfg, seed=seed))
    image = Tensor(rng.uniform(0, 1, size=(cfg.image_height, cfg.image_width, 3)))
    mask = rng.integers(0, cfg.classes, size=(cfg.image_height, cfg.image_width))
    leaves = dict(named_parameters(mw))
    return _check_groups(leaves, lambda: model_loss(image, mask, mw), eps)


def run_gradcheck(
    cfg: ModelConfig,
    seed: int = 0,
    eps: float = 1e-5,
    targets: tuple[str, ...] = ("greab", "mha", "model"),
) -> GradcheckReport:
    """Check standalone blocks and the full model; small configs recommended."""
    cfg.validate()
    groups: dict[str, float] = {}
    if "greab" in targets:
        groups.update({f"greab.{k}": v for k, v in check_greab(cfg, seed, eps).items()})
    if "mha" in targets:
        groups.update({f"mha.{k}": v for k, v in check_mha(cfg, seed, eps).items()})
    if "model" in targets:
        groups.update({f"model.{k}": v for k, v in check_model(cfg, seed, eps).items()})
    return GradcheckReport(groups=groups, eps=eps)
