"""Masked feature / response distillation losses and the total objective."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import DimensionError, DomainError
from .tensor_core import as_tensor

REDUCTIONS = ("normalized", "raw")

# (alpha_I, beta_I) and (alpha_v, beta_v) rows of the feature/response weight ablation
FEATURE_WEIGHT_SWEEP = ((1.0, 0.0), (1.0, 0.05), (1.0, 0.1), (1.0, 0.2))
RESPONSE_WEIGHT_SWEEP = ((1.0, 0.1), (1.0, 0.25), (1.0, 0.5), (1.0, 1.0))


@dataclass(frozen=True)
class DistillConfig:
    alpha_i: float = 1.0
    beta_i: float = 0.1
    alpha_v: float = 1.0
    beta_v: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    n_levels: int = 3
    m_levels: int = 3
    reduction: str = "normalized"

    def __post_init__(self):
        for name in ("alpha_i", "beta_i", "alpha_v", "beta_v", "alpha", "beta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise DomainError(f"{name} must be a finite non-negative weight, got {v}")
        if self.n_levels < 1 or self.m_levels < 1:
            raise DomainError("n_levels and m_levels must be at least 1")
        if self.reduction not in REDUCTIONS:
            raise DomainError(f"reduction must be one of {REDUCTIONS}")


def weight_sweep_settings(base: DistillConfig | None = None) -> list[tuple[str, DistillConfig]]:
    """The eight feature/response balancing settings, each varying one weight pair."""
    from dataclasses import replace

    base = base or DistillConfig()
    out = []
    for a, b in FEATURE_WEIGHT_SWEEP:
        out.append((f"feat_a{a:g}_b{b:g}", replace(base, alpha_i=a, beta_i=b)))
    for a, b in RESPONSE_WEIGHT_SWEEP:
        out.append((f"resp_a{a:g}_b{b:g}", replace(base, alpha_v=a, beta_v=b)))
    return out


def _masked_sq(diff, mask, w_fg, w_bg, norm):
    """Weighted fg/bg squared error and its gradient with respect to ``diff``."""
    fg = float(np.sum((mask * diff) ** 2))
    bg = float(np.sum(((1.0 - mask) * diff) ** 2))
    weight = w_fg * mask + w_bg * (1.0 - mask)
    return (w_fg * fg + w_bg * bg) / norm, 2.0 * weight * diff / norm


def feature_distill_loss_and_grad(f3d, t, masks, cfg: DistillConfig):
    """Return the feature loss and its gradient with respect to each adapted student map.

    Masks (H, W) are broadcast over channels. Teacher maps are constants.
    """
    if not (len(f3d) == len(t) == len(masks)):
        raise DimensionError("feature, teacher and mask level counts differ")
    total, grads = 0.0, []
    for k, (f, tk, m) in enumerate(zip(f3d, t, masks)):
        f, tk = as_tensor(f, 3), as_tensor(tk, 3)
        m = as_tensor(getattr(m, "mask", m), 2)
        if f.shape != tk.shape or m.shape != f.shape[:2]:
            raise DimensionError(f"level {k}: shapes {f.shape}, {tk.shape}, mask {m.shape}")
        norm = f.size if cfg.reduction == "normalized" else 1.0
        loss, g = _masked_sq(f - tk, m[:, :, None], cfg.alpha_i, cfg.beta_i, norm)
        total += loss
        grads.append(g)
    return total, grads


def feature_distill_loss(f3d, t, masks, cfg: DistillConfig) -> float:
    return feature_distill_loss_and_grad(f3d, t, masks, cfg)[0]


def response_distill_loss_and_grad(fa, t_v, m_f, cfg: DistillConfig):
    """Return the response loss and its gradient with respect to each adapted query set.

    One foreground query mask (length N_q) is shared by every decoder level.
    """
    if len(fa) != len(t_v):
        raise DimensionError("adapted and teacher query level counts differ")
    m_f = as_tensor(m_f, 1)
    total, grads = 0.0, []
    for k, (f, tk) in enumerate(zip(fa, t_v)):
        f = as_tensor(getattr(f, "queries", f), 2)
        tk = as_tensor(getattr(tk, "queries", tk), 2)
        if f.shape != tk.shape or m_f.shape[0] != f.shape[0]:
            raise DimensionError(f"level {k}: shapes {f.shape}, {tk.shape}, mask {m_f.shape}")
        norm = f.size if cfg.reduction == "normalized" else 1.0
        loss, g = _masked_sq(f - tk, m_f[:, None], cfg.alpha_v, cfg.beta_v, norm)
        total += loss
        grads.append(g)
    return total, grads


def response_distill_loss(fa, t_v, m_f, cfg: DistillConfig) -> float:
    return response_distill_loss_and_grad(fa, t_v, m_f, cfg)[0]


@dataclass(frozen=True)
class LossReport:
    l_feat: float
    l_ed: float
    l_cls: float
    l_reg: float
    l_depth: float
    total: float

    def recompute(self, cfg: DistillConfig) -> float:
        return self.l_cls + self.l_reg + self.l_depth + cfg.alpha * self.l_feat + cfg.beta * self.l_ed

    def as_dict(self) -> dict:
        return asdict(self)


LOSS_TERMS = tuple(f.name for f in fields(LossReport))


def total_loss(task_losses, l_feat, l_ed, cfg: DistillConfig) -> LossReport:
    """Task losses plus ``alpha * L_feat + beta * L_ed``; with beta = 0 the response term is dropped."""
    l_cls, l_reg, l_depth = (float(v) for v in task_losses)
    terms = {"l_cls": l_cls, "l_reg": l_reg, "l_depth": l_depth, "l_feat": float(l_feat), "l_ed": float(l_ed)}
    for name, v in terms.items():
        if not np.isfinite(v) or v < 0:
            raise DomainError(f"{name} must be finite and non-negative, got {v}")
    total = l_cls + l_reg + l_depth + cfg.alpha * terms["l_feat"]
    if cfg.beta != 0.0:
        total += cfg.beta * terms["l_ed"]
    return LossReport(total=total, **terms)
