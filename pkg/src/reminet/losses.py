"""Centeredness, time-regularization and total training objective."""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .dataset import view_means

MEAN_GUARD = 1e-8


def frobenius_distance(a, b):
    """``sqrt(sum |a - b|^2)``. Differentiable Value if either input is a Value, else float."""
    if not isinstance(a, ag.Value) and not isinstance(b, ag.Value):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ag.ShapeError(f"frobenius_distance: shapes {a.shape} and {b.shape} do not conform")
        return float(np.sqrt(np.sum((a - b) ** 2)))
    a, b = ag.constant(a), ag.constant(b)
    if a.shape != b.shape:
        raise ag.ShapeError(f"frobenius_distance: shapes {a.shape} and {b.shape} do not conform")
    return ag.sqrt(ag.sum(ag.square(a - b)))


def view_weights(obs):
    """``lambda_v = max_w(mu_w) / mu_v`` from this observation's view means."""
    mu = np.maximum(view_means(obs), MEAN_GUARD)
    return mu.max() / mu


def _views(obs):
    return obs.views if hasattr(obs, "views") else np.asarray(obs, dtype=np.float64)


def centeredness_loss(cbts, samples):
    """Sum over timepoints, views and samples of ``lambda_v * d_F(C^t, view v of sample^t)``, divided by n_t.

    ``samples`` is a list of trajectories: each a ``SubjectTrajectory`` or a
    sequence of per-timepoint observations. All sampled views at a timepoint
    are stacked so the whole term is a handful of tape operations.
    """
    n_t = len(cbts)
    if n_t == 0:
        raise ValueError("centeredness_loss needs at least one timepoint")
    trajectories = [getattr(s, "observations", s) for s in samples]
    if not trajectories:
        raise ValueError("centeredness_loss needs at least one sample")
    n = cbts[0].shape[0]
    total = None
    for t, cbt in enumerate(cbts):
        rows = []
        weights = []
        for traj in trajectories:
            if len(traj) < n_t:
                raise ag.ShapeError(f"sample has {len(traj)} timepoints, need {n_t}")
            views = _views(traj[t])
            if views.shape[:2] != (n, n):
                raise ag.ShapeError(f"sample views {views.shape[:2]} vs template {(n, n)}")
            rows.append(views.transpose(2, 0, 1).reshape(views.shape[2], n * n))
            weights.append(view_weights(traj[t]))
        targets = np.vstack(rows)  # (k * n_v, n*n)
        lam = np.concatenate(weights).reshape(-1, 1)
        flat = ag.reshape(ag.constant(cbt), (1, n * n))
        dists = ag.sqrt(ag.sum(ag.square(ag.sub(targets, flat)), axis=1))  # (k * n_v, 1)
        term = ag.sum(ag.mul(dists, lam))
        total = term if total is None else total + term
    return total * (1.0 / n_t)


def time_reg_loss(cbts):
    """Mean Frobenius distance between consecutive templates."""
    if len(cbts) < 2:
        raise ValueError(f"time_reg_loss needs at least 2 timepoints, got {len(cbts)}")
    total = None
    for prev, cur in zip(cbts[:-1], cbts[1:]):
        d = frobenius_distance(cur, prev)
        total = d if total is None else total + d
    return total * (1.0 / (len(cbts) - 1))


@dataclass(frozen=True)
class LossBreakdown:
    centeredness: float
    time_reg: float
    alpha: float

    @property
    def total(self):
        return self.centeredness + self.alpha * self.time_reg


def subject_loss(cbts, samples, alpha):
    """Differentiable ``L_c + alpha * L_t`` for one subject plus its float breakdown.

    With a single timepoint, or ``alpha == 0``, the time term is skipped
    (recorded as 0 / computed only when defined).
    """
    lc = centeredness_loss(cbts, samples)
    if len(cbts) >= 2:
        lt = time_reg_loss(cbts)
        lt_val = lt.item() if isinstance(lt, ag.Value) else float(lt)
    elif alpha > 0:
        raise ValueError("alpha > 0 requires at least 2 timepoints")
    else:
        lt, lt_val = None, 0.0
    loss = lc if (lt is None or alpha == 0) else lc + lt * alpha
    lc_val = lc.item() if isinstance(lc, ag.Value) else float(lc)
    return loss, LossBreakdown(lc_val, lt_val, float(alpha))


def total_loss(breakdowns):
    """Mean over subjects of ``centeredness + alpha * time_reg``.

    Accepts :class:`LossBreakdown` records (float result) or differentiable
    per-subject loss Values (Value result).
    """
    breakdowns = list(breakdowns)
    if not breakdowns:
        raise ValueError("total_loss needs at least one subject")
    if isinstance(breakdowns[0], ag.Value):
        acc = breakdowns[0]
        for b in breakdowns[1:]:
            acc = acc + b
        return acc * (1.0 / len(breakdowns))
    alphas = {b.alpha for b in breakdowns}
    if len(alphas) != 1:
        raise ValueError(f"breakdowns must share alpha, got {sorted(alphas)}")
    return float(np.mean([b.total for b in breakdowns]))
