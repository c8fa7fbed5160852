"""Maximum-entropy outcome density with competition feedback, and its Bayes relatives.

The unnormalized log-density of outcomes is::

    H[A|x] - gamma * x - rho * x * (f[entry|x] - f[exit|x])

with ``f[.|x]`` the prior-weighted decision probabilities. Everything is
evaluated on a fixed :class:`~qrse_priors.core.Grid` with trapezoid quadrature.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .core import ActionSet, EquilibriumParams, Grid, ModelError, UtilityModel
from .decision import DecisionContext, log_decision_probabilities

TRUNCATION_LOG_GAP = 30.0
NULL_ACTION_MASS = 1e-300


class SupportTruncated(UserWarning):
    """The grid endpoints still carry non-negligible density."""


class NullAction(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class DensityTable:
    grid: Grid
    values: np.ndarray
    log_partition: float

    def integral(self) -> float:
        return self.grid.integrate(self.values)

    def mean(self) -> float:
        return self.grid.integrate(self.values * self.grid.points)

    def central_moment(self, k: int) -> float:
        m = self.mean()
        return self.grid.integrate(self.values * (self.grid.points - m) ** k)

    def at(self, x) -> np.ndarray:
        """Linear interpolation of the density, zero outside the grid."""
        return np.interp(x, self.grid.points, self.values, left=0.0, right=0.0)


@dataclass(frozen=True, eq=False)
class EquilibriumModel:
    ctx: DecisionContext
    params: EquilibriumParams
    grid: Grid
    entry_action: int = 0
    exit_action: int = 1

    def __post_init__(self):
        n = self.ctx.actions.size
        if not (0 <= self.entry_action < n and 0 <= self.exit_action < n):
            raise ModelError("entry/exit actions must be valid indices")
        if self.entry_action == self.exit_action:
            raise ModelError("entry and exit actions must differ")
        if self.ctx.T != self.params.T:
            raise ModelError("decision context and parameters disagree on T")

    @classmethod
    def build(cls, params: EquilibriumParams, grid: Grid, prior=None,
              actions: Optional[ActionSet] = None, entry: int | str = 0,
              exit: int | str | None = None, utility: Optional[UtilityModel] = None,
              hold: int | str | None = None) -> "EquilibriumModel":
        """Assemble a model with linear utility derived from ``params``.

        Three actions (or ``params.mu2`` set) select the ternary utility with a
        hold action; otherwise the binary linear-shift utility is used. Pass
        ``utility`` to override.
        """
        if actions is None:
            actions = ActionSet.ternary() if params.mu2 is not None else ActionSet.binary()
        entry_i = actions.index(entry)
        if utility is None:
            if actions.size == 2:
                utility = UtilityModel.binary(params.mu, entry=entry_i)
            elif actions.size == 3:
                if hold is None:
                    hold_i = actions.index("hold") if "hold" in actions.labels else 1
                else:
                    hold_i = actions.index(hold)
                mu2 = params.mu if params.mu2 is None else params.mu2
                utility = UtilityModel.ternary(params.mu, mu2, entry=entry_i, hold=hold_i)
            else:
                raise ModelError("linear utilities exist for two or three actions; pass utility=")
        if exit is None:
            exit_i = utility.exit
        else:
            exit_i = actions.index(exit)
        if prior is None:
            prior = np.full(actions.size, 1.0 / actions.size)
        ctx = DecisionContext(actions, prior, utility, params.T)
        return cls(ctx, params, grid, entry_i, exit_i)


def log_kernel(model: EquilibriumModel, x) -> np.ndarray | float:
    """Unnormalized log-density of outcome ``x``."""
    x = np.asarray(x, dtype=float)
    logf = log_decision_probabilities(model.ctx, x)
    f = np.exp(logf)
    h = np.where(f > 0, -f * np.where(f > 0, logf, 0.0), 0.0).sum(axis=0)
    gap = f[model.entry_action] - f[model.exit_action]
    p = model.params
    k = h - p.gamma * x - p.rho * x * gap
    return float(k) if k.ndim == 0 else k


def log_partition(model: EquilibriumModel, kernel: Optional[np.ndarray] = None) -> float:
    if kernel is None:
        kernel = log_kernel(model, model.grid.points)
    return float(logsumexp(kernel + np.log(model.grid.weights)))


def marginal_density(model: EquilibriumModel, strict: bool = False) -> DensityTable:
    """Outcome density ``f[x]`` on the model grid.

    Warns with :class:`SupportTruncated` (raises it if ``strict``) when a grid
    endpoint sits within 30 log units of the kernel maximum.
    """
    kernel = log_kernel(model, model.grid.points)
    top = kernel.max()
    if max(kernel[0], kernel[-1]) > top - TRUNCATION_LOG_GAP:
        msg = (f"density at the grid edge is within {TRUNCATION_LOG_GAP} log units of its peak; "
               f"widen the grid [{model.grid.lo}, {model.grid.hi}]")
        if strict:
            raise SupportTruncated(msg)
        warnings.warn(msg, SupportTruncated, stacklevel=2)
    log_z = log_partition(model, kernel)
    return DensityTable(model.grid, np.exp(kernel - log_z), log_z)


def log_density(model: EquilibriumModel, x, log_z: Optional[float] = None) -> np.ndarray:
    """Normalized log-density at arbitrary outcomes, normalized over the model grid."""
    if log_z is None:
        log_z = log_partition(model)
    return log_kernel(model, x) - log_z


def conditional_table(model: EquilibriumModel) -> np.ndarray:
    """``f[a|x]`` on the grid, shape ``(n_actions, n_points)``."""
    return np.exp(log_decision_probabilities(model.ctx, model.grid.points))


def joint_density(model: EquilibriumModel, density: Optional[DensityTable] = None) -> np.ndarray:
    """``f[a, x] = f[a|x] f[x]`` on the grid, shape ``(n_actions, n_points)``."""
    if density is None:
        density = marginal_density(model)
    return conditional_table(model) * density.values


def action_marginal(model: EquilibriumModel, joint: Optional[np.ndarray] = None) -> np.ndarray:
    """Unconditional action probabilities ``f[a]``."""
    if joint is None:
        joint = joint_density(model)
    fa = joint @ model.grid.weights
    fa.setflags(write=False)
    return fa


def outcome_given_action(model: EquilibriumModel, action: int | str,
                         joint: Optional[np.ndarray] = None) -> DensityTable:
    """``f[x|a] = f[a, x] / f[a]``."""
    a = model.ctx.actions.index(action)
    if joint is None:
        joint = joint_density(model)
    fa = float(joint[a] @ model.grid.weights)
    if fa <= NULL_ACTION_MASS:
        raise NullAction(f"action {model.ctx.actions.labels[a]!r} has zero probability")
    return DensityTable(model.grid, joint[a] / fa, log_partition(model) + np.log(fa))


def competition_gap(model: EquilibriumModel, density: Optional[DensityTable] = None) -> float:
    """Realized competition term ``E[x (f[entry|x] - f[exit|x])]``."""
    if density is None:
        density = marginal_density(model)
    f = conditional_table(model)
    x = model.grid.points
    return model.grid.integrate(density.values * (f[model.entry_action] - f[model.exit_action]) * x)


def density_frame(model: EquilibriumModel, density: Optional[DensityTable] = None) -> pd.DataFrame:
    """Tabulate ``f[x]``, ``f[a|x]`` and ``f[a, x]`` on the grid for export."""
    if density is None:
        density = marginal_density(model)
    cond = conditional_table(model)
    joint = cond * density.values
    cols = {"x": model.grid.points, "f_x": density.values}
    for i, label in enumerate(model.ctx.actions.labels):
        cols[f"f_{label}_given_x"] = cond[i]
    for i, label in enumerate(model.ctx.actions.labels):
        cols[f"f_joint_{label}"] = joint[i]
    return pd.DataFrame(cols)
