"""Rational-inattention fixed point by Blahut-Arimoto iteration.

Unlike the exogenous-prior decision rule, the weighting here is the
endogenous unconditional action distribution::

    f[a|x] = f[a] exp(U(a, x) / T) / Z(x),    f[a] = sum_x p[x] f[a|x]

iterated from a uniform ``f[a]`` until neither table moves by more than ``tol``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import ActionSet, ModelError, UtilityModel, validate_probability_vector

logger = logging.getLogger(__name__)

ACTION_FLOOR = 1e-300


class MaxIterationsExceeded(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class RiProblem:
    actions: ActionSet
    states: np.ndarray
    state_weights: np.ndarray
    utility: UtilityModel
    T: float

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim != 1 or states.size < 1:
            raise ModelError("states must be a non-empty 1-d array")
        weights = validate_probability_vector(self.state_weights, states.size)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "state_weights", weights)
        if self.utility.n_actions != self.actions.size:
            raise ModelError("utility and action set disagree on the number of actions")
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ModelError("temperature must be positive and finite")

    @classmethod
    def from_table(cls, payoffs, state_weights, T: float, labels=None) -> "RiProblem":
        """Problem over state indices ``0..m-1`` with payoff matrix ``payoffs[a][state]``."""
        u = np.asarray(payoffs, dtype=float)
        if u.ndim != 2:
            raise ModelError("payoff table must be 2-d (actions x states)")
        labels = labels or tuple(f"a{i}" for i in range(u.shape[0]))

        def payoff(x):
            idx = np.asarray(x).astype(int)
            return u[:, idx]

        return cls(ActionSet(labels), np.arange(u.shape[1], dtype=float), state_weights,
                   UtilityModel.table(u.shape[0], payoff), T)

    def payoff_table(self) -> np.ndarray:
        return self.utility.values(self.states)


@dataclass(frozen=True, eq=False)
class RiSolution:
    f_a: np.ndarray
    f_a_given_x: np.ndarray
    iterations: int
    converged: bool
    residual: float
    objective_trace: np.ndarray

    def to_dict(self, problem: RiProblem) -> dict:
        return {
            "actions": list(problem.actions.labels),
            "states": problem.states.tolist(),
            "T": problem.T,
            "f_a": self.f_a.tolist(),
            "f_a_given_x": self.f_a_given_x.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "residual": self.residual,
            "objective": float(self.objective_trace[-1]),
        }


def _conditional(log_fa: np.ndarray, u: np.ndarray, T: float) -> np.ndarray:
    z = log_fa[:, None] + u / T
    return np.exp(z - logsumexp(z, axis=0))


def ri_objective(cond: np.ndarray, state_weights: np.ndarray, u: np.ndarray, T: float) -> float:
    """Expected utility minus ``T`` times the mutual information between state and action."""
    fa = cond @ state_weights
    eu = float(np.sum(state_weights * cond * u))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(cond > 0, np.log(cond) - np.log(np.maximum(fa, ACTION_FLOOR))[:, None], 0.0)
    mi = float(np.sum(state_weights * cond * ratio))
    return eu - T * mi


def solve_ri(problem: RiProblem, tol: float = 1e-12, max_iter: int = 10_000) -> RiSolution:
    """Iterate to the rational-inattention fixed point.

    If ``max_iter`` is reached the last iterate is returned with
    ``converged=False`` and a :class:`MaxIterationsExceeded` warning is issued.
    """
    if tol <= 0:
        raise ModelError("tol must be positive")
    u = problem.payoff_table()
    w = problem.state_weights
    n = problem.actions.size
    fa = np.full(n, 1.0 / n)
    cond = _conditional(np.log(fa), u, problem.T)
    trace = [ri_objective(cond, w, u, problem.T)]
    residual = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new_fa = np.maximum(cond @ w, ACTION_FLOOR)
        new_fa /= new_fa.sum()
        new_cond = _conditional(np.log(new_fa), u, problem.T)
        residual = max(np.abs(new_fa - fa).max(), np.abs(new_cond - cond).max())
        fa, cond = new_fa, new_cond
        trace.append(ri_objective(cond, w, u, problem.T))
        if residual < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"no convergence after {max_iter} iterations (residual {residual:.3e})",
                      MaxIterationsExceeded, stacklevel=2)
    # report the marginal implied by the final conditional table
    fa = cond @ w
    return RiSolution(fa, cond, it, converged, float(residual), np.array(trace))
