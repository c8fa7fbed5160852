"""Histogram construction, likelihood, multi-start fitting and rolling-prior runs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .core import (
    MIN_TEMPERATURE,
    ActionSet,
    EquilibriumParams,
    Grid,
    ModelError,
    validate_probability_vector,
)
from .decision import AbsoluteContinuityViolation, kl_from_prior
from .equilibrium import (
    DensityTable,
    EquilibriumModel,
    action_marginal,
    competition_gap,
    conditional_table,
    log_kernel,
    log_partition,
)
from .priors import BeliefHistory, PriorSchedule, append_period, prior_for_period

logger = logging.getLogger(__name__)

MIN_SAMPLES = 100
UTILITY_KINDS = ("binary", "ternary")


class TooFewSamples(ModelError):
    pass


class ZeroDensityAtOccupiedBin(ModelError):
    pass


class NoFiniteObjective(ModelError):
    pass


class PeriodFitError(ModelError):
    def __init__(self, period: str, cause: Exception):
        super().__init__(f"period {period}: {cause}")
        self.period = period
        self.cause = cause


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Binned outcome histogram.

    ``xi`` is the raw (unbinned) sample mean. ``data_min``, ``data_max`` and
    ``iqr`` describe the raw samples and size the fitting grid.
    """

    bin_centers: np.ndarray
    bin_widths: np.ndarray
    weights: np.ndarray
    xi: float
    sample_count: int
    data_min: float
    data_max: float
    iqr: float
    empty_bins: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        return np.append(self.bin_centers - self.bin_widths / 2, self.bin_centers[-1] + self.bin_widths[-1] / 2)

    @property
    def binned_mean(self) -> float:
        return float(np.dot(self.weights, self.bin_centers))

    @property
    def entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-np.sum(w * np.log(w)))

    def scaled(self, sample_count: int) -> "EmpiricalDistribution":
        return replace(self, sample_count=int(sample_count))


def build_empirical(samples, bins: int | Sequence[float] = 50) -> EmpiricalDistribution:
    """Histogram ``samples`` into ``bins`` equal-width bins (or explicit edges).

    Empty bins are kept with zero weight and flagged in ``empty_bins``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ModelError("samples must be finite")
    if np.isscalar(bins) or np.ndim(bins) == 0:
        if int(bins) < 2:
            raise ModelError("need at least two bins")
        counts, edges = np.histogram(x, bins=int(bins))
    else:
        edges = np.asarray(bins, dtype=float)
        if edges.size < 3 or np.any(np.diff(edges) <= 0):
            raise ModelError("bin edges must be strictly increasing with at least two bins")
        counts, edges = np.histogram(x, bins=edges)
        if counts.sum() != x.size:
            logger.warning("%d samples fall outside the bin edges and are ignored", x.size - counts.sum())
    weights = counts / counts.sum()
    empty = counts == 0
    if empty.any():
        logger.info("%d of %d bins are empty", int(empty.sum()), empty.size)
    q1, q3 = np.percentile(x, [25, 75])
    arrays = [(edges[1:] + edges[:-1]) / 2, np.diff(edges), weights, empty]
    for a in arrays:
        a.setflags(write=False)
    return EmpiricalDistribution(arrays[0], arrays[1], arrays[2], float(np.mean(x)), int(x.size),
                                 float(x.min()), float(x.max()), float(q3 - q1), arrays[3])


def binned_nll(emp: EmpiricalDistribution, log_density_at_centers: np.ndarray) -> float:
    """``-N sum_i w_i log(f(c_i) dx_i)`` over occupied bins; ``inf`` if an occupied bin has zero density."""
    occ = emp.weights > 0
    logq = log_density_at_centers[occ] + np.log(emp.bin_widths[occ])
    if not np.all(np.isfinite(logq)):
        return math.inf
    return float(-emp.sample_count * np.dot(emp.weights[occ], logq))


def negative_log_likelihood(model: EquilibriumModel, emp: EmpiricalDistribution,
                            strict: bool = False) -> float:
    """Discretized-density negative log-likelihood of the histogram under ``model``.

    Returns ``inf`` when an occupied bin gets zero density (raises
    :class:`ZeroDensityAtOccupiedBin` instead if ``strict``).
    """
    if emp.bin_centers[0] < model.grid.lo or emp.bin_centers[-1] > model.grid.hi:
        raise ModelError("model grid does not cover all bin centers")
    logf = log_kernel(model, emp.bin_centers) - log_partition(model)
    value = binned_nll(emp, logf)
    if strict and math.isinf(value):
        raise ZeroDensityAtOccupiedBin("model density vanishes at an occupied bin")
    return value


def binned_kl(emp: EmpiricalDistribution, log_density_at_centers: np.ndarray) -> float:
    occ = emp.weights > 0
    logq = log_density_at_centers[occ] + np.log(emp.bin_widths[occ])
    if not np.all(np.isfinite(logq)):
        raise AbsoluteContinuityViolation("model density vanishes at an occupied bin")
    w = emp.weights[occ]
    return float(np.dot(w, np.log(w) - logq))


def distinguishability_from_kl(kl: float) -> tuple[float, float]:
    # discretization can push the binned KL a hair below zero; clamp so explained stays in [0, 1]
    kl = max(kl, 0.0)
    explained = math.exp(-kl)
    return 1.0 - explained, explained


def information_distinguishability(emp: EmpiricalDistribution, model_density: DensityTable) -> tuple[float, float]:
    """Information distinguishability ``1 - exp(-KL)`` and its complement, the explained fraction.

    ``KL`` compares the histogram weights with the model's mass ``f(c_i) dx_i``
    at each bin center, reading ``f`` off the density table by interpolation.
    """
    with np.errstate(divide="ignore"):
        logf = np.log(model_density.at(emp.bin_centers))
    return distinguishability_from_kl(binned_kl(emp, logf))


@dataclass(frozen=True)
class FitConfig:
    """Settings shared by single fits and rolling runs."""

    grid_points: int = 501
    grid_pad_iqr: float = 2.0
    bins: int = 50
    xatol: float = 1e-8
    fatol: float = 1e-8
    max_iter: int = 2000
    starts: Optional[tuple] = None
    actions: tuple = ("buy", "sell")
    entry: str = "buy"
    exit: str = "sell"
    hold: str = "hold"
    extreme_weight: float = 0.99
    adaptive_strength: float = 0.0
    median_window: int = 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if self.starts is not None:
            object.__setattr__(self, "starts", tuple(tuple(map(float, s)) for s in self.starts))
        if self.grid_points < 32:
            raise ModelError("grid_points must be at least 32")
        if self.entry == self.exit:
            raise ModelError("entry and exit actions must differ")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ModelError(f"unknown config keys: {sorted(unknown)}")
        return cls(**mapping)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["actions"] = list(self.actions)
        d["starts"] = None if self.starts is None else [list(s) for s in self.starts]
        return d

    def action_set(self, utility_kind: str) -> ActionSet:
        if utility_kind == "ternary" and len(self.actions) == 2:
            return ActionSet((self.entry, self.hold, self.exit))
        return ActionSet(self.actions)

    def grid_for(self, emp: EmpiricalDistribution) -> Grid:
        lo = min(emp.data_min, float(emp.bin_centers[0]))
        hi = max(emp.data_max, float(emp.bin_centers[-1]))
        return Grid.covering(lo, hi, emp.iqr, self.grid_points, self.grid_pad_iqr)


@dataclass(frozen=True, eq=False)
class FitDiagnostics:
    kl_from_prior: Optional[np.ndarray]
    expected_kl_from_prior: Optional[float]
    competition_gap: float
    iterations: int
    evaluations: int
    converged: bool
    best_start: int
    start_nlls: tuple
    nonfinite_evaluations: int
    edge_log_gap: float = math.inf

    def to_dict(self) -> dict:
        return {
            "expected_kl_from_prior": self.expected_kl_from_prior,
            "competition_gap": self.competition_gap,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "converged": self.converged,
            "best_start": self.best_start,
            "start_nlls": list(self.start_nlls),
            "nonfinite_evaluations": self.nonfinite_evaluations,
            "edge_log_gap": self.edge_log_gap,
        }


@dataclass(frozen=True, eq=False)
class FitResult:
    params: EquilibriumParams
    prior_used: np.ndarray
    nll: float
    id: float
    explained: float
    kl_model_vs_empirical: float
    densities: DensityTable
    action_marginal: np.ndarray
    diagnostics: FitDiagnostics
    model: EquilibriumModel
    utility_kind: str
    sample_count: int
    period: Optional[str] = None

    @property
    def explained_pct(self) -> float:
        return 100.0 * self.explained

    def to_dict(self) -> dict:
        m = self.model
        return {
            "period": self.period,
            "utility_kind": self.utility_kind,
            "actions": list(m.ctx.actions.labels),
            "entry": m.ctx.actions.labels[m.entry_action],
            "exit": m.ctx.actions.labels[m.exit_action],
            "prior": self.prior_used.tolist(),
            "params": self.params.to_dict(),
            "nll": self.nll,
            "information_distinguishability": self.id,
            "explained": self.explained,
            "explained_pct": self.explained_pct,
            "kl_model_vs_empirical": self.kl_model_vs_empirical,
            "action_marginal": self.action_marginal.tolist(),
            "sample_count": self.sample_count,
            "grid": m.grid.spec(),
            "diagnostics": self.diagnostics.to_dict(),
        }


def model_from_dict(d: dict) -> EquilibriumModel:
    """Rebuild the fitted model from :meth:`FitResult.to_dict` output."""
    actions = ActionSet(d["actions"])
    grid = Grid.uniform(d["grid"]["lo"], d["grid"]["hi"], int(d["grid"]["n"]))
    hold = None
    if actions.size == 3:
        hold = ({0, 1, 2} - {actions.index(d["entry"]), actions.index(d["exit"])}).pop()
    return EquilibriumModel.build(EquilibriumParams.from_dict(d["params"]), grid, prior=d["prior"],
                                  actions=actions, entry=d["entry"], exit=d["exit"], hold=hold)


def default_starts(xi: float, utility_kind: str = "binary") -> list[tuple]:
    """Five deterministic starting points ``(T, mu, rho, gamma[, mu2])``."""
    starts = [(1.0, xi, 4.0, 0.0), (0.2, xi, 4.0, 0.0), (5.0, xi, 4.0, 0.0),
              (1.0, 0.0, 4.0, 0.0), (1.0, xi, 0.0, 0.0)]
    if utility_kind == "ternary":
        starts = [s + (s[1],) for s in starts]
    return starts


class _Objective:
    """NLL as a function of ``(log T, mu, rho, gamma[, mu2])`` on a fixed grid."""

    def __init__(self, emp, prior, utility_kind, config, grid):
        self.emp = emp
        self.prior = prior
        self.utility_kind = utility_kind
        self.config = config
        self.grid = grid
        self.actions = config.action_set(utility_kind)
        self.nonfinite = 0

    def params(self, theta) -> EquilibriumParams:
        T = max(math.exp(min(theta[0], 700.0)), MIN_TEMPERATURE)
        mu2 = float(theta[4]) if self.utility_kind == "ternary" else None
        return EquilibriumParams(T, float(theta[1]), float(theta[2]), float(theta[3]), self.emp.xi, mu2)

    def model(self, theta) -> EquilibriumModel:
        hold = self.config.hold if self.utility_kind == "ternary" else None
        return EquilibriumModel.build(self.params(theta), self.grid, prior=self.prior,
                                      actions=self.actions, entry=self.config.entry,
                                      exit=self.config.exit, hold=hold)

    def __call__(self, theta) -> float:
        try:
            with np.errstate(all="ignore"):
                value = negative_log_likelihood(self.model(theta), self.emp)
        except (FloatingPointError, OverflowError, ModelError):
            value = math.inf
        if not math.isfinite(value):
            self.nonfinite += 1
            return math.inf
        return value


def _initial_simplex(theta0: np.ndarray, scale: float) -> np.ndarray:
    steps = [0.5, 0.5 * scale, 0.5 / scale, 0.1 / scale]
    if theta0.size == 5:
        steps.append(0.5 * scale)
    simplex = np.tile(theta0, (theta0.size + 1, 1))
    for i, s in enumerate(steps):
        simplex[i + 1, i] += s
    return simplex


def fit(emp: EmpiricalDistribution, prior=None, utility_kind: str = "binary",
        config: Optional[FitConfig] = None, period: Optional[str] = None) -> FitResult:
    """Fit ``T, mu, rho, gamma`` (and ``mu2``) by multi-start Nelder-Mead on the NLL.

    ``T`` is searched in log space, ``xi`` is pinned to ``emp.xi``. The best
    start by NLL wins.
    """
    config = config or FitConfig()
    if utility_kind not in UTILITY_KINDS:
        raise ModelError(f"utility kind must be one of {UTILITY_KINDS}")
    actions = config.action_set(utility_kind)
    prior = (np.full(actions.size, 1.0 / actions.size) if prior is None
             else validate_probability_vector(prior, actions.size))
    grid = config.grid_for(emp)
    objective = _Objective(emp, prior, utility_kind, config, grid)
    starts = config.starts or default_starts(emp.xi, utility_kind)
    scale = max(float(np.sqrt(np.dot(emp.weights, (emp.bin_centers - emp.binned_mean) ** 2))), 1e-3)

    runs = []
    for start in starts:
        theta0 = np.array([math.log(max(start[0], MIN_TEMPERATURE))] + list(start[1:]), dtype=float)
        if theta0.size != (5 if utility_kind == "ternary" else 4):
            raise ModelError(f"start {start} has the wrong number of parameters")
        res = minimize(objective, theta0, method="Nelder-Mead",
                       options={"xatol": config.xatol, "fatol": config.fatol,
                                "maxiter": config.max_iter, "maxfev": 5 * config.max_iter,
                                "initial_simplex": _initial_simplex(theta0, scale)})
        runs.append(res)
    start_nlls = tuple(float(r.fun) for r in runs)
    finite = [i for i, v in enumerate(start_nlls) if math.isfinite(v)]
    if not finite:
        raise NoFiniteObjective("every start hit the zero-density sentinel")
    best = min(finite, key=lambda i: start_nlls[i])
    res = runs[best]

    model = objective.model(res.x)
    params = model.params
    kernel = log_kernel(model, grid.points)
    log_z = log_partition(model, kernel)
    density = DensityTable(grid, np.exp(kernel - log_z), log_z)
    joint = conditional_table(model) * density.values
    fa = action_marginal(model, joint)
    kl = binned_kl(emp, log_kernel(model, emp.bin_centers) - log_z)
    id_, explained = distinguishability_from_kl(kl)
    if np.all(prior > 0):
        kl_profile = kl_from_prior(model.ctx, grid.points)
        expected_kl = grid.integrate(density.values * kl_profile)
    else:
        kl_profile, expected_kl = None, None
    diagnostics = FitDiagnostics(
        kl_from_prior=kl_profile,
        expected_kl_from_prior=expected_kl,
        competition_gap=competition_gap(model, density),
        iterations=int(sum(r.nit for r in runs)),
        evaluations=int(sum(r.nfev for r in runs)),
        converged=bool(res.success),
        best_start=best,
        start_nlls=start_nlls,
        nonfinite_evaluations=objective.nonfinite,
        edge_log_gap=float(kernel.max() - max(kernel[0], kernel[-1])),
    )
    if not res.success:
        logger.warning("fit%s did not converge: %s", f" for {period}" if period else "", res.message)
    return FitResult(params, prior, float(res.fun), id_, explained, kl, density, fa,
                     diagnostics, model, utility_kind, emp.sample_count, period)


def rolling_fit(periods: Sequence, schedule: PriorSchedule, utility_kind: str = "binary",
                config: Optional[FitConfig] = None,
                history: Optional[BeliefHistory] = None) -> tuple[BeliefHistory, list[FitResult]]:
    """Fit each period in order, deriving its prior from the fits before it.

    ``periods`` holds :class:`EmpiricalDistribution` objects or ``(label, emp)``
    pairs. Passing an existing ``history`` resumes a run after its last record.
    """
    if not periods:
        raise ModelError("rolling_fit needs at least one period")
    history = history or BeliefHistory()
    results = []
    offset = len(history)
    for i, item in enumerate(periods):
        label, emp = item if isinstance(item, tuple) else (str(offset + i), item)
        t = offset + i
        try:
            prior = prior_for_period(schedule, history, t)
            result = fit(emp, prior, utility_kind, config, period=label)
        except ModelError as exc:
            raise PeriodFitError(label, exc) from exc
        history = append_period(history, prior, result.action_marginal, label)
        results.append(result)
    return history, results


def total_variation(series) -> float:
    """Summed L1 change between consecutive vectors of a marginal series."""
    s = np.asarray(series, dtype=float)
    return float(np.abs(np.diff(s, axis=0)).sum())


def sample_from_model(model: EquilibriumModel, n: int, seed: int,
                      density: Optional[DensityTable] = None) -> np.ndarray:
    """Inverse-CDF draws from ``f[x]``: trapezoid CDF on the grid, linear within cells."""
    if n < 0:
        raise ModelError("sample size must be non-negative")
    if density is None:
        kernel = log_kernel(model, model.grid.points)
        values = np.exp(kernel - log_partition(model, kernel))
    else:
        values = density.values
    x = model.grid.points
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    rng = np.random.default_rng(seed)
    return np.interp(rng.random(n), cdf, x)
