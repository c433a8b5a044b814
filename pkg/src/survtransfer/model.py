"""Domain types and exact evaluation of the transformation survival model.

The model family: Lambda(t|X) = G[ integral_0^t exp(beta'X(s)) dLambda(s) ]
with G(x) = log(1 + r*x)/r for r > 0 and G(x) = x for r = 0, Lambda a step
function with nonnegative jumps.  This module owns the types, the survival
function, the right-censored log-likelihood in jump form, and the
cross-entropy similarity penalty evaluated on pseudo samples.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

# Clamp bounds: source predictions away from {0,1} on ingestion, model
# survival away from {0,1} before logs in the penalty.
SOURCE_SURVIVAL_EPS = 1e-6
MODEL_SURVIVAL_EPS = 1e-12


def _readonly(a, dtype=float, ndim=None):
    arr = np.array(a, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


_ZERO_BREAKPOINT = _readonly(np.zeros(1))


@dataclass(frozen=True)
class CovariatePath:
    """Right-continuous piecewise-constant covariate path.

    ``values[k]`` holds on ``[breakpoints[k], breakpoints[k+1])``; the last
    segment extends indefinitely.  Time-fixed covariates are the
    single-segment case.  ``names`` optionally labels the coordinates (used
    to resolve exported source models against a target study).
    """

    breakpoints: np.ndarray
    values: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        bp = _readonly(self.breakpoints, ndim=1)
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(len(bp), -1) if len(bp) > 1 else vals.reshape(1, -1)
        if vals.ndim != 2 or vals.shape[0] != len(bp):
            raise ValueError("values must have one row per breakpoint")
        if vals.shape[1] == 0:
            raise ValueError("covariate dimension must be at least 1")
        vals.flags.writeable = False
        if len(bp) == 0:
            raise ValueError("path needs at least one segment")
        if bp[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise ValueError("covariate values must be finite")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        if self.names is not None:
            names = tuple(str(s) for s in self.names)
            if len(names) != vals.shape[1]:
                raise ValueError("names length must match covariate dimension")
            object.__setattr__(self, "names", names)

    @staticmethod
    def fixed(values, names=None) -> "CovariatePath":
        """Path for time-fixed covariates."""
        return CovariatePath(np.zeros(1), np.atleast_2d(np.asarray(values, float)), names)

    @staticmethod
    def _fixed_trusted(row: np.ndarray, names) -> "CovariatePath":
        """Validation-free single-segment path; ``row`` must be a read-only
        (1, p) float view.  Used by bulk generators."""
        path = object.__new__(CovariatePath)
        object.__setattr__(path, "breakpoints", _ZERO_BREAKPOINT)
        object.__setattr__(path, "values", row)
        object.__setattr__(path, "names", names)
        return path

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def is_fixed(self) -> bool:
        return len(self.breakpoints) == 1

    def at(self, t: float) -> np.ndarray:
        """Covariate vector at time t (right-continuous)."""
        if t < 0:
            raise ValueError("time must be nonnegative")
        k = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return self.values[max(k, 0)]

    def at_times(self, times) -> np.ndarray:
        """Covariate matrix, one row per query time."""
        times = np.asarray(times, dtype=float)
        k = np.searchsorted(self.breakpoints, times, side="right") - 1
        return self.values[np.maximum(k, 0)]

    def project(self, names: tuple[str, ...]) -> "CovariatePath":
        """Sub-path restricted to the named coordinates, preserving order."""
        if self.names is None:
            raise DataError("covariate path carries no names to resolve against")
        try:
            cols = [self.names.index(nm) for nm in names]
        except ValueError as exc:
            missing = next(nm for nm in names if nm not in self.names)
            raise DataError(f"covariate not present in target path: {missing!r}") from exc
        return CovariatePath(self.breakpoints, self.values[:, cols], tuple(names))


@dataclass(frozen=True)
class Subject:
    """One right-censored observation: follow-up time, event flag, covariates."""

    time: float
    event: bool
    covariates: CovariatePath

    def __post_init__(self):
        t = float(self.time)
        if not (t > 0 and np.isfinite(t)):
            raise ValueError("follow-up time must be positive and finite")
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "event", bool(self.event))


@dataclass(frozen=True)
class StepIntensity:
    """Step cumulative intensity: jumps[l] at times[l], Lambda(0) = 0."""

    times: np.ndarray
    jumps: np.ndarray

    def __post_init__(self):
        t = _readonly(self.times, ndim=1)
        j = _readonly(self.jumps, ndim=1)
        if len(t) != len(j):
            raise ValueError("times and jumps must have equal length")
        if len(t) and (t[0] <= 0 or np.any(np.diff(t) <= 0)):
            raise ValueError("jump times must be positive and strictly increasing")
        if np.any(j < 0):
            raise ValueError("jump sizes must be nonnegative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "jumps", j)

    def cumulative(self, t) -> np.ndarray | float:
        """Lambda(t) = sum of jumps at times <= t (vectorized in t)."""
        cum = np.concatenate([[0.0], np.cumsum(self.jumps)])
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        out = cum[idx]
        return float(out) if np.isscalar(t) else out

    def jump_at(self, t: float) -> float:
        """Jump size exactly at t (0 if t is not a jump time)."""
        k = int(np.searchsorted(self.times, t))
        if k < len(self.times) and self.times[k] == t:
            return float(self.jumps[k])
        return 0.0


@dataclass(frozen=True)
class TransformationSpec:
    """Transformation index r >= 0; r = 0 selects the proportional-hazards path."""

    r: float = 0.0

    def __post_init__(self):
        r = float(self.r)
        if not (r >= 0 and np.isfinite(r)):
            raise ValueError("transformation index r must be nonnegative")
        object.__setattr__(self, "r", r)


@dataclass(frozen=True)
class TargetModel:
    """Fitted or hypothesized model: regression vector, step intensity, transform."""

    beta: np.ndarray
    intensity: StepIntensity
    transform: TransformationSpec = field(default_factory=TransformationSpec)

    def __post_init__(self):
        object.__setattr__(self, "beta", _readonly(self.beta, ndim=1))


@dataclass(frozen=True)
class PseudoSample:
    """One penalty atom: evaluation time, covariates, weight, pooled source survival.

    The source survival value is clamped into
    [SOURCE_SURVIVAL_EPS, 1 - SOURCE_SURVIVAL_EPS] on construction.
    """

    time: float
    covariates: CovariatePath
    weight: float
    source_survival: float

    def __post_init__(self):
        t = float(self.time)
        if not (t > 0 and np.isfinite(t)):
            raise ValueError("pseudo-sample time must be positive")
        w = float(self.weight)
        if not (w >= 0 and np.isfinite(w)):
            raise ValueError("pseudo-sample weight must be nonnegative")
        s = float(self.source_survival)
        if not (0.0 <= s <= 1.0):
            raise ValueError("source survival must lie in [0, 1]")
        s = min(max(s, SOURCE_SURVIVAL_EPS), 1.0 - SOURCE_SURVIVAL_EPS)
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "source_survival", s)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def transform_G(x, r):
    """Logarithmic transformation G(x) = log(1 + r*x)/r, identity at r = 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("transform argument must be nonnegative")
    if r < 0:
        raise ValueError("transformation index r must be nonnegative")
    if r == 0:
        out = x.copy()
    else:
        out = np.log1p(r * x) / r
    return float(out) if out.ndim == 0 else out


def _log_g_deriv(x, r):
    """log G'(x) = -log(1 + r*x); analytic, valid for r = 0 as well."""
    return -np.log1p(r * np.asarray(x, dtype=float))


def cumulative_intensity(beta, intensity: StepIntensity, path: CovariatePath,
                         t: float) -> float:
    """sum_{t_l <= t} jump_l * exp(beta'X(t_l)); 0 before the first jump."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (path.dim,):
        raise ValueError(f"beta has dimension {beta.shape}, path has {path.dim} covariates")
    if t < 0:
        raise ValueError("time must be nonnegative")
    k = int(np.searchsorted(intensity.times, t, side="right"))
    if k == 0:
        return 0.0
    X = path.at_times(intensity.times[:k])
    return float(np.sum(intensity.jumps[:k] * np.exp(X @ beta)))


def survival(model: TargetModel, path: CovariatePath, t: float) -> float:
    """Model survival S(t|X) = exp(-G(A(t)));  1 at t = 0."""
    a = cumulative_intensity(model.beta, model.intensity, path, t)
    return float(np.exp(-transform_G(a, model.transform.r)))


def survival_grid(model: TargetModel, covariates: np.ndarray,
                  times: np.ndarray) -> np.ndarray:
    """Survival matrix for time-fixed covariate rows over a time grid.

    Parameters
    ----------
    covariates : (n, p) array of time-fixed covariate vectors.
    times : (T,) array of nonnegative evaluation times.

    Returns
    -------
    (n, T) array with S(times[j] | covariates[i]).
    """
    covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    eta = covariates @ model.beta
    a = np.exp(eta)[:, None] * np.asarray(model.intensity.cumulative(times))[None, :]
    r = model.transform.r
    g = np.log1p(r * a) / r if r > 0 else a
    return np.exp(-g)


def log_likelihood(subjects, model: TargetModel) -> float:
    """Right-censored log-likelihood with the density slope read as the jump.

    Returns -inf (with a degenerate-likelihood warning) when some event time
    carries a zero jump.
    """
    r = model.transform.r
    total = 0.0
    degenerate = False
    for s in subjects:
        a = cumulative_intensity(model.beta, model.intensity, s.covariates, s.time)
        total -= transform_G(a, r)
        if s.event:
            lam = model.intensity.jump_at(s.time)
            if lam <= 0.0:
                degenerate = True
                continue
            eta = float(s.covariates.at(s.time) @ model.beta)
            total += np.log(lam) + eta + _log_g_deriv(a, r)
    if degenerate:
        warnings.warn("event time with zero jump: log-likelihood is -inf",
                      RuntimeWarning, stacklevel=2)
        return float("-inf")
    return float(total)


def penalty_psi(pseudo, model: TargetModel) -> float:
    """Cross-entropy similarity between model and pooled source predictions.

    m^{-1} sum_i w_i [ S_chk_i log S_i + (1 - S_chk_i) log(1 - S_i) ], with the
    model survival clamped to [1e-12, 1 - 1e-12] before the logs.  Empty atom
    lists give 0 (the penalty vanishes).
    """
    if len(pseudo) == 0:
        return 0.0
    total = 0.0
    for atom in pseudo:
        s_fit = survival(model, atom.covariates, atom.time)
        s_fit = min(max(s_fit, MODEL_SURVIVAL_EPS), 1.0 - MODEL_SURVIVAL_EPS)
        s_src = atom.source_survival
        total += atom.weight * (s_src * np.log(s_fit) + (1.0 - s_src) * np.log1p(-s_fit))
    return float(total / len(pseudo))
