"""Data-driven selection of the transfer weight xi and the transform index r.

xi is chosen by k-fold cross-validation scored with the held-out integrated
Brier score (censoring weights and horizon from each training fold); r is
chosen by AIC on unpenalized fits.  Ties break toward the smaller value.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .em import FitConfig, fit
from .errors import DataError, NumericError
from .metrics import ValidationSet, censoring_km, integrated_brier

_DEFAULT_XI = (0.0,) + tuple(2.0**k for k in range(-6, 4))
_DEFAULT_R = (0.0, 0.1, 0.25, 0.5, 1.0, 1.5, 2.0)
_MAX_REFOLDS = 10


@dataclass(frozen=True)
class TuneGrid:
    """Candidate grids and fold settings for tuning."""

    xi_values: tuple = _DEFAULT_XI
    r_values: tuple = _DEFAULT_R
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "xi_values", tuple(float(x) for x in self.xi_values))
        object.__setattr__(self, "r_values", tuple(float(r) for r in self.r_values))
        if not self.xi_values or not self.r_values:
            raise ValueError("tuning grids must be nonempty")
        if any(x < 0 for x in self.xi_values) or any(r < 0 for r in self.r_values):
            raise ValueError("grid values must be nonnegative")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")


def _fold_assignment(n: int, folds: int, seed: int, attempt: int = 0):
    rng = np.random.default_rng([int(seed), int(n), int(attempt)])
    perm = rng.permutation(n)
    return [np.sort(perm[f::folds]) for f in range(folds)]


def _event_safe_folds(subjects, folds: int, seed: int):
    """Fold index lists whose training parts each contain an event."""
    n = len(subjects)
    events = np.array([s.event for s in subjects], dtype=bool)
    for attempt in range(_MAX_REFOLDS):
        assignment = _fold_assignment(n, folds, seed, attempt)
        ok = all(events[np.setdiff1d(np.arange(n), held)].any()
                 for held in assignment)
        if ok:
            return assignment
    raise DataError("could not form folds with at least one event per training part")


def cv_select_xi(subjects, pseudo, grid: TuneGrid, r: float):
    """Cross-validated transfer weight.

    Each candidate xi is scored by the mean held-out integrated Brier score
    over [0, max training time], censoring-weighted by the training fold.
    With a paired atom list (one atom per subject, the default construction)
    atoms follow their subjects into the training folds.

    Returns (best xi, list of (xi, mean score)).
    """
    subjects = list(subjects)
    pseudo = list(pseudo)
    n = len(subjects)
    if grid.folds > n:
        raise ValueError("more folds than subjects")
    assignment = _event_safe_folds(subjects, grid.folds, grid.seed)
    paired = len(pseudo) == n

    table = []
    best_xi = None
    best_score = np.inf
    for xi in sorted(grid.xi_values):
        scores = []
        for held in assignment:
            train_idx = np.setdiff1d(np.arange(n), held)
            train = [subjects[i] for i in train_idx]
            atoms = [pseudo[i] for i in train_idx] if paired else pseudo
            try:
                res = fit(train, atoms, FitConfig(xi=xi, r=r))
                tau_hat = max(s.time for s in train)
                score = integrated_brier(res.model,
                                         ValidationSet([subjects[i] for i in held]),
                                         tau=tau_hat, cens=censoring_km(train))
            except NumericError as exc:
                warnings.warn(f"fold fit failed at xi={xi:g}: {exc}", RuntimeWarning)
                score = np.inf
            scores.append(score)
        mean_score = float(np.mean(scores))
        table.append((xi, mean_score))
        if mean_score < best_score:
            best_score = mean_score
            best_xi = xi
    if not np.isfinite(best_score):
        warnings.warn("all candidate xi values diverged; returning the smallest",
                      RuntimeWarning)
        best_xi = min(grid.xi_values)
    return best_xi, table


def aic_select_r(subjects, grid: TuneGrid):
    """AIC-selected transform index from unpenalized fits.

    AIC(r) = -2 loglik + 2 (p + L); L is shared across r, so rankings reduce
    to likelihood comparisons.  Non-convergent candidates are excluded with a
    warning.  Returns (best r, list of (r, AIC)).
    """
    subjects = list(subjects)
    n = len(subjects)
    p = subjects[0].covariates.dim
    table = []
    best_r = None
    best_aic = np.inf
    for r in sorted(grid.r_values):
        res = fit(subjects, [], FitConfig(xi=0.0, r=r))
        if not res.converged:
            warnings.warn(f"unpenalized fit did not converge at r={r:g}; excluded",
                          RuntimeWarning)
            continue
        loglik = n * res.objective_trace[-1]
        n_jumps = len(res.model.intensity.times)
        aic = -2.0 * loglik + 2.0 * (p + n_jumps)
        table.append((r, aic))
        if aic < best_aic:
            best_aic = aic
            best_r = r
    if best_r is None:
        raise NumericError("no transform index candidate converged")
    return best_r, table
