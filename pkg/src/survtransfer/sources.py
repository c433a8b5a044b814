"""Source-predictor ingestion, size-weighted pooling, pseudo-sample construction.

Source studies contribute only survival predictions, ingested either as a
prediction table (id, time -> survival value) or as an exported model (a
transformation-model fit with named covariates, usable through the target
study's covariates).  Pooled predictions seed the penalty atoms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .model import (SOURCE_SURVIVAL_EPS, CovariatePath, PseudoSample,
                    StepIntensity, TargetModel, TransformationSpec, survival)


def _clamp(value: float) -> float:
    return min(max(float(value), SOURCE_SURVIVAL_EPS), 1.0 - SOURCE_SURVIVAL_EPS)


@dataclass(frozen=True)
class SourcePredictor:
    """One source study's survival predictor.

    Exactly one of ``table`` (mapping (subject id, time) -> survival value)
    and ``export`` (a fitted model plus its covariate names) must be given.
    ``sample_size`` drives the pooling weight.
    """

    sample_size: int
    table: dict | None = None
    export: TargetModel | None = None
    covariate_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.sample_size <= 0:
            raise ValueError("source sample size must be positive")
        if (self.table is None) == (self.export is None):
            raise ValueError("provide exactly one of table or export")
        if self.table is not None:
            for key, v in self.table.items():
                if not 0.0 <= float(v) <= 1.0:
                    raise DataError(f"table survival value out of [0,1] at {key!r}")
        if self.export is not None and self.covariate_names is None:
            raise ValueError("exported models need covariate names")

    @property
    def kind(self) -> str:
        return "prediction-table" if self.table is not None else "exported-model"


@dataclass(frozen=True)
class PooledPredictor:
    """Size-weighted average of source predictors; weights sum to 1."""

    components: tuple[SourcePredictor, ...]
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        w = np.asarray(self.weights, dtype=float)
        if len(comps) == 0 or len(w) != len(comps):
            raise ValueError("one weight per component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        w.flags.writeable = False
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)


def pool_weights(sample_sizes) -> np.ndarray:
    """Pooling weights proportional to source sample sizes."""
    sizes = np.asarray(list(sample_sizes), dtype=float)
    if len(sizes) == 0:
        raise ValueError("at least one source sample size required")
    if np.any(sizes <= 0):
        raise ValueError("sample sizes must be positive")
    return sizes / sizes.sum()


def pool(predictors) -> PooledPredictor:
    """Pooled predictor with weights proportional to sample sizes."""
    preds = tuple(predictors)
    return PooledPredictor(preds, pool_weights([p.sample_size for p in preds]))


def evaluate_source(pred: SourcePredictor, t: float, path: CovariatePath,
                    subject_id: str | None = None) -> float:
    """Source survival prediction at (t, X), clamped away from {0, 1}.

    Table predictors are keyed by subject identity and time, so they require
    ``subject_id``; exported models are evaluated through the target path's
    named covariates.
    """
    if pred.table is not None:
        if subject_id is None:
            raise DataError("prediction-table sources need a subject id")
        key = (str(subject_id), float(t))
        if key not in pred.table:
            raise DataError(f"no source prediction for key {key!r}")
        return _clamp(pred.table[key])
    sub = path.project(pred.covariate_names) if path.names != pred.covariate_names \
        else path
    return _clamp(survival(pred.export, sub, t))


def evaluate_pooled(pooled: PooledPredictor, t: float, path: CovariatePath,
                    subject_id: str | None = None) -> float:
    value = sum(c * evaluate_source(p, t, path, subject_id)
                for p, c in zip(pooled.components, pooled.weights))
    return _clamp(value)


def build_pseudo_samples(subjects, pooled: PooledPredictor,
                         atoms=None, subject_ids=None) -> list[PseudoSample]:
    """Penalty atoms carrying pooled source predictions.

    Default construction: one atom per subject at (Y_i, X_i) with unit
    weight.  Custom construction: pass ``atoms`` as (time, path, weight)
    triples; the pooled prediction is evaluated at each.  ``subject_ids``
    is required when any source is a prediction table (default mode only).
    """
    out = []
    if atoms is None:
        for i, s in enumerate(subjects):
            sid = subject_ids[i] if subject_ids is not None else None
            try:
                value = evaluate_pooled(pooled, s.time, s.covariates, sid)
            except DataError as exc:
                raise DataError(f"subject {sid if sid is not None else i}: {exc}") from exc
            out.append(PseudoSample(time=s.time, covariates=s.covariates,
                                    weight=1.0, source_survival=value))
        return out
    for t, path, w in atoms:
        value = evaluate_pooled(pooled, t, path)
        out.append(PseudoSample(time=t, covariates=path, weight=w,
                                source_survival=value))
    return out


def export_cox(beta_by_name: dict, intensity: StepIntensity, r: float,
               sample_size: int) -> SourcePredictor:
    """Wrap a fitted transformation model as an exportable source predictor."""
    names = tuple(beta_by_name.keys())
    model = TargetModel(beta=np.array([beta_by_name[nm] for nm in names], dtype=float),
                        intensity=intensity, transform=TransformationSpec(r))
    return SourcePredictor(sample_size=sample_size, export=model,
                           covariate_names=names)
