import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from survtransfer.model import CovariatePath, PseudoSample, Subject


def make_target_data(n, seed, beta=(0.5, -0.5), tau=2.0, censored=True):
    """Draws from the harness's target design, returned as plain arrays."""
    rng = np.random.default_rng(seed)
    x1 = (rng.random(n) < 0.5).astype(float)
    x2 = rng.random(n)
    x = np.column_stack([x1, x2])
    beta = np.asarray(beta, float)
    u = np.clip(rng.random(n), 1e-300, 1 - 1e-16)
    t = 2.0 * (u ** (-np.exp(-(x @ beta))) - 1.0)
    if censored:
        c = np.minimum(rng.uniform(1.5, 4.0, n), tau)
    else:
        c = np.full(n, np.inf)
    y = np.minimum(t, c)
    d = t <= c
    return y, d, x


def make_subjects(y, d, x, names=("x1", "x2")):
    names = tuple(names[: x.shape[1]]) if names else None
    return [Subject(float(y[i]), bool(d[i]), CovariatePath.fixed(x[i], names))
            for i in range(len(y))]


def make_atoms(subjects, surv_values, weights=None):
    weights = np.ones(len(subjects)) if weights is None else weights
    return [PseudoSample(s.time, s.covariates, float(w), float(v))
            for s, w, v in zip(subjects, weights, surv_values)]


@pytest.fixture
def target_sample():
    """200 subjects from the target design, with arrays alongside."""
    y, d, x = make_target_data(200, seed=42)
    return make_subjects(y, d, x), y, d, x
