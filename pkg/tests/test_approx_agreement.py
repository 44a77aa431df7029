import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from app.errors import InsufficientDataError
from app.services.approx_agreement import (
    INF,
    AAStepRecord,
    ValueMultiset,
    aa_step,
    select_midpoint,
)

values = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)


def test_midpoint_discards_f_extremes():
    assert select_midpoint([0.0, 1.0, 2.0, 100.0], f=1) == pytest.approx(1.5)
    assert select_midpoint([-50.0, 1.0, 2.0, 3.0], f=1) == pytest.approx(1.5)


def test_missing_values_are_treated_as_infinite():
    multiset = ValueMultiset.from_received(4, 1, {0: 1.0, 1: 2.0, 2: 3.0})
    assert multiset.values[3] == INF
    assert select_midpoint(multiset) == pytest.approx(2.5)


def test_too_many_missing_values():
    multiset = ValueMultiset.from_received(4, 1, {0: 1.0, 1: 2.0})
    with pytest.raises(InsufficientDataError, match=r"\[2, 3\]"):
        select_midpoint(multiset)


def test_resilience_precondition():
    with pytest.raises(ValueError):
        select_midpoint([1.0, 2.0, 3.0], f=1)


def test_ranked_is_stable_on_ties():
    multiset = ValueMultiset((2.0, 1.0, 1.0, INF), 1)
    assert multiset.ranked() == [(1.0, 1), (1.0, 2), (2.0, 0), (INF, 3)]


@st.composite
def aa_records(draw, missing="own"):
    f = draw(st.integers(min_value=0, max_value=3))
    n = draw(st.integers(min_value=3 * f + 1, max_value=3 * f + 4))
    faulty = draw(st.lists(st.integers(0, n - 1), min_size=0, max_size=f, unique=True))
    correct = [v for v in range(n) if v not in faulty]
    inputs = {v: draw(values) for v in correct}
    delta = draw(st.floats(min_value=0.0, max_value=10.0))
    perturbations = {
        (w, v): draw(st.floats(min_value=-delta, max_value=delta))
        for w in correct for v in correct
    }
    faulty_values = {
        u: {v: draw(st.one_of(st.none(), values)) for v in correct} for u in faulty
    }
    return AAStepRecord(
        n=n, f=f, inputs=inputs, delta=delta, perturbations=perturbations,
        faulty_values=faulty_values, missing=missing,
    )


@settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(record=aa_records())
def test_validity(record):
    low, high = record.validity_interval()
    slack = 1e-9 * max(1.0, abs(low), abs(high))
    for y in aa_step(record).values():
        assert low - slack <= y <= high + slack


@settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(record=aa_records())
def test_convergence(record):
    ys = list(aa_step(record).values())
    spread = max(ys) - min(ys)
    assert spread <= record.convergence_bound() + 1e-9 * max(1.0, record.convergence_bound())


@settings(max_examples=600, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(record=aa_records())
def test_max_correction(record):
    ys = aa_step(record)
    bound = record.max_correction_bound()
    for v, y in ys.items():
        assert abs(y - record.inputs[v]) <= bound + 1e-9 * max(1.0, bound)


@settings(max_examples=600, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(record=aa_records(missing="inf"))
def test_validity_with_infinite_missing_values(record):
    low, high = record.validity_interval()
    slack = 1e-9 * max(1.0, abs(low), abs(high))
    for y in aa_step(record).values():
        assert math.isfinite(y)
        assert low - slack <= y <= high + slack


def test_exact_agreement_without_noise_or_faults():
    record = AAStepRecord(n=4, f=1, inputs={0: 0.0, 1: 4.0, 2: 4.0, 3: 8.0})
    ys = aa_step(record)
    assert len(set(ys.values())) == 1


def test_perturbation_above_delta_is_rejected():
    with pytest.raises(ValueError):
        AAStepRecord(n=4, f=1, inputs={0: 0.0, 1: 0.0, 2: 0.0, 3: 0.0}, delta=0.1,
                     perturbations={(0, 1): 0.2})


def test_batch_of_noisy_steps_matches_sorted_midpoint():
    rng = np.random.default_rng(2024)
    trials, n, f, delta = 20_000, 7, 2, 0.5
    correct = n - f
    inputs = rng.uniform(-100.0, 100.0, size=(trials, correct))
    # views[t, v, w] : valeur de w perçue par le nœud correct v
    noise = rng.uniform(-delta, delta, size=(trials, correct, correct))
    faulty = rng.uniform(-1e3, 1e3, size=(trials, correct, f))
    views = np.concatenate([inputs[:, None, :] + noise, faulty], axis=2)
    ordered = np.sort(views, axis=2)
    ys = (ordered[..., f] + ordered[..., n - f - 1]) / 2

    low = inputs.min(axis=1) - delta
    high = inputs.max(axis=1) + delta
    assert np.all(ys >= low[:, None] - 1e-9)
    assert np.all(ys <= high[:, None] + 1e-9)
    spread = ys.max(axis=1) - ys.min(axis=1)
    bound = (inputs.max(axis=1) - inputs.min(axis=1)) / 2 + 2 * delta
    assert np.all(spread <= bound + 1e-9)

    for t in range(0, trials, 997):
        for v in range(correct):
            assert select_midpoint(views[t, v].tolist(), f=f) == pytest.approx(ys[t, v], abs=1e-12)
