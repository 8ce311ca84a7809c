import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memmamba.errors import InstabilityError, ParameterError
from memmamba.theory import (BoundCheck, bibo_bound, checks_to_csv, equal_budget_lengths, layered_decay,
                             layered_decay_check, pooling_error_check, recall_bounds, run_bound_suite,
                             simulate_bibo, simulate_layered_decay)


def test_bound_check_slack():
    assert BoundCheck.of("a", 1.0, 1.0).holds
    assert BoundCheck.of("a", 1.0 + 1e-10, 1.0).holds
    c = BoundCheck.of("a", 2.0, 1.0)
    assert not c.holds and c.margin == -1.0
    assert checks_to_csv([c]).splitlines() == ["name,lhs,rhs,holds,margin", "a,2.0,1.0,false,-1.0"]


def test_pooling_of_constant_blocks_is_exact():
    H = np.repeat(np.arange(6.0).reshape(3, 2), 4, axis=0)
    c = pooling_error_check(H, 4)
    assert c.lhs == 0.0 and c.rhs == 0.0 and c.holds


@settings(max_examples=80)
@given(st.integers(0, 2**31), st.integers(1, 5), st.integers(1, 6), st.integers(1, 5))
def test_pooling_bound_holds(seed, w, blocks, d):
    H = np.random.default_rng(seed).standard_normal((w * blocks, d))
    assert pooling_error_check(H, w).holds


def test_pooling_rejects_ragged_blocks():
    with pytest.raises(ParameterError):
        pooling_error_check(np.zeros((5, 2)), 2)


def test_layered_decay_closed_form():
    assert layered_decay([0.5, 0.9], 3, 2.0) == pytest.approx(0.9 ** 6 * 2.0, rel=1e-15)
    assert layered_decay([0.5], 0, 3.0) == 3.0
    with pytest.raises(ParameterError):
        layered_decay([1.0], 1, 1.0)
    with pytest.raises(ParameterError):
        layered_decay([], 1, 1.0)


def test_identity_handoff_with_equal_decay_is_tight():
    a = np.full(3, 0.8)
    measured = simulate_layered_decay([a, a], 5, np.ones(3))
    assert measured == pytest.approx(layered_decay([0.8, 0.8], 5, np.sqrt(3)), rel=1e-13)


@settings(max_examples=80)
@given(st.integers(0, 2**31))
def test_layered_decay_bound_holds(seed):
    assert layered_decay_check(np.random.default_rng(seed)).holds


def test_bibo_closed_form_and_instability():
    assert bibo_bound(0.5, 2.0, 1.0, 0.5, 2.0) == pytest.approx(8.0)
    with pytest.raises(InstabilityError):
        bibo_bound(1.0, 1.0, 1.0, 0.0, 0.0)
    with pytest.raises(ParameterError):
        bibo_bound(0.5, -1.0, 1.0, 0.0, 0.0)


def test_scalar_bibo_approaches_bound():
    # constant worst-case drive on a scalar system converges to the bound
    peak = simulate_bibo([[0.9]], [[[1.0]]], 1.0, 0.0, 0.0, steps=5000, rng=np.random.default_rng(1))
    assert peak[0] <= bibo_bound(0.9, 1.0, 1.0, 0.0, 0.0)
    assert peak[0] > 0.5 * bibo_bound(0.9, 1.0, 1.0, 0.0, 0.0)


def test_bibo_bound_holds_over_random_systems(rng):
    N, ds, d = 50, 4, 3
    A = rng.uniform(0, 0.99, (N, ds))
    B = rng.standard_normal((N, ds, d))
    x, c, alpha = rng.uniform(0.1, 2, N), rng.uniform(0, 2, N), rng.uniform(0, 1, N)
    peak = simulate_bibo(A, B, x, alpha, c, 3000, rng)
    for i in range(N):
        assert peak[i] <= bibo_bound(A[i].max(), np.linalg.norm(B[i], 2), x[i], alpha[i], c[i]) + 1e-9


def test_recall_bounds_examples():
    ub, lb = recall_bounds(0.9, 1.0, 1.0, 0.1, 100, 0.8, 0.1)
    assert ub == pytest.approx(0.9 ** 100 * 10, rel=1e-12) and ub < 3e-4
    assert lb == 1.0
    ub, lb = recall_bounds(0.5, 1.0, 1.0, 0.5, 0, 0.1, 0.5)
    assert ub == 1.0 and lb == pytest.approx(0.1)
    with pytest.raises(ParameterError):
        recall_bounds(0.9, 1, 1, 0.0, 1, 1, 0.1)
    with pytest.raises(ParameterError):
        recall_bounds(0.9, 1, 1, 0.1, 1, 1, 1.0)


@given(st.floats(0.01, 0.99), st.integers(0, 200), st.integers(0, 200))
def test_ssm_recall_upper_bound_monotone_in_distance(a, k1, k2):
    lo, hi = sorted((k1, k2))
    assert recall_bounds(a, 1, 1, 0.5, hi, 1, 0)[0] <= recall_bounds(a, 1, 1, 0.5, lo, 1, 0)[0]


def test_equal_budget_lengths():
    n_t, n_o = equal_budget_lengths(1e12, 24, 1024, 24, 1024)
    assert n_t == pytest.approx(np.sqrt(1e12 / (24 * 1024)))
    assert n_o == pytest.approx(1e12 / (24 * 1024))
    assert n_o / n_t == pytest.approx(n_t)
    with pytest.raises(ParameterError):
        equal_budget_lengths(0, 1, 1, 1, 1)


def test_small_suite_all_hold():
    checks = run_bound_suite(instances=20, seed=3, bibo_steps=500)
    kinds = {c.name.split("/")[0] for c in checks}
    assert kinds == {"pooling", "layered_decay", "bibo", "contribution"}
    assert len(checks) == 80 and all(c.holds for c in checks)
    again = run_bound_suite(instances=20, seed=3, bibo_steps=500)
    assert checks == again
