import json
import types

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom

import teamfield as tf
from teamfield.counts import MeanField, enumerate_counts
from teamfield.errors import SpecValidationError
from teamfield.limit import SimplexGrid, LimitValueTable
from teamfield.metrics import (expected_deviation, estimate_lipschitz,
                               fit_rate, joint_distance, kappa_envelope,
                               lemma1_check, per_team_deviation,
                               theorem4_bound, wasserstein, wasserstein_fast)

from conftest import minimal_team

LINE3 = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]])
DISCRETE3 = np.ones((3, 3)) - np.eye(3)


def _rand_dist(rng, n):
    v = rng.random(n) + 1e-3
    return v / v.sum()


def test_wasserstein_two_state_closed_form():
    d = np.array([[0.0, 3.0], [3.0, 0.0]])
    assert wasserstein([0.2, 0.8], [0.7, 0.3], d) == pytest.approx(1.5, abs=1e-12)
    assert wasserstein_fast([0.2, 0.8], [0.7, 0.3], d) == pytest.approx(1.5)


def test_wasserstein_line_metric_equals_cdf_formula():
    """On a path graph W1 is the L1 distance between the CDFs."""
    rng = np.random.default_rng(4)
    for _ in range(50):
        p, q = _rand_dist(rng, 3), _rand_dist(rng, 3)
        oracle = abs(p[0] - q[0]) + abs(p[0] + p[1] - q[0] - q[1])
        assert wasserstein(p, q, LINE3) == pytest.approx(oracle, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3),
       st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3))
def test_discrete_metric_is_half_l1(pw, qw):
    p = np.array(pw) / sum(pw)
    q = np.array(qw) / sum(qw)
    lp = wasserstein(p, q, DISCRETE3)
    assert lp == pytest.approx(0.5 * np.abs(p - q).sum(), abs=1e-9)
    assert wasserstein_fast(p, q, DISCRETE3) == pytest.approx(lp, abs=1e-9)


def test_wasserstein_axioms():
    rng = np.random.default_rng(11)
    for _ in range(25):
        p, q, r = (_rand_dist(rng, 3) for _ in range(3))
        wpq = wasserstein(p, q, LINE3)
        assert wpq >= -1e-12
        assert wasserstein(p, p, LINE3) == pytest.approx(0.0, abs=1e-9)
        assert wasserstein(q, p, LINE3) == pytest.approx(wpq, abs=1e-9)
        assert wpq <= wasserstein(p, r, LINE3) + wasserstein(r, q, LINE3) + 1e-9


def test_wasserstein_rejects_bad_input():
    with pytest.raises(SpecValidationError):
        wasserstein([0.5, 0.6], [0.5, 0.5], DISCRETE3[:2, :2])
    with pytest.raises(SpecValidationError):
        wasserstein([0.5, 0.5], [1.0, 0.0], LINE3)


def test_joint_distance_sums_teams(reference_spec):
    z = MeanField(per_team=(np.array([1.0, 0.0]), np.array([0.3, 0.7])))
    zh = MeanField(per_team=(np.array([0.5, 0.5]), np.array([0.7, 0.3])))
    assert joint_distance(z, zh, reference_spec) == pytest.approx(0.9, abs=1e-12)
    assert joint_distance(z, z, reference_spec) == 0.0
    bad = MeanField(per_team=(np.array([1.0, 0.0]),))
    with pytest.raises(SpecValidationError):
        joint_distance(z, bad, reference_spec)


def _iid_probe_inputs(spec):
    gammas = (tf.build_prescription_set(spec, 0).items[0],)
    z = MeanField(per_team=(np.array([0.5, 0.5]),))
    return z, gammas


def test_deviation_matches_binomial_mad(iid_probe_spec):
    """Coin-flip dynamics: next counts are Binomial(N, 1/2), so the
    deviation is the mean absolute distance of X/N from 1/2."""
    from teamfield.model import with_populations
    z, gammas = _iid_probe_inputs(iid_probe_spec)
    for n in (2, 4, 8, 16):
        sp = with_populations(iid_probe_spec, n)
        x = np.arange(n + 1)
        oracle = float(np.sum(binom.pmf(x, n, 0.5) * np.abs(x / n - 0.5)))
        got = per_team_deviation(z, gammas, sp)
        assert got.shape == (1,)
        assert got[0] == pytest.approx(oracle, abs=1e-12)


def test_deviation_requires_count_point(iid_probe_spec):
    gammas = (tf.build_prescription_set(iid_probe_spec, 0).items[0],)
    z = MeanField(per_team=(np.array([0.3, 0.7]),))
    with pytest.raises(SpecValidationError):
        per_team_deviation(z, gammas, iid_probe_spec)


def test_expected_deviation_single_agent():
    spec = tf.load_spec(json.dumps(minimal_team(population=1)))
    gammas = (tf.build_prescription_set(spec, 0).items[0],)
    z = MeanField(per_team=(np.array([1.0, 0.0]),))
    # one agent lands in one of two states; either is at distance 1/2
    assert expected_deviation(z, gammas, spec) == pytest.approx(0.5, abs=1e-15)


def test_expected_deviation_monte_carlo_agrees():
    spec = tf.load_spec(json.dumps(minimal_team(population=4)))
    gammas = (tf.build_prescription_set(spec, 0).items[0],)
    z = MeanField(per_team=(np.array([0.5, 0.5]),))
    exact = expected_deviation(z, gammas, spec)
    assert exact == pytest.approx(0.1875, abs=1e-15)
    mc, se = expected_deviation(z, gammas, spec, support_cap=1, samples=4000,
                                master_seed=5, with_stderr=True)
    assert se > 0.0
    assert abs(mc - exact) <= 4 * se
    mc2 = expected_deviation(z, gammas, spec, support_cap=1, samples=4000,
                             master_seed=5)
    assert mc2 == mc


def test_fit_rate_on_coin_flips(iid_probe_spec):
    z, gammas = _iid_probe_inputs(iid_probe_spec)
    fit = fit_rate(iid_probe_spec, z, gammas, [2, 4, 8, 16, 32, 64])
    assert not fit.degenerate
    assert -0.65 <= fit.slope <= -0.35
    assert fit.r_squared > 0.99
    # envelope dominates every probed deviation
    for n, d in zip(fit.n_values, fit.deviations):
        assert fit.kappa_hat[0] >= np.sqrt(n) * d - 1e-15
    rows = fit.csv_rows()
    assert rows[0] == (2, repr(fit.deviations[0]), repr(0.0))
    d = fit.as_dict()
    assert d["kappa_kind"] == "empirical-envelope"
    assert d["degenerate"] is False


def test_fit_rate_degenerate_on_deterministic_dynamics():
    from conftest import identity_dynamics_spec
    spec = tf.load_spec(json.dumps(identity_dynamics_spec()))
    gammas = (tf.build_prescription_set(spec, 0).items[0],)
    z = MeanField(per_team=(np.array([0.5, 0.5]),))
    fit = fit_rate(spec, z, gammas, [2, 4, 6, 8])
    assert fit.degenerate
    assert np.all(fit.kappa_hat == 0.0)
    assert fit.as_dict()["slope"] is None


def test_fit_rate_needs_four_populations(iid_probe_spec):
    z, gammas = _iid_probe_inputs(iid_probe_spec)
    with pytest.raises(SpecValidationError):
        fit_rate(iid_probe_spec, z, gammas, [2, 4, 4, 8])


def test_kappa_scales_with_metric():
    """Doubling the state metric doubles every transport distance and so
    doubles the fitted envelope."""
    doc = minimal_team(population=2)
    doc2 = json.loads(json.dumps(doc))
    doc2["teams"][0]["metric"] = [[0.0, 2.0], [2.0, 0.0]]
    spec1 = tf.load_spec(json.dumps(doc))
    spec2 = tf.load_spec(json.dumps(doc2))
    z = MeanField(per_team=(np.array([0.5, 0.5]),))
    ns = [2, 4, 8, 16]
    g1 = (tf.build_prescription_set(spec1, 0).items[0],)
    g2 = (tf.build_prescription_set(spec2, 0).items[0],)
    k1 = kappa_envelope(spec1, z, [g1], ns)
    k2 = kappa_envelope(spec2, z, [g2], ns)
    assert np.allclose(k2, 2.0 * k1)
    assert k1[0] > 0


def test_lipschitz_constant_table(reference_spec):
    grid = SimplexGrid(reference_spec, [2, 2])
    table = LimitValueTable(values=np.full((2, 2) + grid.shape, 3.5), grid=grid)
    out = estimate_lipschitz(table, reference_spec)
    assert out.shape == (2, 2)
    assert np.all(out == 0.0)


def test_lipschitz_recovers_unit_slope(reference_spec):
    grid = SimplexGrid(reference_spec, [2, 2])
    vals = np.zeros((2, 2) + grid.shape)
    p0 = grid.points[0][:, 0]
    vals[:, :, :, :] = p0[None, None, :, None]
    table = LimitValueTable(values=vals, grid=grid)
    out = estimate_lipschitz(table, reference_spec)
    assert np.allclose(out, 1.0, atol=1e-12)
    # shifting a value table never changes its difference quotients
    shifted = LimitValueTable(values=vals + 17.0, grid=grid)
    assert np.allclose(estimate_lipschitz(shifted, reference_spec), out)


def test_lipschitz_respects_pair_cap(reference_spec):
    grid = SimplexGrid(reference_spec, [4, 4])
    rng = np.random.default_rng(0)
    vals = rng.random((2, 2) + grid.shape)
    table = LimitValueTable(values=vals, grid=grid)
    full = estimate_lipschitz(table, reference_spec)
    sub = estimate_lipschitz(table, reference_spec, pair_cap=40, master_seed=1)
    assert np.all(sub <= full + 1e-12)
    assert np.array_equal(sub, estimate_lipschitz(table, reference_spec,
                                                  pair_cap=40, master_seed=1))


def test_lipschitz_needs_two_points(reference_spec):
    table = types.SimpleNamespace(values=np.zeros((1, 1, 1)),
                                  per_team_points=lambda: [np.array([[1.0]])])
    with pytest.raises(SpecValidationError):
        estimate_lipschitz(table, reference_spec)


def test_theorem4_bound_literals():
    assert theorem4_bound([1.0], [[1.0]], [4]) == pytest.approx(1.0, abs=1e-15)
    # additive over stages and teams
    assert theorem4_bound([1.0, 1.0], [[1.0, 1.0], [1.0, 1.0]], [4, 4]) \
        == pytest.approx(4.0)
    base = theorem4_bound([0.3], [[0.7, 0.2]], [9])
    assert theorem4_bound([0.6], [[0.7, 0.2]], [9]) == pytest.approx(2 * base)
    assert theorem4_bound([0.3], [[1.4, 0.4]], [9]) == pytest.approx(2 * base)
    assert theorem4_bound([0.3], [[0.7, 0.2]], [36]) == pytest.approx(base / 2)
    with pytest.raises(SpecValidationError):
        theorem4_bound([-1.0], [[1.0]], [4])


def test_lemma1_check_reference(reference_spec, reference_sets):
    lattice_points = [
        MeanField(per_team=(np.array(a, dtype=float) / 2,
                            np.array(b, dtype=float) / 2))
        for a in enumerate_counts(2, 2) for b in enumerate_counts(2, 2)
    ]
    pairs = [(z, (reference_sets[0].items[i % 4], reference_sets[1].items[i % 4]))
             for i, z in enumerate(lattice_points)]
    rep = lemma1_check(reference_spec, pairs)
    assert rep.max_cost_gap <= 1e-12
    assert rep.max_margin <= 1e-12
    assert len(rep.rows) == len(pairs)
    assert any(dev > 0 for _, dev, _ in rep.rows)
    d = rep.as_dict()
    assert set(d) == {"max_cost_gap", "max_margin", "kappa_hat", "rows"}
    assert set(d["rows"][0]) == {"cost_gap", "deviation", "margin"}
