import itertools
import json

import numpy as np
import pytest

import teamfield as tf
from teamfield.counts import stage_cost
from teamfield.finite_mpe import (JointLattice, initial_distribution,
                                  policy_records, policy_value)
from teamfield.stage_game import KernelCache

from conftest import deterministic_two_team, identity_dynamics_spec


def test_solve_and_verify_reference(reference_spec, reference_sets,
                                    reference_solution):
    policy, values = reference_solution
    cert = tf.verify_mpe(reference_spec, policy, reference_sets)
    assert cert.max_gain <= 1e-9
    assert cert.gains.shape == (2, 2) + policy.lattice.shape
    assert np.all(cert.gains >= -1e-12)


def test_values_match_policy_value(reference_spec, reference_sets,
                                   reference_solution):
    """The values produced during backward induction must equal an
    independent forward evaluation of the same policy."""
    policy, values = reference_solution
    V = policy_value(reference_spec, policy)
    assert np.allclose(V, values.values, atol=1e-10)


def test_total_cost_folds_initial_distribution(reference_spec,
                                               reference_solution):
    policy, values = reference_solution
    totals = tf.evaluate_total_cost(reference_spec, policy)
    init = initial_distribution(reference_spec, policy.lattice)
    for k in range(2):
        fold = float(np.sum(init * values.values[0, k]))
        assert totals[k] == pytest.approx(fold, abs=1e-10)


def test_initial_distribution_literal(reference_spec):
    lattice = JointLattice(reference_spec)
    init = initial_distribution(reference_spec, lattice)
    assert init.sum() == pytest.approx(1.0, abs=1e-12)
    # team 0 initial law (0.8, 0.2) at N=2: P(2,0)=0.64, P(1,1)=0.32,
    # P(0,2)=0.04; team 1 law (0.3, 0.7): P(2,0)=0.09, P(1,1)=0.42, P(0,2)=0.49
    i20 = lattice.teams[0].index[(2, 0)]
    j02 = lattice.teams[1].index[(0, 2)]
    assert init[i20, j02] == pytest.approx(0.64 * 0.49, abs=1e-12)


def test_best_response_never_beats_equilibrium(reference_spec, reference_sets,
                                               reference_solution):
    policy, values = reference_solution
    for k in range(2):
        _, U = tf.best_response(reference_spec, k, policy, reference_sets)
        # equilibrium value of team k is exactly its best-response value
        assert np.allclose(U, values.values[:, k], atol=1e-9)


def test_single_team_dp_matches_brute_force(single_team_spec):
    """Exhaustive enumeration of every count-feedback plan, evaluated by
    exact forward propagation, as an independent optimality oracle."""
    spec = single_team_spec
    sets = (tf.build_prescription_set(spec, 0),)
    policy, values = tf.solve_mpe(spec, sets)
    init = initial_distribution(spec, policy.lattice)
    dp_val = float(np.sum(init * values.values[0, 0]))

    lattice = policy.lattice
    cache = KernelCache(spec, sets)
    npts = lattice.shape[0]
    pts = [lattice.mean_field((i,)) for i in range(npts)]
    kmat = [cache.matrix(0, z) for z in pts]
    sc = np.array([[[stage_cost(z, g, spec, 0, t) for g in sets[0].items]
                    for z in pts] for t in range(2)])
    best = np.inf
    for assign in itertools.product(range(len(sets[0].items)),
                                    repeat=2 * npts):
        a0, a1 = assign[:npts], assign[npts:]
        total = sum(init[i] * sc[0, i, a0[i]] for i in range(npts))
        nxt = sum(init[i] * kmat[i][a0[i]] for i in range(npts))
        total += sum(nxt[i] * sc[1, i, a1[i]] for i in range(npts))
        best = min(best, float(total))
    assert abs(best - dp_val) <= 1e-10
    # the optimum must also be what the solved policy actually achieves
    assert tf.evaluate_total_cost(spec, policy)[0] == pytest.approx(best,
                                                                    abs=1e-10)


def test_single_team_policy_decongests(single_team_spec):
    # with everyone on one site it pays to move at the first stage and
    # never at the last
    sets = (tf.build_prescription_set(single_team_spec, 0),)
    policy, _ = tf.solve_mpe(single_team_spec, sets)
    lattice = policy.lattice
    i20 = lattice.teams[0].index[(2, 0)]
    i11 = lattice.teams[0].index[(1, 1)]
    eq0 = policy.equilibrium(0, (i20,))
    rows = eq0.mean_rows(policy.sets)[0]
    assert rows[0, 1] == 1.0       # crowded state moves
    assert policy.equilibrium(0, (i11,)).per_team[0] == 0
    for i in range(lattice.shape[0]):
        eq1 = policy.equilibrium(1, (i,))
        assert eq1.mean_rows(policy.sets)[0][:, 1].max() == 0.0


def test_mixed_equilibrium_policy_certifies(tmp_path):
    doc = deterministic_two_team()
    spec = tf.load_spec(json.dumps(doc))
    sets = tuple(tf.build_prescription_set(spec, k) for k in range(2))
    policy, values = tf.solve_mpe(spec, sets)
    assert policy.mixed_points
    cert = tf.verify_mpe(spec, policy, sets)
    assert cert.max_gain <= 1e-9
    # the matching-pennies continuation pins the initial values at 0.5
    init = initial_distribution(spec, policy.lattice)
    for k in range(2):
        v = float(np.sum(init * values.values[0, k]))
        assert v == pytest.approx(0.5, abs=1e-9)


def test_identity_dynamics_costs_add_up():
    spec = tf.load_spec(json.dumps(identity_dynamics_spec(population=3,
                                                          horizon=4,
                                                          cost=1.0)))
    sets = (tf.build_prescription_set(spec, 0),)
    policy, _ = tf.solve_mpe(spec, sets)
    totals = tf.evaluate_total_cost(spec, policy)
    assert totals[0] == pytest.approx(4.0, abs=1e-12)


def test_policy_records_roundtrip(reference_spec, reference_solution):
    policy, values = reference_solution
    records = policy_records(policy, values)
    assert len(records) == 2 * 9 * 2      # stages x lattice points x teams
    sample = records[0]
    assert set(sample) >= {"stage", "z", "team", "kind", "prescription",
                           "value"}
    json.dumps(records)                   # must be serializable as-is


def test_pure_only_raises_where_no_pure_exists():
    doc = deterministic_two_team()
    spec = tf.load_spec(json.dumps(doc))
    sets = tuple(tf.build_prescription_set(spec, k) for k in range(2))
    with pytest.raises(tf.NoPureEquilibriumError) as exc:
        tf.solve_mpe(spec, sets, pure_only=True)
    assert exc.value.stage == 0
