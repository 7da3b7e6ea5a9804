import json
from pathlib import Path

import numpy as np
import pytest

import teamfield as tf

DATA = Path(tf.__file__).parent / "data"


@pytest.fixture(scope="session")
def reference_spec():
    return tf.load_spec_file(DATA / "two_team_reference.json")


@pytest.fixture(scope="session")
def single_team_spec():
    return tf.load_spec_file(DATA / "single_team_small.json")


@pytest.fixture(scope="session")
def iid_probe_spec():
    return tf.load_spec_file(DATA / "iid_probe.json")


@pytest.fixture(scope="session")
def reference_sets(reference_spec):
    return tuple(tf.build_prescription_set(reference_spec, k)
                 for k in range(reference_spec.n_teams))


@pytest.fixture(scope="session")
def reference_solution(reference_spec, reference_sets):
    return tf.solve_mpe(reference_spec, reference_sets)


def minimal_team(population=1, horizon=1, p_rows=((0.5, 0.5), (0.5, 0.5)),
                 cost=0.0, initial=(1.0, 0.0)):
    """Single-team two-state one-action document for targeted edits."""
    return {
        "horizon": horizon,
        "teams": [{
            "states": ["s0", "s1"],
            "actions": ["a0"],
            "population": population,
            "initial_law": list(initial),
            "transition": {"base": [[list(p_rows[0])], [list(p_rows[1])]]},
            "cost": {"base": [[cost], [cost]]},
        }],
    }


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


def deterministic_two_team(horizon=2):
    """Two one-agent teams with action-deterministic moves; team 0 wants
    to co-locate with team 1 at the last stage, team 1 wants the
    opposite. No pure stage equilibrium at the first stage."""
    def team(initial, base, coupling):
        return {
            "states": ["s0", "s1"], "actions": ["go0", "go1"],
            "population": 1, "initial_law": initial,
            "transition": {"base": [[[1.0, 0.0], [0.0, 1.0]],
                                     [[1.0, 0.0], [0.0, 1.0]]]},
            "cost": {"base": base, "coupling": coupling},
        }
    zero = [[0.0, 0.0], [0.0, 0.0]]
    one = [[1.0, 1.0], [1.0, 1.0]]
    t_last = horizon - 1
    c0 = [{"t": t_last, "s": s, "a": a, "team": 1, "sigma": s, "value": -1.0}
          for s in (0, 1) for a in (0, 1)]
    c1 = [{"t": t_last, "s": s, "a": a, "team": 0, "sigma": s, "value": 1.0}
          for s in (0, 1) for a in (0, 1)]
    base0 = [zero] * (horizon - 1) + [one]
    return {"horizon": horizon, "seed": 3,
            "teams": [team([1.0, 0.0], base0, c0),
                      team([0.0, 1.0], [zero] * horizon, c1)]}


def identity_dynamics_spec(population=3, horizon=2, cost=1.0):
    """Agents never move and pay a constant cost; closed-form everything."""
    return {
        "horizon": horizon,
        "teams": [{
            "states": ["s0", "s1"], "actions": ["a0"],
            "population": population,
            "initial_law": [0.5, 0.5],
            "transition": {"base": [[[1.0, 0.0]], [[0.0, 1.0]]]},
            "cost": {"base": [[cost], [cost]]},
        }],
    }


def assert_simplex(v, tol=1e-9):
    v = np.asarray(v, dtype=float)
    assert np.all(v >= -tol)
    assert abs(v.sum() - 1.0) <= tol
