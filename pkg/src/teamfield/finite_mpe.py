"""Backward induction on the exact joint count lattice.

The joint counts (one occupancy vector per team) are a sufficient state
for the team coordinators: conditional on them, stage costs are exact
closed forms and the next counts follow the product of per-team
multinomial-composition kernels. ``solve_mpe`` therefore runs classic
backward induction, solving one finite stage game per (stage, lattice
point) and recording equilibrium prescriptions and per-team values at
every point, reachable or not (subgame perfection is a statement about
all of them).

``best_response`` solves the single-team decision problem against a
frozen policy, which makes ``verify_mpe`` an independent certificate:
deviation gain = value under the policy minus the best-response value,
pointwise over (stage, lattice point, team).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError
from .counts import (DEFAULT_SUPPORT_CAP, MeanField, TeamLattice,
                     _multinomial_pmf, format_counts, stage_cost)
from .model import GameSpec
from .stage_game import (ContinuationTable, KernelCache, StageEquilibrium,
                         build_stage_game, equilibrium_values, solve_stage)


class JointLattice:
    """Cartesian product of the per-team count lattices."""

    def __init__(self, spec: GameSpec, cap: int = DEFAULT_SUPPORT_CAP):
        self.spec = spec
        self.teams = [TeamLattice(tm.population, tm.n_states, cap=cap)
                      for tm in spec.teams]
        self.shape = tuple(len(t) for t in self.teams)
        if math.prod(self.shape) > cap:
            raise CapacityError("joint count lattice has %d points, cap is %d"
                                % (math.prod(self.shape), cap))

    def __len__(self):
        return math.prod(self.shape)

    def indices(self):
        return np.ndindex(self.shape)

    def mean_field(self, idx) -> MeanField:
        return MeanField(per_team=tuple(self.teams[k].z[idx[k]]
                                        for k in range(len(self.teams))))

    def counts_at(self, idx):
        return tuple(self.teams[k].points[idx[k]] for k in range(len(self.teams)))

    def z_id(self, idx) -> str:
        return "/".join(format_counts(c) for c in self.counts_at(idx))


@dataclass
class PolicyTable:
    """Equilibrium prescriptions at every (stage, lattice point)."""
    stages: list                 # per stage: object array of StageEquilibrium
    sets: tuple
    lattice: JointLattice
    mixed_points: list           # (stage, joint index) where the profile is mixed

    def equilibrium(self, t: int, idx) -> StageEquilibrium:
        return self.stages[t][tuple(idx)]

    @property
    def horizon(self):
        return len(self.stages)


@dataclass
class ValueTable:
    """values[t, k, i_1, ..., i_K] over the joint lattice."""
    values: np.ndarray = field(repr=False)
    lattice: JointLattice = None

    def per_team_points(self):
        return [tl.z for tl in self.lattice.teams]


@dataclass
class EquilibriumCertificate:
    """Pointwise unilateral deviation gains and their summary."""
    gains: np.ndarray = field(repr=False)    # (T, K, *lattice shape)
    max_gain: float = 0.0
    mean_gain: float = 0.0
    mixed_points: list = None

    def csv_rows(self, lattice: JointLattice):
        rows = []
        T, K = self.gains.shape[0], self.gains.shape[1]
        for t in range(T):
            for idx in lattice.indices():
                zid = lattice.z_id(idx)
                for k in range(K):
                    rows.append((t, zid, k, repr(float(self.gains[(t, k) + idx]))))
        return rows


def solve_mpe(spec: GameSpec, sets, pure_only: bool = False,
              cap: int = DEFAULT_SUPPORT_CAP, support_bound: int = 4,
              kernel_cache: KernelCache = None):
    """Backward induction over stages T-1 .. 0 and the full joint lattice.

    Returns (PolicyTable, ValueTable). Raises NoPureEquilibriumError in
    pure_only mode at the first (stage, point) whose game has no pure
    equilibrium.
    """
    lattice = JointLattice(spec, cap=cap)
    cache = kernel_cache or KernelCache(spec, sets, cap=cap)
    T, K = spec.horizon, spec.n_teams
    values = np.zeros((T + 1, K) + lattice.shape)
    stages = [np.empty(lattice.shape, dtype=object) for _ in range(T)]
    mixed_points = []
    for t in range(T - 1, -1, -1):
        cont = None if t == T - 1 else ContinuationTable(
            lattices=tuple(cache.lattices), values=values[t + 1])
        for idx in lattice.indices():
            z = lattice.mean_field(idx)
            game = build_stage_game(z, t, cont, sets, spec,
                                    kernel_cache=cache, cap=cap)
            eq = solve_stage(game, t, lattice.z_id(idx),
                             pure_only=pure_only, support_bound=support_bound)
            stages[t][idx] = eq
            values[(t, slice(None)) + idx] = equilibrium_values(game, eq)
            if eq.kind == "mixed":
                mixed_points.append((t, idx))
    policy = PolicyTable(stages=stages, sets=tuple(sets), lattice=lattice,
                         mixed_points=mixed_points)
    return policy, ValueTable(values=values[:T], lattice=lattice)


def _averaged_kernels(cache: KernelCache, z: MeanField, weights) -> list:
    """Per-team kernel vectors with each team's mixture averaged in."""
    out = []
    for j, w in enumerate(weights):
        out.append(w @ cache.matrix(j, z))
    return out


def _stage_cost_vector(spec, z, ps, k, t) -> np.ndarray:
    return np.array([stage_cost(z, p, spec, k, t) for p in ps.items])


def best_response(spec: GameSpec, k: int, others: PolicyTable, sets,
                  cap: int = DEFAULT_SUPPORT_CAP, kernel_cache: KernelCache = None):
    """Optimal reply of team k when teams j != k play ``others``.

    A plain finite-horizon dynamic program (no game solving): at every
    (stage, lattice point) team k picks the menu item minimizing its own
    stage cost plus expected continuation, the other teams' kernels being
    averaged under their (possibly mixed) equilibrium profiles.

    Returns (per-stage arrays of chosen own indices, value array U of
    shape (T, *lattice shape)); ties resolve to the smallest index.
    """
    lattice = others.lattice
    cache = kernel_cache or KernelCache(spec, sets, cap=cap)
    T, K = spec.horizon, spec.n_teams
    shape = lattice.shape
    U = np.zeros((T + 1,) + shape)
    picks = [np.zeros(shape, dtype=int) for _ in range(T)]
    game_shape = tuple(len(ps) for ps in sets)
    for t in range(T - 1, -1, -1):
        for idx in lattice.indices():
            z = lattice.mean_field(idx)
            sc = _stage_cost_vector(spec, z, sets[k], k, t)
            if t == T - 1:
                e = sc
            else:
                eq = others.equilibrium(t, idx)
                w = eq.weights(game_shape)
                X = U[t + 1]
                for j in range(K - 1, -1, -1):
                    if j == k:
                        continue
                    wbar = w[j] @ cache.matrix(j, z)
                    X = np.tensordot(X, wbar, axes=(j, 0))
                e = sc + cache.matrix(k, z) @ X
            picks[t][idx] = int(np.argmin(e))
            U[(t,) + idx] = e.min()
    return picks, U[:T]


def policy_value(spec: GameSpec, policy: PolicyTable,
                 cap: int = DEFAULT_SUPPORT_CAP,
                 kernel_cache: KernelCache = None) -> np.ndarray:
    """Per-team values of playing ``policy`` everywhere: (T, K, *shape)."""
    lattice = policy.lattice
    cache = kernel_cache or KernelCache(spec, policy.sets, cap=cap)
    T, K = spec.horizon, spec.n_teams
    game_shape = tuple(len(ps) for ps in policy.sets)
    V = np.zeros((T + 1, K) + lattice.shape)
    for t in range(T - 1, -1, -1):
        for idx in lattice.indices():
            z = lattice.mean_field(idx)
            eq = policy.equilibrium(t, idx)
            w = eq.weights(game_shape)
            kers = None if t == T - 1 else _averaged_kernels(cache, z, w)
            for k in range(K):
                sc = float(w[k] @ _stage_cost_vector(spec, z, policy.sets[k], k, t))
                if t == T - 1:
                    V[(t, k) + idx] = sc
                    continue
                X = V[t + 1, k]
                for j in range(K - 1, -1, -1):
                    X = np.tensordot(X, kers[j], axes=(j, 0))
                V[(t, k) + idx] = sc + float(X)
    return V[:T]


def verify_mpe(spec: GameSpec, policy: PolicyTable, sets,
               cap: int = DEFAULT_SUPPORT_CAP) -> EquilibriumCertificate:
    """Independent equilibrium certificate.

    gains[t, k, z] = (value of playing the policy) - (best-response value),
    both recomputed from scratch. Gains are nonnegative up to a -1e-9
    numerical floor; for an exact equilibrium the max is ~0.
    """
    cache = KernelCache(spec, sets, cap=cap)
    V = policy_value(spec, policy, cap=cap, kernel_cache=cache)
    T, K = spec.horizon, spec.n_teams
    gains = np.empty_like(V)
    for k in range(K):
        _, U = best_response(spec, k, policy, sets, cap=cap, kernel_cache=cache)
        gains[:, k] = V[:, k] - U
    return EquilibriumCertificate(
        gains=gains, max_gain=float(gains.max()), mean_gain=float(gains.mean()),
        mixed_points=list(policy.mixed_points))


def initial_distribution(spec: GameSpec, lattice: JointLattice) -> np.ndarray:
    """Law of the stage-0 joint counts: independent multinomials from each
    team's initial law, as an array over the joint lattice."""
    dist = np.ones(())
    for k, tl in enumerate(lattice.teams):
        pmf = _multinomial_pmf(tl.population, spec.teams[k].initial_law, tl.counts)
        dist = np.multiply.outer(dist, pmf)
    return dist


def evaluate_total_cost(spec: GameSpec, policy: PolicyTable,
                        cap: int = DEFAULT_SUPPORT_CAP) -> np.ndarray:
    """Exact expected cumulative cost per team under ``policy`` from the
    initial count law, by forward propagation of the full distribution
    over the lattice (never sampled)."""
    lattice = policy.lattice
    cache = KernelCache(spec, policy.sets, cap=cap)
    T, K = spec.horizon, spec.n_teams
    game_shape = tuple(len(ps) for ps in policy.sets)
    dist = initial_distribution(spec, lattice)
    totals = np.zeros(K)
    for t in range(T):
        new = np.zeros(lattice.shape)
        for idx in lattice.indices():
            p = dist[idx]
            if p <= 0.0:
                continue
            z = lattice.mean_field(idx)
            eq = policy.equilibrium(t, idx)
            w = eq.weights(game_shape)
            for k in range(K):
                totals[k] += p * float(w[k] @ _stage_cost_vector(spec, z, policy.sets[k], k, t))
            if t < T - 1:
                step = np.ones(())
                for ker in _averaged_kernels(cache, z, w):
                    step = np.multiply.outer(step, ker)
                new += p * step
        if t < T - 1:
            if abs(new.sum() - 1.0) > 1e-10:
                raise AssertionError("forward propagation lost mass: %.17g" % new.sum())
            dist = new
    return totals


# ---------------------------------------------------------------------------
# serialization

def policy_records(policy: PolicyTable, values: ValueTable):
    """JSON-ready records {stage, z, team, kind, prescription, value}."""
    records = []
    lattice = policy.lattice
    T = policy.horizon
    for t in range(T):
        for idx in lattice.indices():
            eq = policy.equilibrium(t, idx)
            rows = eq.mean_rows(policy.sets)
            for k in range(len(policy.sets)):
                rec = {
                    "stage": t,
                    "z": [list(c) for c in lattice.counts_at(idx)],
                    "team": k,
                    "kind": eq.kind,
                    "prescription": [list(map(float, r)) for r in rows[k]],
                    "value": float(values.values[(t, k) + idx]),
                }
                if eq.kind == "mixed":
                    rec["weights"] = [float(x) for x in eq.per_team[k]]
                records.append(rec)
    return records
