"""Infinite-population limit: deterministic flow and grid dynamic program.

As populations grow, the random next mean field concentrates on its
expectation, so the coordinator game collapses to a deterministic one:
the mean field advances by the push-forward ``flow`` and stage costs are
the same closed forms evaluated on it. The backward induction then runs
on a uniform 1/n discretization of each team's simplex, projecting every
flow image to its nearest grid point (projection errors are logged, they
are the honest discretization cost of the scheme).

With resolution n = 2N per team, every count mean field of a population-N
instance lies exactly on the grid, which is what ``project_policy_to_lattice``
exploits when replaying a limit policy inside the finite game.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, SpecValidationError
from .counts import DEFAULT_SUPPORT_CAP, MeanField, enumerate_counts, lattice_size
from .model import GameSpec, cost_matrix, flatten_mean_field, transition_matrix
from .stage_game import StageEquilibrium, StageGame, solve_stage


class SimplexGrid:
    """Per-team uniform grids over the probability simplex.

    Team k's points are all vectors with entries that are multiples of
    1/n_k, deduplicated and sorted ascending-lexicographically; the joint
    grid is their Cartesian product.
    """

    def __init__(self, spec: GameSpec, resolutions, cap: int = DEFAULT_SUPPORT_CAP):
        if len(resolutions) != spec.n_teams:
            raise SpecValidationError("need one grid resolution per team")
        self.spec = spec
        self.resolutions = tuple(int(n) for n in resolutions)
        self.points = []
        for k, n in enumerate(self.resolutions):
            if n < 1:
                raise SpecValidationError("grid resolution must be >= 1, team %d got %d"
                                          % (k, n))
            S = spec.teams[k].n_states
            if lattice_size(n, S) > cap:
                raise CapacityError("simplex grid for team %d has %d points, cap %d"
                                    % (k, lattice_size(n, S), cap))
            pts = sorted(enumerate_counts(n, S, cap=cap))
            self.points.append(np.array(pts, dtype=float) / n)
        self.shape = tuple(len(p) for p in self.points)
        if math.prod(self.shape) > cap:
            raise CapacityError("joint simplex grid has %d points, cap %d"
                                % (math.prod(self.shape), cap))

    def __len__(self):
        return math.prod(self.shape)

    def indices(self):
        return np.ndindex(self.shape)

    def mean_field(self, idx) -> MeanField:
        return MeanField(per_team=tuple(self.points[k][idx[k]]
                                        for k in range(len(self.points))))

    def point_id(self, idx) -> str:
        parts = []
        for k, n in enumerate(self.resolutions):
            v = np.rint(self.points[k][idx[k]] * n).astype(int)
            parts.append("/".join("%d:%d" % (x, n) for x in v))
        return "|".join(parts)


def default_grid(spec: GameSpec, factor: int = 2,
                 cap: int = DEFAULT_SUPPORT_CAP) -> SimplexGrid:
    """Resolution 2N per team, so count mean fields embed exactly."""
    return SimplexGrid(spec, [factor * tm.population for tm in spec.teams], cap=cap)


def flow(z, prescriptions, spec: GameSpec) -> MeanField:
    """Deterministic mean-field update: team k's next occupancy is
    z'(s') = sum_s z(s) sum_a gamma(a|s) P(s'|s,a,z). Equals the exact
    mean of the finite-population count kernel."""
    per_team = getattr(z, "per_team", z)
    zf = flatten_mean_field(spec, z)
    out = []
    for k in range(spec.n_teams):
        rows = prescriptions[k].rows if hasattr(prescriptions[k], "rows") \
            else np.asarray(prescriptions[k], dtype=float)
        P = transition_matrix(spec, k, zf)
        zk = np.asarray(per_team[k], dtype=float)
        nxt = np.einsum("s,sa,sat->t", zk, rows, P)
        out.append(nxt / nxt.sum())
    return MeanField(per_team=tuple(out))


def limit_stage_cost(z, gamma, spec: GameSpec, k: int, t: int) -> float:
    """Per-agent stage cost along the deterministic flow; written out
    independently of counts.stage_cost so the two can be cross-checked."""
    per_team = getattr(z, "per_team", z)
    zf = flatten_mean_field(spec, z)
    rows = gamma.rows if hasattr(gamma, "rows") else np.asarray(gamma, dtype=float)
    zk = np.asarray(per_team[k], dtype=float)
    total = 0.0
    C = cost_matrix(spec, k, t, zf)
    for s in range(spec.teams[k].n_states):
        total += zk[s] * float(rows[s] @ C[s])
    return total


def _team_w2(p, q, metric) -> float:
    """Transport distance used for grid projection; |S| <= 2 and the
    discrete metric have closed forms, anything else defers to the exact
    solver in approx metrics."""
    n = len(p)
    if n == 1:
        return 0.0
    if n == 2:
        return float(metric[0, 1] * abs(p[0] - q[0]))
    off = metric[~np.eye(n, dtype=bool)]
    if np.all(off == off[0]):
        return float(off[0]) * 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
    from .metrics import wasserstein
    return wasserstein(p, q, metric)


def _project_team(zk, k, grid: SimplexGrid):
    """Index of the nearest grid point of team k plus its distance; ties
    go to the ascending-lex first point."""
    pts = grid.points[k]
    metric = grid.spec.teams[k].state_metric
    S = pts.shape[1]
    if S == 2:
        d = metric[0, 1] * np.abs(pts[:, 0] - zk[0])
    else:
        off = metric[~np.eye(S, dtype=bool)]
        if np.all(off == off[0]):
            d = off[0] * 0.5 * np.abs(pts - np.asarray(zk)[None, :]).sum(axis=1)
        else:
            d = np.array([_team_w2(zk, q, metric) for q in pts])
    i = int(np.argmin(d))
    return i, float(d[i])


def project_to_grid(z, grid: SimplexGrid):
    """Nearest joint grid point under the summed per-team transport
    metric (the per-team problems separate); returns (point, error)."""
    idx, err = project_indices(z, grid)
    return grid.mean_field(idx), err


def project_indices(z, grid: SimplexGrid):
    per_team = getattr(z, "per_team", z)
    idx, err = [], 0.0
    for k in range(len(grid.points)):
        i, d = _project_team(np.asarray(per_team[k], dtype=float), k, grid)
        idx.append(i)
        err += d
    return tuple(idx), err


@dataclass
class LimitPolicyTable:
    """Equilibrium prescriptions at every (stage, joint grid point)."""
    stages: list
    sets: tuple
    grid: SimplexGrid
    mixed_points: list

    def equilibrium(self, t: int, idx) -> StageEquilibrium:
        return self.stages[t][tuple(idx)]

    @property
    def horizon(self):
        return len(self.stages)


@dataclass
class LimitValueTable:
    values: np.ndarray = field(repr=False)    # (T, K, *grid shape)
    grid: SimplexGrid = None

    def per_team_points(self):
        return list(self.grid.points)


@dataclass
class ProjectionLog:
    """Per-stage accounting of flow-image projection errors."""
    evaluations: list
    max_error: list
    mean_error: list

    def as_dict(self):
        return {"evaluations": self.evaluations,
                "max_error": self.max_error,
                "mean_error": self.mean_error}


def solve_mpe_inf(spec: GameSpec, sets, grid: SimplexGrid = None,
                  pure_only: bool = False, support_bound: int = 4,
                  cap: int = DEFAULT_SUPPORT_CAP):
    """Backward induction on the joint simplex grid.

    The one-step kernel is the Dirac mass at the flow image, so each
    stage-game tensor entry is the own stage cost plus the next value at
    the projected flow image. Because each team's flow component depends
    only on its own prescription, projections are computed per (team,
    menu item) and shared across joint profiles.

    Returns (LimitPolicyTable, LimitValueTable, ProjectionLog).
    """
    if grid is None:
        grid = default_grid(spec)
    T, K = spec.horizon, spec.n_teams
    shape = tuple(len(ps) for ps in sets)
    values = np.zeros((T + 1, K) + grid.shape)
    stages = [np.empty(grid.shape, dtype=object) for _ in range(T)]
    mixed_points = []
    log = ProjectionLog(evaluations=[0] * T, max_error=[0.0] * T, mean_error=[0.0] * T)
    for t in range(T - 1, -1, -1):
        err_sum, err_max, err_n = 0.0, 0.0, 0
        for idx in grid.indices():
            z = grid.mean_field(idx)
            own_cost = [np.array([limit_stage_cost(z, p, spec, k, t)
                                  for p in sets[k].items]) for k in range(K)]
            if t == T - 1:
                tensors = []
                for k in range(K):
                    bshape = [1] * K
                    bshape[k] = shape[k]
                    tensors.append(np.broadcast_to(own_cost[k].reshape(bshape),
                                                   shape).copy())
            else:
                zf = flatten_mean_field(spec, z)
                proj = []      # per team: arrays of next grid index / error per item
                for k in range(K):
                    P = transition_matrix(spec, k, zf)
                    zk = z.per_team[k]
                    pidx = np.empty(shape[k], dtype=int)
                    perr = np.empty(shape[k])
                    for i, p in enumerate(sets[k].items):
                        nxt = np.einsum("s,sa,sat->t", zk, p.rows, P)
                        pidx[i], perr[i] = _project_team(nxt / nxt.sum(), k, grid)
                    proj.append((pidx, perr))
                    err_sum += perr.sum()
                    err_max = max(err_max, float(perr.max()))
                    err_n += shape[k]
                gather = np.ix_(*(proj[k][0] for k in range(K)))
                tensors = []
                for k in range(K):
                    bshape = [1] * K
                    bshape[k] = shape[k]
                    tensors.append(own_cost[k].reshape(bshape)
                                   + values[t + 1, k][gather])
            game = StageGame(tensors=tuple(tensors), sets=tuple(sets))
            eq = solve_stage(game, t, grid.point_id(idx),
                             pure_only=pure_only, support_bound=support_bound)
            stages[t][idx] = eq
            w = eq.weights(shape)
            for k in range(K):
                e = game.tensors[k]
                for j in range(K - 1, -1, -1):
                    e = np.tensordot(e, w[j], axes=(j, 0))
                values[(t, k) + idx] = float(e)
            if eq.kind == "mixed":
                mixed_points.append((t, idx))
        log.evaluations[t] = err_n
        log.max_error[t] = err_max
        log.mean_error[t] = err_sum / err_n if err_n else 0.0
    policy = LimitPolicyTable(stages=stages, sets=tuple(sets), grid=grid,
                              mixed_points=mixed_points)
    return policy, LimitValueTable(values=values[:T], grid=grid), log


@dataclass
class LimitTrajectory:
    mean_fields: list            # length T+1
    prescription_rows: list      # per stage: per team averaged rows
    stage_costs: np.ndarray      # (T, K)
    cumulative: np.ndarray       # (T, K) running totals
    totals: np.ndarray           # (K,)
    projection_errors: list      # per stage

    def csv_rows(self):
        """(stage, team, state, mass, cost_so_far) along the flow."""
        rows = []
        K = self.totals.shape[0]
        for t, z in enumerate(self.mean_fields):
            for k in range(K):
                sofar = 0.0 if t == 0 else float(self.cumulative[t - 1, k])
                for s, mass in enumerate(z.per_team[k]):
                    rows.append((t, k, s, repr(float(mass)), repr(sofar)))
        return rows


def rollout_inf(spec: GameSpec, policy: LimitPolicyTable) -> LimitTrajectory:
    """Deterministic trajectory from the initial laws: at each stage look
    up the equilibrium at the projected current point, pay the limit stage
    cost, advance by the flow. Mixed profiles enter through their
    mixture-averaged rows (flow and cost are affine in each team's rows,
    so this is the exact one-step expectation)."""
    grid = policy.grid
    K, T = spec.n_teams, policy.horizon
    z = MeanField(per_team=tuple(tm.initial_law.copy() for tm in spec.teams))
    mean_fields = [z]
    rows_log, errors = [], []
    stage_costs = np.zeros((T, K))
    for t in range(T):
        idx, err = project_indices(z, grid)
        errors.append(err)
        eq = policy.equilibrium(t, idx)
        rows = eq.mean_rows(policy.sets)
        rows_log.append(rows)
        for k in range(K):
            stage_costs[t, k] = limit_stage_cost(z, rows[k], spec, k, t)
        z = flow(z, rows, spec)
        mean_fields.append(z)
    cumulative = np.cumsum(stage_costs, axis=0)
    return LimitTrajectory(mean_fields=mean_fields, prescription_rows=rows_log,
                           stage_costs=stage_costs, cumulative=cumulative,
                           totals=cumulative[-1].copy(), projection_errors=errors)


def project_policy_to_lattice(spec: GameSpec, policy: LimitPolicyTable,
                              cap: int = DEFAULT_SUPPORT_CAP):
    """Replay a limit policy inside the finite game: for every joint count
    lattice point take the limit equilibrium at the nearest grid point.
    With the default 2N grid every count point embeds exactly (zero
    projection error)."""
    from .finite_mpe import JointLattice, PolicyTable
    lattice = JointLattice(spec, cap=cap)
    stages = [np.empty(lattice.shape, dtype=object) for _ in range(policy.horizon)]
    mixed_points = []
    for idx in lattice.indices():
        z = lattice.mean_field(idx)
        gidx, _ = project_indices(z, policy.grid)
        for t in range(policy.horizon):
            eq = policy.equilibrium(t, gidx)
            stages[t][idx] = eq
            if eq.kind == "mixed":
                mixed_points.append((t, idx))
    return PolicyTable(stages=stages, sets=policy.sets, lattice=lattice,
                       mixed_points=mixed_points)


def limit_policy_records(policy: LimitPolicyTable, values: LimitValueTable):
    """JSON-ready records {stage, z, team, kind, prescription, value}."""
    records = []
    grid = policy.grid
    for t in range(policy.horizon):
        for idx in grid.indices():
            eq = policy.equilibrium(t, idx)
            rows = eq.mean_rows(policy.sets)
            for k in range(len(policy.sets)):
                rec = {
                    "stage": t,
                    "z": grid.point_id(idx),
                    "team": k,
                    "kind": eq.kind,
                    "prescription": [[float(x) for x in r] for r in rows[k]],
                    "value": float(values.values[(t, k) + tuple(idx)]),
                }
                if eq.kind == "mixed":
                    rec["weights"] = [float(w) for w in eq.per_team[k]]
                records.append(rec)
    return records
