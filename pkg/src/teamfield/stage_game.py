"""One-shot games over prescriptions.

At every mean-field point of the backward induction the K team
coordinators face a finite simultaneous-move game: each picks a
prescription from a finite menu, pays its own stage cost plus the
expected continuation value under the induced joint count kernel. This
module builds those menus and cost tensors and solves the game (pure
enumeration, support enumeration for two teams, damped fictitious play
as the always-terminating fallback).

The prescription simplex is continuous in principle; menus here are
either all deterministic state-to-action maps ("pure") or all maps with
rows on a 1/g grid ("gridded"). Refining g trades computation for
fidelity.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, EquilibriumNotFoundError, SpecValidationError
from .counts import (DEFAULT_SUPPORT_CAP, MeanField, Prescription, TeamLattice,
                     enumerate_counts, stage_cost, team_transition_kernel)
from .model import GameSpec

PURE_TOL = 1e-12      # strict-improvement tolerance for pure deviations
CERT_TOL = 1e-9       # certified-equilibrium acceptance threshold
DEFAULT_PRESCRIPTION_CAP = 10 ** 5
DEFAULT_SUPPORT_BOUND = 4


@dataclass(frozen=True)
class PrescriptionSet:
    """Ordered finite menu of prescriptions for one team."""
    team_id: int
    mode: str
    grid_resolution: int
    items: tuple

    def __len__(self):
        return len(self.items)

    def rows_stack(self):
        return np.stack([p.rows for p in self.items])


def build_prescription_set(spec: GameSpec, k: int, mode: str = "pure",
                           g: int = None,
                           cap: int = DEFAULT_PRESCRIPTION_CAP) -> PrescriptionSet:
    """Menu for team k.

    pure: all deterministic maps, ordered lexicographically by the tuple
    of chosen action indices (|A|^|S| items). gridded: every map whose
    rows have entries that are multiples of 1/g (C(g+|A|-1, |A|-1)^|S|
    items, rows cycling fastest in the last state).
    """
    tm = spec.teams[k]
    S, A = tm.n_states, tm.n_actions
    if mode == "pure":
        size = A ** S
        if size > cap:
            raise CapacityError("pure prescription set for team %d has %d items, cap %d"
                                % (k, size, cap))
        items = []
        for choice in itertools.product(range(A), repeat=S):
            rows = np.zeros((S, A))
            rows[np.arange(S), list(choice)] = 1.0
            items.append(Prescription(team_id=k, rows=rows))
    elif mode == "gridded":
        if g is None or g < 1:
            raise SpecValidationError("gridded mode needs a grid resolution g >= 1")
        row_menu = [np.array(v, dtype=float) / g for v in enumerate_counts(g, A)]
        size = len(row_menu) ** S
        if size > cap:
            raise CapacityError("gridded prescription set for team %d has %d items, cap %d"
                                % (k, size, cap))
        items = []
        for combo in itertools.product(row_menu, repeat=S):
            items.append(Prescription(team_id=k, rows=np.stack(combo)))
    else:
        raise SpecValidationError("unknown prescription mode %r" % mode)
    return PrescriptionSet(team_id=k, mode=mode,
                           grid_resolution=(g if mode == "gridded" else 1),
                           items=tuple(items))


@dataclass(frozen=True)
class StageGame:
    """Cost tensors over joint prescription indices, one per team."""
    tensors: tuple
    sets: tuple

    def __post_init__(self):
        shape = self.tensors[0].shape
        for T in self.tensors:
            if T.shape != shape:
                raise SpecValidationError("stage game tensors disagree on shape")
            if not np.all(np.isfinite(T)):
                raise SpecValidationError("stage game tensor has non-finite entries")

    @property
    def n_teams(self):
        return len(self.tensors)

    @property
    def shape(self):
        return self.tensors[0].shape


@dataclass(frozen=True)
class StageEquilibrium:
    """Solution of one stage game.

    kind 'pure': per_team is a tuple of prescription indices.
    kind 'mixed': per_team is a tuple of probability vectors over each
    team's menu. epsilon is the certified maximal unilateral gain,
    recomputed exactly from the tensors.
    """
    kind: str
    per_team: tuple
    epsilon: float

    def __post_init__(self):
        if self.kind not in ("pure", "mixed"):
            raise SpecValidationError("equilibrium kind must be pure or mixed")
        if self.epsilon < 0:
            raise SpecValidationError("epsilon must be nonnegative")
        if self.kind == "mixed":
            vecs = tuple(np.asarray(v, dtype=float) for v in self.per_team)
            for v in vecs:
                if np.any(v < -1e-10) or abs(v.sum() - 1.0) > 1e-10:
                    raise SpecValidationError("mixed profile off the simplex")
            object.__setattr__(self, "per_team", vecs)
        else:
            object.__setattr__(self, "per_team", tuple(int(i) for i in self.per_team))

    def weights(self, game_shape) -> list:
        """Per-team mixture over menu indices (one-hot when pure)."""
        out = []
        for k, n in enumerate(game_shape):
            if self.kind == "pure":
                w = np.zeros(n)
                w[self.per_team[k]] = 1.0
            else:
                w = np.asarray(self.per_team[k], dtype=float)
            out.append(w)
        return out

    def support_sizes(self):
        if self.kind == "pure":
            return tuple(1 for _ in self.per_team)
        return tuple(int(np.sum(v > 1e-12)) for v in self.per_team)

    def mean_rows(self, sets) -> list:
        """Mixture-averaged prescription rows per team."""
        out = []
        for k, ps in enumerate(sets):
            if self.kind == "pure":
                out.append(ps.items[self.per_team[k]].rows)
            else:
                out.append(np.tensordot(self.per_team[k], ps.rows_stack(), axes=(0, 0)))
        return out


class KernelCache:
    """Per-team next-count kernels as dense vectors over the team lattice.

    Kernels are stationary in the stage index, so one cache serves the
    whole backward induction; keys are (team, mean field, menu index).
    """

    def __init__(self, spec: GameSpec, sets, cap: int = DEFAULT_SUPPORT_CAP):
        self.spec = spec
        self.sets = sets
        self.cap = cap
        self.lattices = [TeamLattice(tm.population, tm.n_states, cap=cap)
                         for tm in spec.teams]
        self._store = {}

    def vector(self, k: int, z: MeanField, presc_idx: int) -> np.ndarray:
        key = (k, z.key(), presc_idx)
        vec = self._store.get(key)
        if vec is None:
            lat = self.lattices[k]
            m = np.rint(z.per_team[k] * lat.population).astype(int)
            if np.any(np.abs(z.per_team[k] * lat.population - m) > 1e-9):
                raise SpecValidationError(
                    "mean field %s is not a count point for population %d"
                    % (z.per_team[k], lat.population))
            dist = team_transition_kernel(m, z, self.sets[k].items[presc_idx],
                                          self.spec, k, cap=self.cap)
            vec = np.zeros(len(lat))
            for cv, p in zip(dist.support, dist.probs):
                vec[lat.index[cv.counts]] = p
            vec.setflags(write=False)
            self._store[key] = vec
        return vec

    def matrix(self, k: int, z: MeanField) -> np.ndarray:
        """(menu size, lattice size) stack of kernel vectors at z."""
        return np.stack([self.vector(k, z, i) for i in range(len(self.sets[k]))])


@dataclass(frozen=True)
class ContinuationTable:
    """Next-stage values on the joint count lattice: values[k, i_1, ..., i_K]
    with per-team lattice indices i_k."""
    lattices: tuple
    values: np.ndarray = field(repr=False)


def _einsum_script(K):
    own = [chr(ord("a") + i) for i in range(K)]
    lat = [chr(ord("n") + i) for i in range(K)]
    ins = ",".join(o + l for o, l in zip(own, lat))
    return ins + "," + "".join(lat) + "->" + "".join(own)


def build_stage_game(z: MeanField, t: int, continuation, sets, spec: GameSpec,
                     kernel_cache: KernelCache = None,
                     cap: int = DEFAULT_SUPPORT_CAP) -> StageGame:
    """Cost tensors at mean-field point z and stage t.

    tensor_k[joint index] = stage_cost(z, menu_k[i_k])
                            + E[continuation_k(next counts)],
    the expectation taken under the exact joint kernel (product across
    teams). ``continuation`` is None (terminal stage), a ContinuationTable
    (fast path used by the solvers), or a callable mapping a JointCount to
    a length-K value sequence.
    """
    K = spec.n_teams
    shape = tuple(len(ps) for ps in sets)
    own_cost = []
    for k in range(K):
        own_cost.append(np.array([stage_cost(z, p, spec, k, t) for p in sets[k].items]))

    if continuation is None:
        tensors = []
        for k in range(K):
            bshape = [1] * K
            bshape[k] = shape[k]
            tensors.append(np.broadcast_to(own_cost[k].reshape(bshape), shape).copy())
        return StageGame(tensors=tuple(tensors), sets=tuple(sets))

    if isinstance(continuation, ContinuationTable):
        if kernel_cache is None:
            kernel_cache = KernelCache(spec, sets, cap=cap)
        Ws = [kernel_cache.matrix(k, z) for k in range(K)]
        script = _einsum_script(K)
        tensors = []
        for k in range(K):
            exp_next = np.einsum(script, *Ws, continuation.values[k])
            bshape = [1] * K
            bshape[k] = shape[k]
            tensors.append(own_cost[k].reshape(bshape) + exp_next)
        return StageGame(tensors=tuple(tensors), sets=tuple(sets))

    # generic continuation callable: exact summation over the materialized
    # joint support, profile by profile (small instances only)
    from .counts import JointCount, CountVector
    dists = {}
    for k in range(K):
        m = np.rint(z.per_team[k] * spec.teams[k].population).astype(int)
        for i, p in enumerate(sets[k].items):
            dists[(k, i)] = team_transition_kernel(m, z, p, spec, k, cap=cap)
    tensors = [np.zeros(shape) for _ in range(K)]
    for profile in np.ndindex(shape):
        per = [dists[(k, profile[k])] for k in range(K)]
        acc = np.zeros(K)
        for combo in itertools.product(*(range(len(d)) for d in per)):
            pr = 1.0
            for k in range(K):
                pr *= per[k].probs[combo[k]]
            jc = JointCount(per_team=tuple(
                CountVector(team_id=k, counts=per[k].support[combo[k]].counts)
                for k in range(K)))
            acc += pr * np.asarray(continuation(jc), dtype=float)
        for k in range(K):
            tensors[k][profile] = own_cost[k][profile[k]] + acc[k]
    return StageGame(tensors=tuple(tensors), sets=tuple(sets))


# ---------------------------------------------------------------------------
# solvers

def pure_nash(game: StageGame) -> list:
    """All joint indices from which no team can strictly lower its own
    cost unilaterally (strict tolerance 1e-12), lexicographic order."""
    mask = np.ones(game.shape, dtype=bool)
    for k, T in enumerate(game.tensors):
        mask &= T <= T.min(axis=k, keepdims=True) + PURE_TOL
    return [tuple(int(i) for i in idx) for idx in np.argwhere(mask)]


def certify_epsilon(game: StageGame, eq: StageEquilibrium) -> float:
    """Exact maximal unilateral gain of eq, recomputed from the tensors."""
    weights = eq.weights(game.shape)
    eps = 0.0
    for k, T in enumerate(game.tensors):
        e = _own_cost_vector(T, weights, k)
        eps = max(eps, float(weights[k] @ e - e.min()))
    return max(eps, 0.0)


def equilibrium_values(game: StageGame, eq: StageEquilibrium) -> np.ndarray:
    """Per-team expected cost under the (possibly mixed) profile."""
    weights = eq.weights(game.shape)
    out = np.empty(game.n_teams)
    for k, T in enumerate(game.tensors):
        out[k] = weights[k] @ _own_cost_vector(T, weights, k)
    return out


def _own_cost_vector(tensor: np.ndarray, weights, k: int) -> np.ndarray:
    """Expected cost of team k per own index, others at their mixtures.

    Contracts the highest axis first so remaining axis positions stay put.
    """
    X = tensor
    for j in range(len(weights) - 1, -1, -1):
        if j == k:
            continue
        X = np.tensordot(X, weights[j], axes=(j, 0))
    return X


def mixed_nash_2team(game: StageGame,
                     support_bound: int = DEFAULT_SUPPORT_BOUND) -> StageEquilibrium:
    """Support enumeration for two-team games.

    Candidate supports are scanned smallest total size first (then row
    size, then lexicographic); each candidate's indifference system is
    solved by least squares and the resulting profile is kept only if its
    exactly recomputed epsilon is at most 1e-9.
    """
    if game.n_teams != 2:
        raise SpecValidationError("support enumeration needs exactly 2 teams")
    A, B = game.tensors
    n1, n2 = game.shape
    combos = []
    for r in range(1, min(n1, support_bound) + 1):
        for c in range(1, min(n2, support_bound) + 1):
            for R in itertools.combinations(range(n1), r):
                for C in itertools.combinations(range(n2), c):
                    combos.append((r + c, r, c, R, C))
    combos.sort()
    for _, r, c, R, C in combos:
        if r == 1 and c == 1:
            x = np.zeros(n1); x[R[0]] = 1.0
            y = np.zeros(n2); y[C[0]] = 1.0
        else:
            y = _indifference_solve(A[np.ix_(R, C)], c)
            x = _indifference_solve(B[np.ix_(R, C)].T, r)
            if x is None or y is None:
                continue
            xf = np.zeros(n1); xf[list(R)] = x
            yf = np.zeros(n2); yf[list(C)] = y
            x, y = xf, yf
        cand = StageEquilibrium(kind="mixed", per_team=(x, y), epsilon=0.0)
        eps = certify_epsilon(game, cand)
        if eps <= CERT_TOL:
            if r == 1 and c == 1:
                return StageEquilibrium(kind="pure", per_team=(R[0], C[0]), epsilon=eps)
            return StageEquilibrium(kind="mixed", per_team=(x, y), epsilon=eps)
    raise EquilibriumNotFoundError(
        "no equilibrium with supports of size <= %d certified" % support_bound)


def _indifference_solve(M: np.ndarray, size: int):
    """Mixture on the columns of M making all rows equal in expectation.

    Solves [M, -1; 1, 0] [y; v] = [0; 1] by least squares; returns None
    when the system is inconsistent or the mixture leaves the simplex.
    """
    rows = M.shape[0]
    lhs = np.zeros((rows + 1, size + 1))
    lhs[:rows, :size] = M
    lhs[:rows, size] = -1.0
    lhs[rows, :size] = 1.0
    rhs = np.zeros(rows + 1)
    rhs[rows] = 1.0
    sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    y = sol[:size]
    if np.any(y < -1e-9) or abs(y.sum() - 1.0) > 1e-9:
        return None
    if np.max(np.abs(lhs @ sol - rhs)) > 1e-9:
        return None
    y = np.maximum(y, 0.0)
    return y / y.sum()


def br_iteration(game: StageGame, max_iters: int = 200,
                 tol: float = CERT_TOL) -> StageEquilibrium:
    """Damped fictitious play over menu indices.

    Tracks every visited profile (the running mixtures and each round's
    pure best-response profile) with its exactly certified epsilon and
    returns the best one; epsilon is reported honestly even when it never
    reaches tol.
    """
    K = game.n_teams
    shape = game.shape
    weights = [np.full(n, 1.0 / n) for n in shape]
    best = None     # (epsilon, preference, order, equilibrium)
    order = 0

    def consider(eq):
        nonlocal best, order
        eps = certify_epsilon(game, eq)
        eq = StageEquilibrium(kind=eq.kind, per_team=eq.per_team, epsilon=eps)
        rank = (eps, 0 if eq.kind == "pure" else 1, order)
        order += 1
        if best is None or rank < best[0:3]:
            best = (eps, rank[1], rank[2], eq)

    for it in range(1, max_iters + 1):
        brs = []
        for k in range(K):
            e = _own_cost_vector(game.tensors[k], weights, k)
            brs.append(int(np.argmin(e)))
        consider(StageEquilibrium(kind="pure", per_team=tuple(brs), epsilon=0.0))
        consider(StageEquilibrium(kind="mixed",
                                  per_team=tuple(w.copy() for w in weights), epsilon=0.0))
        if best[0] <= tol:
            break
        alpha = 1.0 / (it + 1.0)
        for k in range(K):
            weights[k] *= (1.0 - alpha)
            weights[k][brs[k]] += alpha
    return best[3]


def solve_stage(game: StageGame, t: int, z_label, pure_only: bool = False,
                support_bound: int = DEFAULT_SUPPORT_BOUND) -> StageEquilibrium:
    """One-stop solve used by the backward inductions: pure enumeration
    first (lexicographic selection), then support enumeration for two
    teams, then fictitious play. pure_only fails loudly instead of
    falling back."""
    from .errors import NoPureEquilibriumError
    pure = pure_nash(game)
    if pure:
        cands = [StageEquilibrium(kind="pure", per_team=p, epsilon=0.0) for p in pure]
        eq = select_equilibrium(cands)
        return StageEquilibrium(kind="pure", per_team=eq.per_team,
                                epsilon=certify_epsilon(game, eq))
    if pure_only:
        raise NoPureEquilibriumError(t, z_label)
    if game.n_teams == 2:
        try:
            return mixed_nash_2team(game, support_bound=support_bound)
        except EquilibriumNotFoundError:
            pass
    return br_iteration(game)


def select_equilibrium(candidates) -> StageEquilibrium:
    """Deterministic choice among solved equilibria: pure before mixed;
    among pure the lexicographically smallest joint index; among mixed the
    smallest support profile, then lexicographic support indices."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("select_equilibrium: empty candidate list")

    def key(ieq):
        i, eq = ieq
        if eq.kind == "pure":
            return (0, eq.per_team, (), i)
        supports = tuple(tuple(int(j) for j in np.flatnonzero(v > 1e-12))
                         for v in eq.per_team)
        return (1, (sum(len(s) for s in supports),), supports, i)

    return min(enumerate(candidates), key=key)[1]


def stage_game_csv_rows(z_id, game: StageGame):
    """Audit rows (z_id, team, joint indices..., cost)."""
    rows = []
    for k, T in enumerate(game.tensors):
        for profile in np.ndindex(game.shape):
            rows.append((z_id, k) + tuple(int(i) for i in profile) + (repr(float(T[profile])),))
    return rows
