"""Game definition: teams of homogeneous agents with population-coupled
transitions and costs.

A game has K teams. Team k holds ``population`` identical agents moving on
the finite state set ``state_labels`` with actions ``action_labels``. Both
the one-step transition kernel and the per-stage cost are affine in the
joint mean field z = (z^(1), ..., z^(K)) (the stack of per-team state
occupancy distributions):

    P(s'|s, a, z) = transition_base[s, a, s'] + transition_coupling[s, a, s', :] @ flat(z)
    c_t(s, a, z)  = cost_base[t, s, a]        + cost_coupling[t, s, a, :]        @ flat(z)

where flat(z) concatenates the per-team occupancy vectors (length
``coupling_dim``). Affinity buys three things: validity on the whole
product of simplices can be checked at its finitely many vertices, the
coefficients yield closed-form Lipschitz bounds w.r.t. the transport
metric, and the infinite-population flow stays exact.

All validation failures raise SpecValidationError naming the first
violated invariant and its location.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SpecParseError, SpecValidationError

STOCH_TOL = 1e-12     # stochasticity / normalization checks
SIMPLEX_TOL = 1e-9    # membership of user-supplied mean fields


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TeamModel:
    """One team: labels, population, initial law, metric, dynamics, costs.

    Array shapes (S = len(state_labels), A = len(action_labels), T = horizon,
    D = total coupling dimension of the enclosing GameSpec):
      initial_law (S,), state_metric (S, S), transition_base (S, A, S),
      transition_coupling (S, A, S, D), cost_base (T, S, A),
      cost_coupling (T, S, A, D).
    """

    team_id: int
    state_labels: tuple
    action_labels: tuple
    population: int
    initial_law: np.ndarray = field(repr=False)
    state_metric: np.ndarray = field(repr=False)
    transition_base: np.ndarray = field(repr=False)
    transition_coupling: np.ndarray = field(repr=False)
    cost_base: np.ndarray = field(repr=False)
    cost_coupling: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "state_labels", tuple(str(x) for x in self.state_labels))
        object.__setattr__(self, "action_labels", tuple(str(x) for x in self.action_labels))
        for name in ("initial_law", "state_metric", "transition_base",
                     "transition_coupling", "cost_base", "cost_coupling"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name), dtype=float)))
        self._check_local()

    @property
    def n_states(self):
        return len(self.state_labels)

    @property
    def n_actions(self):
        return len(self.action_labels)

    def _check_local(self):
        k = self.team_id
        S, A = self.n_states, self.n_actions
        if S < 1 or A < 1:
            raise SpecValidationError("team %d: needs at least one state and one action" % k)
        if int(self.population) < 1:
            raise SpecValidationError("team %d: population must be a positive integer" % k)
        if self.initial_law.shape != (S,):
            raise SpecValidationError("team %d: initial_law has shape %s, expected (%d,)"
                                      % (k, self.initial_law.shape, S))
        if np.any(self.initial_law < 0):
            raise SpecValidationError("team %d: initial_law has a negative entry" % k)
        if abs(self.initial_law.sum() - 1.0) > STOCH_TOL:
            raise SpecValidationError("team %d: initial_law sums to %.17g, expected 1"
                                      % (k, self.initial_law.sum()))
        self._check_metric()
        if self.transition_base.shape != (S, A, S):
            raise SpecValidationError("team %d: transition_base has shape %s, expected %s"
                                      % (k, self.transition_base.shape, (S, A, S)))
        if np.any(self.transition_base < -STOCH_TOL):
            s, a, sp = np.argwhere(self.transition_base < -STOCH_TOL)[0]
            raise SpecValidationError("team %d: transition_base negative at (s=%d, a=%d, s'=%d)"
                                      % (k, s, a, sp))
        rowsums = self.transition_base.sum(axis=2)
        bad = np.argwhere(np.abs(rowsums - 1.0) > STOCH_TOL)
        if bad.size:
            s, a = bad[0]
            raise SpecValidationError(
                "team %d: transition_base row sum is %.17g at (s=%d, a=%d), expected 1"
                % (k, rowsums[s, a], s, a))

    def _check_metric(self):
        k, S = self.team_id, self.n_states
        d = self.state_metric
        if d.shape != (S, S):
            raise SpecValidationError("team %d: state_metric has shape %s, expected (%d, %d)"
                                      % (k, d.shape, S, S))
        if np.any(np.diag(d) != 0):
            raise SpecValidationError("team %d: state_metric diagonal must be zero" % k)
        if np.any(d != d.T):
            raise SpecValidationError("team %d: state_metric must be symmetric" % k)
        off = d[~np.eye(S, dtype=bool)]
        if off.size and np.any(off <= 0):
            raise SpecValidationError("team %d: state_metric must be positive off the diagonal" % k)
        # exhaustive triangle inequality
        for i in range(S):
            for j in range(S):
                if np.any(d[i, :] + d[:, j] < d[i, j] - STOCH_TOL):
                    raise SpecValidationError(
                        "team %d: state_metric violates the triangle inequality at (%d, %d)"
                        % (k, i, j))


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Validated game: K teams plus horizon and master seed.

    Immutable after construction; every evaluation operation is pure, so a
    GameSpec is safe to share across worker processes.
    """

    teams: tuple
    horizon: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "teams", tuple(self.teams))
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "seed", int(self.seed))
        if len(self.teams) < 1:
            raise SpecValidationError("spec needs at least one team")
        if self.horizon < 1:
            raise SpecValidationError("horizon must be >= 1, got %d" % self.horizon)
        for i, tm in enumerate(self.teams):
            if tm.team_id != i:
                raise SpecValidationError("team at position %d carries team_id %d"
                                          % (i, tm.team_id))
        self._check_couplings()

    @property
    def n_teams(self):
        return len(self.teams)

    @property
    def coupling_dim(self):
        return sum(t.n_states for t in self.teams)

    @property
    def offsets(self):
        """Start index of each team's occupancy block inside flat(z)."""
        out, acc = [], 0
        for t in self.teams:
            out.append(acc)
            acc += t.n_states
        return tuple(out)

    def block(self, k):
        """Slice of flat(z) belonging to team k."""
        off = self.offsets[k]
        return slice(off, off + self.teams[k].n_states)

    def _check_couplings(self):
        D, T = self.coupling_dim, self.horizon
        for tm in self.teams:
            k, S, A = tm.team_id, tm.n_states, tm.n_actions
            if tm.transition_coupling.shape != (S, A, S, D):
                raise SpecValidationError(
                    "team %d: transition_coupling has shape %s, expected %s "
                    "(coupling axes must cover every team's states)"
                    % (k, tm.transition_coupling.shape, (S, A, S, D)))
            if tm.cost_base.shape != (T, S, A):
                raise SpecValidationError("team %d: cost_base has shape %s, expected %s"
                                          % (k, tm.cost_base.shape, (T, S, A)))
            if tm.cost_coupling.shape != (T, S, A, D):
                raise SpecValidationError("team %d: cost_coupling has shape %s, expected %s"
                                          % (k, tm.cost_coupling.shape, (T, S, A, D)))
            colsums = tm.transition_coupling.sum(axis=2)   # (S, A, D)
            bad = np.argwhere(np.abs(colsums) > STOCH_TOL)
            if bad.size:
                s, a, j = bad[0]
                raise SpecValidationError(
                    "team %d: transition_coupling row sum is %.17g at (s=%d, a=%d, "
                    "coupling index %d), expected 0 (mass preservation)"
                    % (k, colsums[s, a, j], s, a, j))
            self._check_vertices(tm)

    def _check_vertices(self, tm):
        # The kernel is affine in z, so P >= 0 on the whole simplex product
        # iff it holds at every vertex (each team's mass on one state). The
        # minimum over vertices separates across team blocks.
        k = tm.team_id
        low = tm.transition_base.copy()
        for kp in range(self.n_teams):
            blk = tm.transition_coupling[..., self.block(kp)]
            low += blk.min(axis=3)
        bad = np.argwhere(low < -STOCH_TOL)
        if bad.size:
            s, a, sp = bad[0]
            raise SpecValidationError(
                "team %d: transition nonnegativity at vertex fails for "
                "(s=%d, a=%d, s'=%d): minimum over vertices is %.17g"
                % (k, s, a, sp, low[s, a, sp]))


def flatten_mean_field(spec: GameSpec, z) -> np.ndarray:
    """Concatenate per-team occupancy vectors and check simplex membership.

    Accepts a sequence of per-team vectors or any object with a
    ``per_team`` attribute holding one.
    """
    per_team = getattr(z, "per_team", z)
    if len(per_team) != spec.n_teams:
        raise SpecValidationError("mean field has %d teams, spec has %d"
                                  % (len(per_team), spec.n_teams))
    parts = []
    for k, tm in enumerate(spec.teams):
        v = np.asarray(per_team[k], dtype=float)
        if v.shape != (tm.n_states,):
            raise SpecValidationError("mean field for team %d has shape %s, expected (%d,)"
                                      % (k, v.shape, tm.n_states))
        if np.any(v < -SIMPLEX_TOL) or abs(v.sum() - 1.0) > SIMPLEX_TOL:
            raise SpecValidationError("mean field for team %d is not on the simplex "
                                      "(sum %.17g)" % (k, v.sum()))
        parts.append(v)
    return np.concatenate(parts)


def eval_transition(spec: GameSpec, k: int, s: int, a: int, z) -> np.ndarray:
    """Next-state probability row P(.|s, a, z) for an agent of team k."""
    tm = spec.teams[k]
    if not (0 <= s < tm.n_states and 0 <= a < tm.n_actions):
        raise IndexError("state/action out of range for team %d: (s=%d, a=%d)" % (k, s, a))
    zf = flatten_mean_field(spec, z)
    row = tm.transition_base[s, a] + tm.transition_coupling[s, a] @ zf
    return np.maximum(row, 0.0)


def eval_cost(spec: GameSpec, k: int, t: int, s: int, a: int, z) -> float:
    """Per-agent stage cost c_t(s, a, z) for team k at stage t (0-based)."""
    tm = spec.teams[k]
    if not 0 <= t < spec.horizon:
        raise IndexError("stage %d out of range for horizon %d" % (t, spec.horizon))
    if not (0 <= s < tm.n_states and 0 <= a < tm.n_actions):
        raise IndexError("state/action out of range for team %d: (s=%d, a=%d)" % (k, s, a))
    zf = flatten_mean_field(spec, z)
    return float(tm.cost_base[t, s, a] + tm.cost_coupling[t, s, a] @ zf)


def transition_matrix(spec: GameSpec, k: int, zf: np.ndarray) -> np.ndarray:
    """All rows at once: (S, A, S) array of P(s'|s, a, z), z flat."""
    tm = spec.teams[k]
    return np.maximum(tm.transition_base + tm.transition_coupling @ zf, 0.0)


def cost_matrix(spec: GameSpec, k: int, t: int, zf: np.ndarray) -> np.ndarray:
    """(S, A) array of c_t(s, a, z), z flat."""
    tm = spec.teams[k]
    return tm.cost_base[t] + tm.cost_coupling[t] @ zf


def _kr_norm(w: np.ndarray, metric: np.ndarray) -> float:
    """Smallest L with |w . (p - q)| <= L * W_metric(p, q) for p, q on the
    simplex: the Lipschitz constant of the coefficient vector w on the
    metric state space (Kantorovich duality makes this tight)."""
    S = len(w)
    if S == 1:
        return 0.0
    diff = np.abs(w[:, None] - w[None, :])
    off = ~np.eye(S, dtype=bool)
    return float(np.max(diff[off] / metric[off]))


def transition_lipschitz(spec: GameSpec, k: int) -> float:
    """Closed-form bound: W(P(.|s,a,z), P(.|s,a,z')) <= L * joint_distance(z, z')
    for every (s, a), where W uses team k's state metric and joint_distance
    sums per-team transport distances."""
    tm = spec.teams[k]
    S = tm.n_states
    if S == 1:
        return 0.0
    diam = float(tm.state_metric.max())
    best = 0.0
    for s in range(S):
        for a in range(tm.n_actions):
            per_team = []
            for kp in range(spec.n_teams):
                blk = tm.transition_coupling[s, a, :, spec.block(kp)]   # (S', |S_kp|)
                mkp = spec.teams[kp].state_metric
                per_team.append(sum(_kr_norm(blk[sp], mkp) for sp in range(S)))
            best = max(best, max(per_team) if per_team else 0.0)
    return 0.5 * diam * best


def cost_lipschitz(spec: GameSpec, k: int, t: int) -> float:
    """Closed-form bound: |c_t(s,a,z) - c_t(s,a,z')| <= L * joint_distance(z, z')
    for every (s, a)."""
    tm = spec.teams[k]
    best = 0.0
    for s in range(tm.n_states):
        for a in range(tm.n_actions):
            for kp in range(spec.n_teams):
                w = tm.cost_coupling[t, s, a, spec.block(kp)]
                best = max(best, _kr_norm(w, spec.teams[kp].state_metric))
    return best


# ---------------------------------------------------------------------------
# document loading

def _discrete_metric(n):
    return np.ones((n, n)) - np.eye(n)


def _dense_coupling(records, shape, n_states_per_team, offsets, where, timed):
    """Expand sparse coupling records into the dense array."""
    out = np.zeros(shape)
    for i, rec in enumerate(records):
        loc = "%s coupling record %d" % (where, i)
        try:
            s = int(rec["s"]); a = int(rec["a"])
            kp = int(rec["team"]); sig = int(rec["sigma"])
            val = float(rec["value"])
            sp = int(rec["s'"]) if not timed else None
            t = int(rec["t"]) if timed else None
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecValidationError("%s: malformed (%s)" % (loc, exc)) from exc
        if not 0 <= kp < len(n_states_per_team):
            raise SpecValidationError("%s: team %d out of range" % (loc, kp))
        if not 0 <= sig < n_states_per_team[kp]:
            raise SpecValidationError("%s: sigma %d out of range for team %d" % (loc, sig, kp))
        j = offsets[kp] + sig
        try:
            if timed:
                out[t, s, a, j] += val
            else:
                out[s, a, sp, j] += val
        except IndexError as exc:
            raise SpecValidationError("%s: index out of range (%s)" % (loc, exc)) from exc
    return out


def load_spec(document) -> GameSpec:
    """Parse and validate a game document.

    ``document`` is a JSON string/bytes or an already-parsed mapping. See
    README for the schema; all indices are 0-based label positions and
    stages run t = 0..horizon-1.
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SpecParseError("document is not valid JSON: %s" % exc) from exc
    elif isinstance(document, dict):
        doc = document
    else:
        raise SpecParseError("document must be JSON text or a mapping, got %r" % type(document))

    try:
        horizon = int(doc["horizon"])
        team_docs = doc["teams"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecParseError("missing or malformed top-level field: %s" % exc) from exc
    seed = int(doc.get("seed", 0))
    if not isinstance(team_docs, list) or not team_docs:
        raise SpecParseError("'teams' must be a nonempty list")

    n_states = []
    for i, td in enumerate(team_docs):
        if "states" not in td or not td["states"]:
            raise SpecParseError("team %d: missing 'states'" % i)
        n_states.append(len(td["states"]))
    offsets = tuple(int(x) for x in np.cumsum([0] + n_states[:-1]))
    D = sum(n_states)

    teams = []
    for i, td in enumerate(team_docs):
        try:
            states = list(td["states"])
            actions = list(td["actions"])
            population = int(td["population"])
            initial_law = td["initial_law"]
            trans = td["transition"]
            cost = td["cost"]
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecParseError("team %d: missing or malformed field: %s" % (i, exc)) from exc
        S, A = len(states), len(actions)
        metric = td.get("metric")
        metric = _discrete_metric(S) if metric is None else np.asarray(metric, dtype=float)

        base = np.asarray(trans.get("base"), dtype=float)
        tcoup = _dense_coupling(trans.get("coupling", []), (S, A, S, D),
                                n_states, offsets, "team %d transition" % i, timed=False)

        cbase = np.asarray(cost.get("base"), dtype=float)
        if cbase.ndim == 2:
            cbase = np.broadcast_to(cbase, (horizon,) + cbase.shape).copy()
        ccoup = _dense_coupling(cost.get("coupling", []), (horizon, S, A, D),
                                n_states, offsets, "team %d cost" % i, timed=True)

        teams.append(TeamModel(
            team_id=i, state_labels=states, action_labels=actions,
            population=population, initial_law=initial_law, state_metric=metric,
            transition_base=base, transition_coupling=tcoup,
            cost_base=cbase, cost_coupling=ccoup))

    return GameSpec(teams=tuple(teams), horizon=horizon, seed=seed)


def load_spec_file(path) -> GameSpec:
    with open(path, "rb") as fh:
        return load_spec(fh.read())


def with_populations(spec: GameSpec, populations) -> GameSpec:
    """Same game with team populations replaced (revalidated)."""
    if isinstance(populations, (int, np.integer)):
        populations = [int(populations)] * spec.n_teams
    if len(populations) != spec.n_teams:
        raise SpecValidationError("need one population per team")
    teams = tuple(replace(tm, population=int(n))
                  for tm, n in zip(spec.teams, populations))
    return GameSpec(teams=teams, horizon=spec.horizon, seed=spec.seed)
