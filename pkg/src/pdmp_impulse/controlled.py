"""Budget-augmented controlled process: simulation and Monte Carlo validation.

The controlled process carries (mode, position, remaining budget N, clock
since last jump).  Between jumps it follows the uncontrolled flow; the sojourn
is truncated at min(boundary-hit time, planned intervention time r for the
current budget).  Hitting the truncation cap is an intervention exactly when
the cap came from r rather than from the region boundary; interventions
relocate deterministically to the policy's restart point with budget N - 1.
Natural jumps draw from the kernel and also decrement the budget while it is
positive.  Classification never compares sampled reals for equality: the
sojourn sampler returns the truncation flag.
"""

from __future__ import annotations

import bisect
import math
import weakref
from dataclasses import dataclass

import numpy as np
from scipy.stats import ks_2samp

from .dynamics import (
    IntensityPath,
    MAX_JUMPS,
    _runtime,
    _sample_truncated,
    default_horizon,
)
from .errors import DomainError, NumericalError, PolicyCoverageError
from .model import PdmpModel, StatePoint
from .quadrature import panel_cumulative, panel_nodes
from .valuefn import PolicyTable, policy_query

NATURAL = "natural"
INTERVENTION = "intervention"

KS_CRIT_1PCT = math.sqrt(-0.5 * math.log(0.005))  # two-sided 1% coefficient


class _Cemetery:
    """Absorbing marker for states with no further restart defined."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "CEMETERY"


CEMETERY = _Cemetery()


@dataclass(frozen=True)
class AugmentedState:
    mode: int
    zeta: tuple[float, ...]
    budget: int
    clock: float

    def __post_init__(self):
        object.__setattr__(self, "zeta", tuple(float(z) for z in self.zeta))
        if self.budget < 0:
            raise DomainError("budget must be nonnegative")
        if self.clock < 0:
            raise DomainError("clock must be nonnegative")

    def project(self) -> StatePoint:
        return StatePoint(self.mode, self.zeta)


@dataclass(frozen=True)
class AugJumpEvent:
    time: float
    sojourn: float
    pre: AugmentedState
    post: AugmentedState
    kind: str  # NATURAL or INTERVENTION
    cap_hit: bool  # sojourn reached the truncation cap


@dataclass(frozen=True)
class ControlledTrajectory:
    start: AugmentedState
    events: tuple[AugJumpEvent, ...]
    tau_times: tuple[float, ...]
    restarts: tuple[AugmentedState, ...]
    horizon: float
    running_cost: float
    intervention_cost: float

    @property
    def total_cost(self) -> float:
        return self.running_cost + self.intervention_cost

    @property
    def n_interventions(self) -> int:
        return len(self.tau_times)

    def tau(self, i: int) -> float:
        """Time of the i-th intervention (1-based); +inf when it never happens."""
        if i < 1:
            raise DomainError("intervention index is 1-based")
        return self.tau_times[i - 1] if i <= len(self.tau_times) else math.inf

    def restart(self, i: int):
        if i < 1:
            raise DomainError("intervention index is 1-based")
        return self.restarts[i - 1] if i <= len(self.restarts) else CEMETERY

    def to_json_line(self) -> str:
        import json

        payload = {
            "start": [self.start.mode, list(self.start.zeta), self.start.budget],
            "horizon": self.horizon,
            "running_cost": self.running_cost,
            "intervention_cost": self.intervention_cost,
            "tau": list(self.tau_times),
            "events": [
                {
                    "time": e.time,
                    "sojourn": e.sojourn,
                    "kind": e.kind,
                    "pre": [e.pre.mode, list(e.pre.zeta), e.pre.budget, e.pre.clock],
                    "post": [e.post.mode, list(e.post.zeta), e.post.budget, e.post.clock],
                    "cap_hit": e.cap_hit,
                }
                for e in self.events
            ],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


# --------------------------------------------------------------------------
# Policy lookups tuned for the simulation loop


class _PolicyRuntime:
    """Per-(table, model) scalar lookups of (r, restart index) by budget.

    The waiting branch reports r = +inf to the engine: the sojourn cap
    min(t*, r) and the jump classification are unchanged by substituting
    +inf for t*, and it saves recomputing the exact boundary-hit time twice.
    """

    def __init__(self, table: PolicyTable, model: PdmpModel):
        self.table = table
        self.model = model
        self.n_max = table.n_max
        self.d1 = model.dim == 1
        self.control = [(y.mode, y.zeta) for y in table.control_set]
        self.axis: dict[int, list[float]] = {}
        self.r: dict[tuple[int, int], list[float]] = {}
        self.wait: dict[tuple[int, int], list[bool]] = {}
        self.y: dict[tuple[int, int], list[int]] = {}
        if self.d1:
            for m in table.axes:
                self.axis[m] = [float(v) for v in table.axes[m][0]]
            for k in range(1, table.n_max + 1):
                stage = table.stages[k - 1]
                for m in table.axes:
                    self.r[(k, m)] = [float(v) for v in stage.r[m]]
                    self.wait[(k, m)] = [bool(v) for v in stage.wait[m]]
                    self.y[(k, m)] = [int(v) for v in stage.y_index[m]]

    def lookup(self, mode: int, zeta, budget: int) -> tuple[float, int]:
        """(planned intervention time, restart index); (-inf-budget rule)."""
        if budget == 0:
            return math.inf, -1
        if budget > self.n_max:
            raise PolicyCoverageError(
                f"budget {budget} exceeds the table's maximum {self.n_max}"
            )
        if not self.d1:
            res = policy_query(self.table, StatePoint(mode, tuple(np.atleast_1d(zeta))),
                               budget, model=self.model)
            if res.y is None:
                return math.inf, -1
            return res.r, self.table.control_set.index(res.y)
        z = zeta if isinstance(zeta, float) else float(zeta[0])
        axis = self.axis[mode]
        n = len(axis)
        i = bisect.bisect_right(axis, z) - 1
        if i < 0:
            i = 0
        elif i > n - 2:
            i = n - 2
        t = (z - axis[i]) / (axis[i + 1] - axis[i])
        nearest = i + 1 if t > 0.5 else i
        wait = self.wait[(budget, mode)]
        if wait[nearest]:
            return math.inf, -1
        r_arr = self.r[(budget, mode)]
        if wait[i] == wait[i + 1]:
            r = r_arr[i] * (1.0 - t) + r_arr[i + 1] * t
        else:
            r = r_arr[nearest]
        return r, self.y[(budget, mode)][nearest]


_policy_cache: "weakref.WeakKeyDictionary[PolicyTable, _PolicyRuntime]" = (
    weakref.WeakKeyDictionary()
)


def _policy_runtime(table: PolicyTable, model: PdmpModel) -> _PolicyRuntime:
    rt = _policy_cache.get(table)
    if rt is None or rt.model is not model:
        rt = _PolicyRuntime(table, model)
        _policy_cache[table] = rt
    return rt


# --------------------------------------------------------------------------
# Augmented-process operations


def aug_flow(model: PdmpModel, s, t: float, table: PolicyTable | None = None):
    """Flow of the augmented process; the cemetery is absorbing."""
    if s is CEMETERY:
        return CEMETERY
    if t < 0:
        raise DomainError("flow time must be nonnegative")
    ts = model.flow.hit_time(s.mode, s.zeta)
    cap = ts
    if table is not None:
        cap = min(cap, aug_hit_time(model, s, table))
    if t > cap + 1e-12 * max(1.0, cap):
        raise DomainError(f"flow time {t} exceeds the augmented hit time {cap}")
    pos = np.asarray(model.flow.position(s.mode, s.zeta, min(t, ts)))
    return AugmentedState(s.mode, tuple(float(v) for v in pos), s.budget, s.clock + t)


def aug_hit_time(model: PdmpModel, s: AugmentedState, table: PolicyTable) -> float:
    """min(boundary-hit time, planned intervention time) at the state's point."""
    if s is CEMETERY:
        raise DomainError("hit time undefined at the cemetery state")
    ts = model.flow.hit_time(s.mode, s.zeta)
    if s.budget == 0:
        return ts
    res = policy_query(table, s.project(), s.budget, model=model)
    return min(ts, res.r)


def aug_step(s: AugmentedState, table: PolicyTable, model: PdmpModel,
             rng: np.random.Generator) -> tuple[AugmentedState, AugJumpEvent]:
    """One jump of the controlled process from a freshly-restarted state.

    The planned intervention time and the boundary-hit time are frozen at the
    state's current point (simulation only ever steps from clock 0).
    """
    if s is CEMETERY:
        raise DomainError("cannot step from the cemetery state")
    rt = _runtime(model)
    prt = _policy_runtime(table, model)
    step = _raw_step(rt, prt, s.mode, s.zeta, s.budget, rng)
    sojourn, kind, cap_hit, pre_mode, pre_pos, post_mode, post_pos, post_budget, _y = step
    pre = AugmentedState(pre_mode, pre_pos, s.budget, s.clock + sojourn)
    post = AugmentedState(post_mode, post_pos, post_budget, 0.0)
    event = AugJumpEvent(time=sojourn, sojourn=sojourn, pre=pre, post=post,
                         kind=kind, cap_hit=cap_hit)
    return post, event


def _raw_step(rt, prt: _PolicyRuntime, mode: int, zeta, budget: int,
              rng: np.random.Generator):
    """Shared step core; positions are tuples, scalars fast-pathed for d=1."""
    if rt.d1:
        z = zeta[0] if not isinstance(zeta, float) else zeta
        ts = rt.hit1[mode](z)
        r, y_idx = prt.lookup(mode, z, budget)
        cap = ts if r > ts else r
        sojourn, cap_hit = rt.sample_trunc1(mode, z, cap, rng.random())
        if cap_hit and r < ts:
            if y_idx < 0:
                raise PolicyCoverageError(
                    f"intervention scheduled at (mode={mode}, zeta={z}) with no restart"
                )
            pre_pos = (rt.pos1[mode](z, sojourn),)
            y_mode, y_pos = prt.control[y_idx]
            return (sojourn, INTERVENTION, True, mode, pre_pos,
                    y_mode, y_pos, budget - 1, y_idx)
        z_pre = rt.pos1[mode](z, sojourn)
        new_mode, new_z = rt.post_jump1(mode, z_pre, rng.random())
        return (sojourn, NATURAL, cap_hit, mode, (z_pre,),
                new_mode, (new_z,), budget - 1 if budget > 0 else 0, -1)
    # General-dimension path.
    model = rt.model
    ts = model.flow.hit_time(mode, zeta)
    r, y_idx = prt.lookup(mode, zeta, budget)
    cap = ts if r > ts else r
    ipath = rt.intensity_path(mode, np.asarray(zeta), cap if math.isfinite(cap) else ts)
    sojourn, cap_hit = _sample_truncated(ipath, cap, rng.random())
    pre_arr = np.asarray(model.flow.position(mode, np.asarray(zeta), sojourn))
    pre_pos = tuple(float(v) for v in pre_arr)
    if cap_hit and r < ts:
        if y_idx < 0:
            raise PolicyCoverageError(
                f"intervention scheduled at (mode={mode}, zeta={zeta}) with no restart"
            )
        y_mode, y_pos = prt.control[y_idx]
        return (sojourn, INTERVENTION, True, mode, pre_pos,
                y_mode, y_pos, budget - 1, y_idx)
    atoms = model.kernel.atoms_at(mode, pre_pos)
    u = rng.random()
    acc = 0.0
    point = atoms[-1][0]
    for cand, prob in atoms:
        acc += prob
        if u < acc:
            point = cand
            break
    return (sojourn, NATURAL, cap_hit, mode, pre_pos,
            point.mode, point.zeta, budget - 1 if budget > 0 else 0, -1)


def simulate_controlled(
    x0: StatePoint,
    n0: int,
    table: PolicyTable,
    model: PdmpModel,
    rng: np.random.Generator,
    horizon: float | None = None,
    collect_events: bool = True,
) -> ControlledTrajectory:
    """Run the strategy with initial budget n0 from x0 and accumulate costs.

    Running cost is accumulated up to the horizon (tail-truncation rule);
    intervention costs are never truncated, so simulation continues past the
    horizon until the budget is exhausted.
    """
    if n0 < 0 or n0 > table.n_max:
        raise PolicyCoverageError(f"initial budget {n0} outside table range 0..{table.n_max}")
    if horizon is None:
        horizon = default_horizon(model)
    rt = _runtime(model)
    prt = _policy_runtime(table, model)
    alpha = model.discount
    start = AugmentedState(x0.mode, x0.zeta, n0, 0.0)
    mode, zeta, budget = x0.mode, x0.zeta, n0
    elapsed = 0.0
    running = 0.0
    interventions = 0.0
    events: list[AugJumpEvent] = []
    taus: list[float] = []
    restarts: list[AugmentedState] = []
    n_jumps = 0
    while True:
        step = _raw_step(rt, prt, mode, zeta, budget, rng)
        (sojourn, kind, cap_hit, pre_mode, pre_pos,
         post_mode, post_pos, post_budget, y_idx) = step
        seg = sojourn if elapsed + sojourn < horizon else max(horizon - elapsed, 0.0)
        running += rt.segment_cost(mode, zeta, seg, elapsed)
        jump_time = elapsed + sojourn
        if kind == INTERVENTION:
            fee = model.costs.intervention(pre_mode, pre_pos, y_idx)
            interventions += math.exp(-alpha * jump_time) * fee
            taus.append(jump_time)
            restarts.append(AugmentedState(post_mode, post_pos, post_budget, 0.0))
        if collect_events:
            events.append(
                AugJumpEvent(
                    time=jump_time,
                    sojourn=sojourn,
                    pre=AugmentedState(pre_mode, pre_pos, budget, sojourn),
                    post=AugmentedState(post_mode, post_pos, post_budget, 0.0),
                    kind=kind,
                    cap_hit=cap_hit,
                )
            )
        elapsed = jump_time
        mode, zeta, budget = post_mode, post_pos, post_budget
        n_jumps += 1
        if n_jumps > MAX_JUMPS:
            raise NumericalError(
                f"more than {MAX_JUMPS} jumps; the model looks numerically explosive"
            )
        if elapsed >= horizon and budget == 0:
            break
    return ControlledTrajectory(
        start=start,
        events=tuple(events),
        tau_times=tuple(taus),
        restarts=tuple(restarts),
        horizon=horizon,
        running_cost=running,
        intervention_cost=interventions,
    )


# --------------------------------------------------------------------------
# Monte Carlo estimation and law checks


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    std_error: float
    ci95: tuple[float, float]
    running_mean: float
    intervention_mean: float
    intervention_counts: dict[int, int]
    replicates: int


def estimate_cost_J(
    x0: StatePoint,
    n0: int,
    table: PolicyTable,
    model: PdmpModel,
    replicates: int,
    seed: int,
    horizon: float | None = None,
) -> CostEstimate:
    """Monte Carlo estimate of the strategy cost with per-replicate streams.

    Replicate r draws from a stream seeded by (seed, r), so estimates are
    reproducible and independent of evaluation order; sums use numpy pairwise
    accumulation.
    """
    if replicates < 1:
        raise DomainError("replicates must be positive")
    totals = np.empty(replicates)
    runnings = np.empty(replicates)
    fees = np.empty(replicates)
    counts: dict[int, int] = {}
    for rep in range(replicates):
        rng = np.random.default_rng([seed, rep])
        traj = simulate_controlled(x0, n0, table, model, rng,
                                   horizon=horizon, collect_events=False)
        runnings[rep] = traj.running_cost
        fees[rep] = traj.intervention_cost
        totals[rep] = traj.total_cost
        k = traj.n_interventions
        counts[k] = counts.get(k, 0) + 1
    mean = float(np.mean(totals))
    if replicates > 1:
        se = float(np.std(totals, ddof=1) / math.sqrt(replicates))
    else:
        se = 0.0
    return CostEstimate(
        mean=mean,
        std_error=se,
        ci95=(mean - 1.96 * se, mean + 1.96 * se),
        running_mean=float(np.mean(runnings)),
        intervention_mean=float(np.mean(fees)),
        intervention_counts=dict(sorted(counts.items())),
        replicates=replicates,
    )


@dataclass(frozen=True)
class LawStat:
    name: str
    expected: float
    observed: float
    count: int
    std_dev: float


@dataclass(frozen=True)
class LawReport:
    rows: tuple[LawStat, ...]
    replicates: int

    @property
    def max_abs_dev(self) -> float:
        return max((abs(r.std_dev) for r in self.rows), default=0.0)


def _std_dev(observed_count: int, n: int, p: float) -> float:
    if p <= 0.0:
        return 0.0 if observed_count == 0 else math.inf
    if p >= 1.0:
        return 0.0 if observed_count == n else math.inf
    return (observed_count - n * p) / math.sqrt(n * p * (1.0 - p))


def _first_transition(model: PdmpModel, rt, prt: _PolicyRuntime, x0: StatePoint,
                      n0: int, rng: np.random.Generator):
    """First transition with the selected kernel atom index exposed."""
    ts = model.flow.hit_time(x0.mode, x0.zeta)
    r, y_idx = prt.lookup(x0.mode, x0.zeta, n0)
    cap = ts if r > ts else r
    ipath = rt.intensity_path(x0.mode, np.asarray(x0.zeta),
                              cap if math.isfinite(cap) and cap > 0 else max(ts, 1e-12))
    sojourn, cap_hit = _sample_truncated(ipath, cap, rng.random())
    if cap_hit and r < ts:
        return sojourn, INTERVENTION, -1, None
    pre = np.asarray(model.flow.position(x0.mode, np.asarray(x0.zeta), sojourn))
    atoms = model.kernel.atoms_at(x0.mode, pre)
    u = rng.random()
    acc = 0.0
    chosen = len(atoms) - 1
    for j, (_point, prob) in enumerate(atoms):
        acc += prob
        if u < acc:
            chosen = j
            break
    boundary = cap_hit  # cap == ts here
    return sojourn, NATURAL, chosen, boundary


def check_joint_law(x0: StatePoint, n0: int, table: PolicyTable, model: PdmpModel,
                    replicates: int, seed: int, quad_points: int = 257) -> LawReport:
    """Compare empirical first-transition frequencies with the analytic law.

    Events: jump strictly inside the truncation cap, natural boundary hit, and
    intervention; conditional kernel-atom frequencies are checked against the
    hazard-weighted atom probabilities (interior) and the exact kernel
    probabilities (boundary).  Deviations are reported in binomial standard
    errors.
    """
    if replicates < 100:
        raise DomainError("need at least 100 replicates")
    rt = _runtime(model)
    prt = _policy_runtime(table, model)
    ts = model.flow.hit_time(x0.mode, x0.zeta)
    res = policy_query(table, x0, n0, model=model) if n0 > 0 else None
    r = res.r if res is not None else math.inf
    cap = min(ts, r)
    ipath = IntensityPath(model, x0.mode, np.asarray(x0.zeta), ts)
    lam_cap = float(ipath.cumulative(cap)) if cap > 0 else 0.0
    boundary_mass = math.exp(-lam_cap)
    p_interior = 1.0 - boundary_mass
    is_intervention_cap = r < ts
    p_intervention = boundary_mass if is_intervention_cap else 0.0
    p_boundary_nat = 0.0 if is_intervention_cap else boundary_mass

    # Analytic interior atom mix: hazard-weighted kernel probabilities.
    # Atom identity is the index within the matched entry, as sampled.
    atom_probs_interior: dict[int, float] = {}
    n_atoms = 0
    if cap > 0 and p_interior > 0:
        tgrid = np.linspace(0.0, cap, quad_points)
        s, wq = panel_nodes(tgrid)
        pos = np.asarray(model.flow.position(x0.mode, np.asarray(x0.zeta), s))
        if pos.ndim == 1:
            pos = pos[None, :]
        lam_s = np.asarray(ipath.lam(s), dtype=float)
        haz = lam_s * np.exp(-np.asarray(ipath.cumulative(s), dtype=float))
        claimed = np.zeros(s.size, dtype=bool)
        for entry in model.kernel.entries:
            if entry.from_mode != x0.mode:
                continue
            mask = entry.matches_many(pos) & ~claimed
            if not mask.any():
                continue
            for j, atom in enumerate(entry.atoms):
                mass = panel_cumulative(haz * np.where(mask, atom.prob, 0.0), wq)[-1]
                atom_probs_interior[j] = (
                    atom_probs_interior.get(j, 0.0) + float(mass) / p_interior
                )
            claimed |= mask
        n_atoms = len(atom_probs_interior)
    boundary_atoms = model.kernel.atoms_at(
        x0.mode, np.asarray(model.flow.position(x0.mode, np.asarray(x0.zeta), ts))
    )

    interior_count = 0
    boundary_count = 0
    interv_count = 0
    interior_atom_counts = dict.fromkeys(range(n_atoms), 0)
    boundary_atom_counts = dict.fromkeys(range(len(boundary_atoms)), 0)
    for rep in range(replicates):
        rng = np.random.default_rng([seed, rep])
        _sojourn, kind, atom_idx, boundary = _first_transition(
            model, rt, prt, x0, n0, rng
        )
        if kind == INTERVENTION:
            interv_count += 1
        elif boundary:
            boundary_count += 1
            if atom_idx in boundary_atom_counts:
                boundary_atom_counts[atom_idx] += 1
        else:
            interior_count += 1
            if atom_idx in interior_atom_counts:
                interior_atom_counts[atom_idx] += 1

    rows = [
        LawStat("interior_jump", p_interior, interior_count / replicates,
                interior_count, _std_dev(interior_count, replicates, p_interior)),
        LawStat("boundary_natural_jump", p_boundary_nat,
                boundary_count / replicates, boundary_count,
                _std_dev(boundary_count, replicates, p_boundary_nat)),
        LawStat("intervention", p_intervention, interv_count / replicates,
                interv_count, _std_dev(interv_count, replicates, p_intervention)),
    ]
    for j, p in atom_probs_interior.items():
        c = interior_atom_counts.get(j, 0)
        if interior_count > 0:
            rows.append(
                LawStat(f"interior_atom_{j}", p, c / interior_count, c,
                        _std_dev(c, interior_count, p))
            )
    if boundary_count > 0:
        for j, (_point, prob) in enumerate(boundary_atoms):
            c = boundary_atom_counts.get(j, 0)
            rows.append(
                LawStat(f"boundary_atom_{j}", prob, c / boundary_count, c,
                        _std_dev(c, boundary_count, prob))
            )
    return LawReport(tuple(rows), replicates)


@dataclass(frozen=True)
class MarkovGroupResult:
    label: str
    n_observed: int
    n_fresh: int
    ks_statistic: float
    ks_critical_1pct: float

    @property
    def passed(self) -> bool:
        return self.ks_statistic < self.ks_critical_1pct


@dataclass(frozen=True)
class MarkovCheckReport:
    groups: tuple[MarkovGroupResult, ...]
    intervention_index: int
    replicates: int

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.groups)


def _ks_against_fresh(observed: list[float], fresh: list[float]) -> tuple[float, float]:
    a = np.asarray(observed)
    b = np.asarray(fresh)
    stat = float(ks_2samp(a, b, method="asymp").statistic)
    n1, n2 = len(a), len(b)
    crit = KS_CRIT_1PCT * math.sqrt((n1 + n2) / (n1 * n2))
    return stat, crit


def check_intervention_markov(x0: StatePoint, n0: int, table: PolicyTable,
                              model: PdmpModel, replicates: int, seed: int,
                              i: int = 1) -> MarkovCheckReport:
    """Distributional restart check for intervention times.

    Paths are grouped by the class of their first transition.  After a natural
    first jump to z, the shifted intervention time tau_i - S1 must be
    distributed as tau_i of a fresh run from (z, n0-1); after a first-jump
    intervention at time r to restart y, tau_i - r must match tau_{i-1} of a
    fresh run from (y, n0-1).  Groups are compared with a two-sample KS test
    (times can carry atoms and +inf for "never"; ranks handle both).
    """
    if n0 < 1:
        raise DomainError("the restart check needs an initial budget of at least 1")
    horizon = default_horizon(model)
    natural_groups: dict[tuple, list[float]] = {}
    interv_groups: dict[tuple, list[float]] = {}
    for rep in range(replicates):
        rng = np.random.default_rng([seed, rep])
        traj = simulate_controlled(x0, n0, table, model, rng,
                                   horizon=horizon, collect_events=True)
        first = traj.events[0]
        post_key = (first.post.mode,
                    tuple(round(z, 9) for z in first.post.zeta),
                    first.post.budget)
        if first.kind == NATURAL:
            shifted = traj.tau(i) - first.time
            natural_groups.setdefault(post_key, []).append(shifted)
        else:
            shifted = traj.tau(i) - first.time if i >= 1 else math.inf
            interv_groups.setdefault(post_key, []).append(shifted)

    results: list[MarkovGroupResult] = []
    min_group = max(50, replicates // 100)

    def fresh_taus(key, count: int, index: int, salt: int) -> list[float]:
        mode, zeta, budget = key
        out = []
        for rep in range(count):
            rng = np.random.default_rng([seed, salt, rep])
            traj = simulate_controlled(StatePoint(mode, zeta), budget, table, model,
                                       rng, horizon=horizon, collect_events=False)
            out.append(traj.tau(index))
        return out

    salt = 1
    for key, sample in sorted(natural_groups.items()):
        if len(sample) < min_group:
            continue
        fresh = fresh_taus(key, len(sample), i, salt)
        salt += 1
        stat, crit = _ks_against_fresh(sample, fresh)
        results.append(
            MarkovGroupResult(
                label=f"natural-first->mode{key[0]},budget{key[2]}",
                n_observed=len(sample), n_fresh=len(fresh),
                ks_statistic=stat, ks_critical_1pct=crit,
            )
        )
    for key, sample in sorted(interv_groups.items()):
        if len(sample) < min_group:
            continue
        if i == 1:
            # tau_1 - r is identically zero after a first-jump intervention.
            fresh = [0.0] * len(sample)
        else:
            fresh = fresh_taus(key, len(sample), i - 1, salt)
            salt += 1
        stat, crit = _ks_against_fresh(sample, fresh)
        results.append(
            MarkovGroupResult(
                label=f"intervention-first->mode{key[0]},budget{key[2]}",
                n_observed=len(sample), n_fresh=len(fresh),
                ks_statistic=stat, ks_critical_1pct=crit,
            )
        )
    return MarkovCheckReport(tuple(results), i, replicates)
