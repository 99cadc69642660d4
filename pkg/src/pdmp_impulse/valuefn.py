"""No-impulse cost, approximate value functions, and policy fields.

The no-impulse cost h is the fixed point of the waiting-value operator and is
computed by iterating its grid discretization (a nonnegative linear map, so
the iteration contracts geometrically under discounting).  The budgeted value
functions V_k then follow the single-jump-or-intervention recursion: at every
grid node the strictly cheaper of "wait for the natural jump" and "intervene
at the eps-threshold time" is recorded together with the intervention time
and restart target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ExtrapolationError,
    ModelParseError,
    NumericalError,
    PolicyCoverageError,
    ResourceBudgetError,
)
from .model import PdmpModel, StatePoint
from .operators import (
    BRANCH_INTERVENE,
    BRANCH_WAIT,
    FlowProfile,
    FunctionEvaluable,
    JCurve,
    MinRelocationValue,
    _inf_from_curve,
)

BRANCH_NONE = "no-intervention"


def _cell_weights(axes: tuple[np.ndarray, ...], pos: np.ndarray):
    """Multilinear cell indices and weights for an (n, d) position batch."""
    n, d = pos.shape
    base_idx = []
    frac = []
    for k in range(d):
        axis = axes[k]
        i = np.clip(np.searchsorted(axis, pos[:, k]) - 1, 0, len(axis) - 2)
        w = (pos[:, k] - axis[i]) / (axis[i + 1] - axis[i])
        base_idx.append(i)
        frac.append(w)
    shape = tuple(len(a) for a in axes)
    corners = 2 ** d
    flat = np.empty((n, corners), dtype=np.int64)
    coef = np.empty((n, corners))
    for corner in range(corners):
        ii = []
        cc = np.ones(n)
        for k in range(d):
            bit = (corner >> k) & 1
            ii.append(base_idx[k] + bit)
            cc = cc * (frac[k] if bit else (1.0 - frac[k]))
        flat[:, corner] = np.ravel_multi_index(ii, shape)
        coef[:, corner] = cc
    return flat, coef


class FunctionStore:
    """Evaluable function on the state space: per-mode grids, multilinear
    interpolation, and a sup-norm bound.

    Queries may fall in the thin margin between the outermost nodes and the
    region boundary (linear extrapolation); anything beyond the closure raises
    :class:`ExtrapolationError`.
    """

    def __init__(self, axes: dict[int, tuple[np.ndarray, ...]],
                 values: dict[int, np.ndarray],
                 coverage: dict[int, tuple[tuple[float, ...], tuple[float, ...]]],
                 bound: float | None = None):
        self.axes = {m: tuple(np.asarray(a, dtype=float) for a in ax)
                     for m, ax in axes.items()}
        self.values = {m: np.asarray(v, dtype=float) for m, v in values.items()}
        self.coverage = coverage
        for m, v in self.values.items():
            if not np.all(np.isfinite(v)):
                raise NumericalError(f"non-finite stored values in mode {m}")
        if bound is None:
            bound = max(float(np.max(np.abs(v))) for v in self.values.values())
        self.bound = float(bound)

    def modes(self):
        return tuple(self.axes)

    def node_states(self, mode: int) -> np.ndarray:
        """All grid nodes of one mode as an (n, d) position array."""
        mesh = np.meshgrid(*self.axes[mode], indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def _check_coverage(self, mode: int, pos: np.ndarray):
        if mode not in self.axes:
            raise ExtrapolationError(f"mode {mode} not covered by this store")
        lo, hi = self.coverage[mode]
        slack = [1e-9 * max(1.0, h - l) for l, h in zip(lo, hi)]
        below = pos < (np.asarray(lo) - np.asarray(slack))
        above = pos > (np.asarray(hi) + np.asarray(slack))
        if below.any() or above.any():
            k = int(np.argmax((below | above).any(axis=1)))
            raise ExtrapolationError(
                f"query (mode={mode}, zeta={tuple(pos[k])}) outside grid coverage"
            )

    def eval(self, x: StatePoint) -> float:
        return float(self.eval_many(x.mode, np.asarray(x.zeta)[None, :])[0])

    def eval_many(self, mode: int, pos: np.ndarray) -> np.ndarray:
        pos = np.atleast_2d(np.asarray(pos, dtype=float))
        self._check_coverage(mode, pos)
        axes = self.axes[mode]
        vals = self.values[mode].ravel()
        flat, coef = _cell_weights(axes, pos)
        return (vals[flat] * coef).sum(axis=1)


@dataclass(frozen=True)
class GridSpec:
    """How to lay out per-mode grids: node density per axis, pinned points,
    and the relative margin kept from the region boundary."""

    density: int = 200
    extra_points: dict[int, tuple[tuple[float, ...], ...]] | None = None
    margin_rel: float = 1e-6

    def build_axes(self, model: PdmpModel) -> dict[int, tuple[np.ndarray, ...]]:
        if self.density < 2:
            raise ModelParseError("grid density must be at least 2")
        axes: dict[int, tuple[np.ndarray, ...]] = {}
        pinned: dict[int, list[np.ndarray]] = {m: [] for m in model.mode_ids}
        for y in model.control_set:
            pinned[y.mode].append(np.asarray(y.zeta))
        for entry in model.kernel.entries:
            for atom in entry.atoms:
                if atom.is_static:
                    pos = np.asarray(atom.position(np.zeros(model.dim)))
                    pinned[atom.mode].append(pos)
        if self.extra_points:
            for m, pts in self.extra_points.items():
                for p in pts:
                    pinned[m].append(np.asarray(p, dtype=float))
        for m in model.mode_ids:
            region = model.region(m)
            mode_axes = []
            for k in range(model.dim):
                lo, hi = region.lower[k], region.upper[k]
                delta = self.margin_rel * (hi - lo)
                base = np.linspace(lo + delta, hi - delta, self.density)
                coords = [p[k] for p in pinned[m] if lo < p[k] < hi]
                axis = np.unique(np.concatenate([base, np.asarray(coords)]))
                mode_axes.append(axis)
            axes[m] = tuple(mode_axes)
        return axes

    def coverage(self, model: PdmpModel):
        return {
            m: (model.region(m).lower, model.region(m).upper)
            for m in model.mode_ids
        }


class GridOperator:
    """Discretized waiting-value operator on a fixed grid.

    Applying the operator to a grid function w is the affine map F + B w where
    F holds the per-node discounted running cost to the boundary and B the
    nonnegative weights coupling each node to the interpolation cells of the
    kernel atoms seen along its flow line.
    """

    def __init__(self, model: PdmpModel, axes: dict[int, tuple[np.ndarray, ...]],
                 n_t: int = 512):
        self.model = model
        self.axes = axes
        self.n_t = n_t
        self.mode_offsets: dict[int, int] = {}
        self.mode_shapes: dict[int, tuple[int, ...]] = {}
        offset = 0
        nodes: list[StatePoint] = []
        for m in model.mode_ids:
            shape = tuple(len(a) for a in axes[m])
            self.mode_offsets[m] = offset
            self.mode_shapes[m] = shape
            mesh = np.meshgrid(*axes[m], indexing="ij")
            pos = np.stack([g.ravel() for g in mesh], axis=-1)
            nodes.extend(StatePoint(m, tuple(p)) for p in pos)
            offset += pos.shape[0]
        self.nodes = nodes
        self.size = offset
        self.offset_vec = np.zeros(offset)
        self.matrix = np.zeros((offset, offset))
        self.t_star = np.array([model.flow.hit_time(x.mode, x.zeta) for x in nodes])
        for i, x in enumerate(nodes):
            profile = FlowProfile(model, x, n_t=n_t)
            self.offset_vec[i] = profile.running_grid[-1]
            row = self.matrix[i]
            for rec in profile.atom_records:
                weight = (profile.wq[rec.indices] * profile.damp_s[rec.indices]
                          * profile.lam_s[rec.indices] * rec.prob)
                flat, coef = _cell_weights(axes[rec.mode], rec.positions)
                flat = flat + self.mode_offsets[rec.mode]
                np.add.at(row, flat.ravel(),
                          (coef * weight[:, None]).ravel())
            end_damp = profile.damp_grid[-1]
            for point, prob in profile.end_atoms:
                flat, coef = _cell_weights(
                    axes[point.mode], np.asarray(point.zeta)[None, :]
                )
                flat = flat + self.mode_offsets[point.mode]
                np.add.at(row, flat.ravel(), (coef * end_damp * prob).ravel())

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return self.offset_vec + self.matrix @ vec

    def contraction_bound(self) -> float:
        return float(self.matrix.sum(axis=1).max())

    def split(self, vec: np.ndarray) -> dict[int, np.ndarray]:
        out = {}
        for m in self.model.mode_ids:
            off = self.mode_offsets[m]
            size = int(np.prod(self.mode_shapes[m]))
            out[m] = vec[off : off + size].reshape(self.mode_shapes[m])
        return out

    def to_store(self, vec: np.ndarray, coverage) -> FunctionStore:
        return FunctionStore(self.axes, self.split(vec), coverage)


def compute_h(model: PdmpModel, store_spec: GridSpec | None = None,
              tol: float = 1e-8, max_iter: int = 10_000,
              n_t: int = 512) -> FunctionStore:
    """No-impulse cost on a grid, as the fixed point of the waiting operator.

    Iterates w <- F + B w from zero until the sup-node increment falls below
    tol * (1 + sup |w|); convergence is geometric because the expected jump
    discount is strictly below one.
    """
    spec = store_spec or GridSpec()
    axes = spec.build_axes(model)
    gop = GridOperator(model, axes, n_t=n_t)
    vec = np.zeros(gop.size)
    previous_gap = None
    for _ in range(max_iter):
        nxt = gop.apply(vec)
        gap = float(np.max(np.abs(nxt - vec)))
        vec = nxt
        if gap <= tol * (1.0 + float(np.max(np.abs(vec)))):
            return gop.to_store(vec, spec.coverage(model))
        previous_gap = gap
    estimate = gop.contraction_bound()
    raise NumericalError(
        f"fixed-point iteration did not converge in {max_iter} steps; "
        f"last increment {previous_gap!r}, contraction bound {estimate:.6f}"
    )


@dataclass(eq=False)
class PolicyStage:
    """Arrays over grid nodes for one budget level: branch flag, intervention
    time, restart index, and value."""

    wait: dict[int, np.ndarray]
    r: dict[int, np.ndarray]
    y_index: dict[int, np.ndarray]
    value: dict[int, np.ndarray]


@dataclass(eq=False)
class PolicyTable:
    model_hash: str
    eps: float
    n_max: int
    axes: dict[int, tuple[np.ndarray, ...]]
    coverage: dict[int, tuple[tuple[float, ...], tuple[float, ...]]]
    control_set: tuple[StatePoint, ...]
    h: FunctionStore
    stages: list[PolicyStage] = field(default_factory=list)
    grid_spec: dict | None = None

    def value_store(self, k: int) -> FunctionStore:
        if k == 0:
            return self.h
        stage = self._stage(k)
        return FunctionStore(self.axes, stage.value, self.coverage)

    def value(self, k: int, x: StatePoint) -> float:
        return self.value_store(k).eval(x)

    def _stage(self, k: int) -> PolicyStage:
        if not 1 <= k <= len(self.stages):
            raise PolicyCoverageError(f"no stage {k} in table (n_max={len(self.stages)})")
        return self.stages[k - 1]

    def node_positions(self, mode: int) -> np.ndarray:
        mesh = np.meshgrid(*self.axes[mode], indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)


@dataclass(frozen=True)
class PolicyQueryResult:
    r: float
    y: StatePoint | None
    branch: str


def value_iterate(model: PdmpModel, h: FunctionStore, n_max: int, eps: float,
                  n_t: int = 512, time_tol_rel: float = 1e-6) -> PolicyTable:
    """Run the budgeted jump-or-intervene recursion from the no-impulse cost.

    At each node the waiting value (grid-linear operator) and the refined
    infimum of the intervention-value curve are compared strictly; the
    intervention branch records the eps-threshold time and the restart point
    minimizing relocation cost plus previous-stage value (ties to the lowest
    control index).
    """
    if n_max < 1:
        raise ModelParseError("n_max must be at least 1")
    if eps <= 0:
        raise ModelParseError("eps must be positive")
    gop = GridOperator(model, h.axes, n_t=n_t)
    coverage = h.coverage
    table = PolicyTable(
        model_hash=model.content_hash,
        eps=eps,
        n_max=n_max,
        axes=h.axes,
        coverage=coverage,
        control_set=model.control_set,
        h=h,
    )
    prev_vec = np.concatenate(
        [h.values[m].ravel() for m in model.mode_ids]
    )
    for _k in range(1, n_max + 1):
        wait_vec = gop.apply(prev_vec)
        prev_store = gop.to_store(prev_vec, coverage)
        phi = [prev_store.eval(y) for y in model.control_set]
        reloc = MinRelocationValue(model, phi)
        new_vec = np.empty(gop.size)
        wait_flags = np.zeros(gop.size, dtype=bool)
        r_vec = np.empty(gop.size)
        y_vec = np.zeros(gop.size, dtype=np.int64)
        for i, x in enumerate(gop.nodes):
            profile = FlowProfile(model, x, n_t=n_t)
            curve = JCurve(profile, reloc, prev_store)
            detail = _inf_from_curve(curve, eps, time_tol_rel)
            if wait_vec[i] < detail.inf_value:
                wait_flags[i] = True
                r_here = profile.t_star
                new_vec[i] = wait_vec[i]
            else:
                r_here = detail.r_eps
                new_vec[i] = curve.at(r_here)
            r_vec[i] = r_here
            stop = np.asarray(model.flow.position(x.mode, np.asarray(x.zeta), r_here))
            _val, y_vec[i] = reloc.eval_with_argmin(x.mode, stop)
        table.stages.append(
            PolicyStage(
                wait=gop.split(wait_flags.astype(float)),
                r=gop.split(r_vec),
                y_index=gop.split(y_vec.astype(float)),
                value=gop.split(new_vec),
            )
        )
        prev_vec = new_vec
    # Store booleans/ints with their natural dtypes.
    for stage in table.stages:
        stage.wait = {m: v.astype(bool) for m, v in stage.wait.items()}
        stage.y_index = {m: v.astype(np.int64) for m, v in stage.y_index.items()}
    return table


def policy_query(table: PolicyTable, x: StatePoint, N: int,
                 model: PdmpModel | None = None) -> PolicyQueryResult:
    """Intervention time, restart point and branch for budget N at state x.

    Budget 0 never intervenes.  The branch flag is categorical (nearest
    node); the intervention time interpolates only among equal-branch cell
    corners, and on the waiting branch equals the exact boundary-hit time.
    """
    if N < 0 or N > table.n_max:
        raise PolicyCoverageError(f"budget {N} outside table range 0..{table.n_max}")
    if N == 0:
        return PolicyQueryResult(math.inf, None, BRANCH_NONE)
    if x.mode not in table.axes:
        raise ExtrapolationError(f"mode {x.mode} not covered by the policy table")
    pos = np.asarray(x.zeta, dtype=float)[None, :]
    lo, hi = table.coverage[x.mode]
    slack = [1e-9 * max(1.0, h - l) for l, h in zip(lo, hi)]
    if (pos[0] < np.asarray(lo) - np.asarray(slack)).any() or (
        pos[0] > np.asarray(hi) + np.asarray(slack)
    ).any():
        raise ExtrapolationError(f"query {x} outside grid coverage")
    stage = table._stage(N)
    axes = table.axes[x.mode]
    flat, coef = _cell_weights(axes, pos)
    flat = flat[0]
    coef = coef[0]
    wait_corners = stage.wait[x.mode].ravel()[flat]
    r_corners = stage.r[x.mode].ravel()[flat]
    nearest_slot = int(np.argmax(coef))
    nearest = int(flat[nearest_slot])
    nearest_wait = bool(stage.wait[x.mode].ravel()[nearest])
    same = wait_corners == nearest_wait
    weights = np.where(same, coef, 0.0)
    total = float(weights.sum())
    if total > 0:
        r = float((r_corners * weights).sum() / total)
    else:
        r = float(stage.r[x.mode].ravel()[nearest])
    if nearest_wait:
        if model is not None:
            # Keep the invariant exactly: on the waiting branch the
            # intervention time is the boundary-hit time at the query point.
            r = model.flow.hit_time(x.mode, x.zeta)
        return PolicyQueryResult(float(r), None, BRANCH_WAIT)
    y_idx = int(stage.y_index[x.mode].ravel()[nearest])
    return PolicyQueryResult(float(r), table.control_set[y_idx], BRANCH_INTERVENE)


def eval_Vk_exact(model: PdmpModel, h: FunctionStore, k: int, x: StatePoint,
                  eps: float, n_t: int = 65, k_exact_max: int = 3,
                  budget: int = 50_000) -> float:
    """Budget-k value by direct recursion, bypassing the value grid.

    The previous-stage value is evaluated recursively wherever the kernel
    atoms and control points demand it (memoized on rounded positions); cost
    grows geometrically with k, guarded by an evaluation budget.
    """
    if k > k_exact_max:
        raise ResourceBudgetError(
            f"exact recursion limited to k <= {k_exact_max}; got {k}"
        )
    if eps <= 0:
        raise ModelParseError("eps must be positive")
    memo: dict = {}
    calls = [0]

    def recurse(level: int, point: StatePoint) -> float:
        if level == 0:
            return h.eval(point)
        key = (level, point.mode, tuple(round(z / 1e-9) for z in point.zeta))
        hit = memo.get(key)
        if hit is not None:
            return hit
        calls[0] += 1
        if calls[0] > budget:
            raise ResourceBudgetError(
                f"exact recursion exceeded its evaluation budget ({budget})"
            )
        w = FunctionEvaluable(lambda p: recurse(level - 1, p), bound=np.inf)
        phi = [recurse(level - 1, y) for y in model.control_set]
        reloc = MinRelocationValue(model, phi)
        profile = FlowProfile(model, point, n_t=n_t)
        curve = JCurve(profile, reloc, w)
        detail = _inf_from_curve(curve, eps, 1e-6)
        wait = profile.wait_value(w)
        value = wait if wait < detail.inf_value else curve.at(detail.r_eps)
        memo[key] = value
        return value

    return float(recurse(k, x))
