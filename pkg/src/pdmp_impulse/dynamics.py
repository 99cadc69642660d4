"""Flow evaluation, jump-time sampling and uncontrolled trajectory simulation.

The sojourn law combines a continuous hazard part (inverse-CDF via the
cumulative intensity along the flow) with an atom at the boundary-hit time.
Intensities that are constant along the flow get closed-form handling; smooth
non-constant intensities are integrated through a Chebyshev fit of the
intensity along the flow, with adaptive quadrature backing the one-off
operations.  A per-model runtime caches scalar closures so the Monte Carlo
loops stay tight for one-dimensional models.
"""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import DomainError, NumericalError
from .model import PdmpModel, StatePoint

MAX_JUMPS = 1_000_000


@dataclass(frozen=True)
class JumpEvent:
    """One jump of a simulated path; pre_jump may sit on the boundary."""

    time: float
    sojourn: float
    pre_jump: StatePoint
    post_jump: StatePoint
    boundary_hit: bool


@dataclass(frozen=True)
class PathRecord:
    start: StatePoint
    events: tuple[JumpEvent, ...]
    horizon: float
    discounted_running_cost: float

    def to_json_line(self) -> str:
        payload = {
            "start": [self.start.mode, list(self.start.zeta)],
            "horizon": self.horizon,
            "discounted_running_cost": self.discounted_running_cost,
            "events": [
                {
                    "time": e.time,
                    "sojourn": e.sojourn,
                    "pre": [e.pre_jump.mode, list(e.pre_jump.zeta)],
                    "post": [e.post_jump.mode, list(e.post_jump.zeta)],
                    "boundary_hit": e.boundary_hit,
                }
                for e in self.events
            ],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def default_horizon(model: PdmpModel, tail_tol: float = 1e-6) -> float:
    """Simulation horizon leaving a discounted running-cost tail below tail_tol."""
    c_f = model.costs.running_bound
    if c_f <= 0:
        return 1.0
    return max(1.0, math.log(c_f / (model.discount * tail_tol)) / model.discount)


class IntensityPath:
    """Jump intensity along the flow started at one state.

    Offers vectorized intensity and cumulative-intensity evaluation plus the
    inverse map needed for sojourn sampling.  A constant intensity is handled
    in closed form; otherwise the intensity along the flow is fit with a
    Chebyshev series (escalating degree) whose antiderivative gives the
    cumulative intensity.
    """

    def __init__(self, model: PdmpModel, mode: int, zeta, t_star: float):
        self.mode = mode
        self.zeta = np.asarray(zeta, dtype=float)
        self.t_star = float(t_star)
        expr = model.intensity[mode]
        if expr.is_constant:
            self.const = expr.constant_value()
            self._cheb = None
            self._integ = None
            return
        self.const = None
        if not np.isfinite(t_star):
            raise NumericalError("cannot tabulate intensity along an unbounded flow line")
        flow = model.flow

        def lam_of(s):
            pos = np.asarray(flow.position(mode, self.zeta, s))
            if pos.ndim == 1:
                pos = pos[None, :]
            return model.intensity_along(mode, pos)

        span = max(t_star, 1e-12)
        probe = np.linspace(0.0, span, 101)
        target = lam_of(probe)
        scale = 1.0 + float(np.max(np.abs(target)))
        fit = None
        for deg in (16, 32, 64, 128):
            nodes = np.cos(np.pi * np.arange(deg + 1) / deg)  # Chebyshev extrema
            xs = 0.5 * span * (nodes + 1.0)
            cand = np.polynomial.chebyshev.Chebyshev.fit(
                xs, lam_of(xs), deg, domain=[0.0, span]
            )
            if float(np.max(np.abs(cand(probe) - target))) <= 1e-12 * scale:
                fit = cand
                break
        if fit is None:
            raise NumericalError(
                "intensity is not smooth enough along the flow for series integration"
            )
        self._cheb = fit
        self._integ = fit.integ(lbnd=0.0)

    def lam(self, s):
        if self.const is not None:
            return np.full_like(np.asarray(s, dtype=float), self.const)
        return self._cheb(np.asarray(s, dtype=float))

    def cumulative(self, s):
        if self.const is not None:
            return self.const * np.asarray(s, dtype=float)
        return self._integ(np.asarray(s, dtype=float))

    def invert(self, target: float, t_cap: float) -> float:
        """Smallest s with cumulative(s) == target, bracketed on [0, t_cap]."""
        if self.const is not None:
            return target / self.const
        return float(
            brentq(lambda t: float(self._integ(t)) - target, 0.0, t_cap, xtol=1e-12)
        )


class _SimRuntime:
    """Per-model scalar closures unpacked for tight simulation loops.

    One-dimensional models get pure-float fast paths for the flow, the
    boundary-hit time, truncated sojourn sampling and static-atom kernels;
    everything else falls back to the general vectorized machinery.
    """

    def __init__(self, model: PdmpModel):
        self.model = model
        self.alpha = model.discount
        self.dim = model.dim
        self.d1 = model.dim == 1
        self.lam_const = {
            m: (e.constant_value() if e.is_constant else None)
            for m, e in model.intensity.items()
        }
        self.f_const = {
            m: (e.constant_value() if e.is_constant else None)
            for m, e in model.costs.running.items()
        }
        self.hit1 = {}
        self.pos1 = {}
        if self.d1:
            for m in model.mode_ids:
                self.hit1[m] = self._build_hit1(m)
                self.pos1[m] = self._build_pos1(m)
        # Kernel fast path: one region-free entry of static atoms per mode.
        self.kernel_fast: dict[int, list[tuple[float, int, tuple[float, ...]]] | None] = {}
        for m in model.mode_ids:
            entries = [e for e in model.kernel.entries if e.from_mode == m]
            fast = None
            if len(entries) == 1 and entries[0].region is None and all(
                a.is_static for a in entries[0].atoms
            ):
                acc = 0.0
                fast = []
                for a in entries[0].atoms:
                    acc += a.prob
                    fast.append((acc, a.mode, a.position(np.zeros(model.dim))))
            self.kernel_fast[m] = fast

    def _build_hit1(self, mode: int):
        region = self.model.region(mode)
        lo, hi = region.lower[0], region.upper[0]
        family = self.model.flow.family
        p = self.model.flow.params[mode]
        if family == "constant-drift":
            v = float(p["velocity"][0])
            if v > 0:
                return lambda z: (hi - z) / v
            if v < 0:
                return lambda z: (z - lo) / (-v)
            return lambda z: math.inf
        if family == "linear-decay-to-target":
            g, r = float(p["target"][0]), float(p["rate"][0])
            if g <= lo:
                return lambda z: (z - lo) / r
            if g >= hi:
                return lambda z: (hi - z) / r
            return lambda z: math.inf
        g, r = float(p["target"][0]), float(p["rate"][0])
        if g < lo:
            return lambda z: math.log((z - g) / (lo - g)) / r
        if g > hi:
            return lambda z: math.log((g - z) / (g - hi)) / r
        return lambda z: math.inf

    def _build_pos1(self, mode: int):
        family = self.model.flow.family
        p = self.model.flow.params[mode]
        if family == "constant-drift":
            v = float(p["velocity"][0])
            return lambda z, t: z + v * t
        if family == "linear-decay-to-target":
            g, r = float(p["target"][0]), float(p["rate"][0])

            def pos(z, t):
                delta = z - g
                mag = abs(delta) - r * t
                if mag <= 0.0:
                    return g
                return g + math.copysign(mag, delta)

            return pos
        g, r = float(p["target"][0]), float(p["rate"][0])
        return lambda z, t: g + (z - g) * math.exp(-r * t)

    def intensity_path(self, mode: int, zeta, t_star: float) -> IntensityPath:
        return IntensityPath(self.model, mode, zeta, t_star)

    def sample_trunc1(self, mode: int, z: float, t_cap: float, u: float):
        """Truncated sojourn draw for 1-d states (fast constant-rate branch)."""
        lam = self.lam_const[mode]
        if lam is not None:
            if t_cap <= 0.0:
                return 0.0, True
            if u < math.exp(-lam * t_cap):
                return t_cap, True
            return -math.log(u) / lam, False
        ipath = self.intensity_path(mode, (z,), t_cap if math.isfinite(t_cap) else 1.0)
        return _sample_truncated(ipath, t_cap, u)

    def post_jump1(self, mode: int, z: float, u: float) -> tuple[int, float]:
        fast = self.kernel_fast[mode]
        if fast is not None:
            for acc, a_mode, a_pos in fast:
                if u < acc:
                    return a_mode, a_pos[0]
            return fast[-1][1], fast[-1][2][0]
        atoms = self.model.kernel.atoms_at(mode, (z,))
        acc = 0.0
        for point, prob in atoms:
            acc += prob
            if u < acc:
                return point.mode, point.zeta[0]
        return atoms[-1][0].mode, atoms[-1][0].zeta[0]

    def segment_cost(self, mode: int, zeta, seg: float, t_offset: float) -> float:
        """Discounted running cost of one flow segment, discounted to time 0."""
        if seg <= 0.0:
            return 0.0
        alpha = self.alpha
        f0 = self.f_const[mode]
        if f0 is not None:
            if f0 == 0.0:
                return 0.0
            return math.exp(-alpha * t_offset) * f0 * (1.0 - math.exp(-alpha * seg)) / alpha
        model = self.model

        def integrand(s):
            pos = np.asarray(model.flow.position(mode, zeta, s))
            return math.exp(-alpha * s) * model.costs.running_at(mode, pos)

        value, _err = quad(integrand, 0.0, seg, epsabs=1e-12, epsrel=1e-10, limit=200)
        return math.exp(-alpha * t_offset) * value


_runtime_cache: "weakref.WeakKeyDictionary[PdmpModel, _SimRuntime]" = weakref.WeakKeyDictionary()


def _runtime(model: PdmpModel) -> _SimRuntime:
    rt = _runtime_cache.get(model)
    if rt is None:
        rt = _SimRuntime(model)
        _runtime_cache[model] = rt
    return rt


def flow_at(model: PdmpModel, x: StatePoint, t: float) -> tuple[StatePoint, bool]:
    """Flow position after t; the returned flag marks arrival on the boundary."""
    if t < 0:
        raise DomainError("flow time must be nonnegative")
    ts = hit_time(model, x)
    if t > ts:
        if t - ts > 1e-12 * max(1.0, ts):
            raise DomainError(f"flow time {t} exceeds boundary-hit time {ts}")
        t = ts
    pos = np.asarray(model.flow.position(x.mode, x.zeta, t))
    return StatePoint(x.mode, tuple(float(v) for v in pos)), bool(t >= ts)


def hit_time(model: PdmpModel, x: StatePoint) -> float:
    """Exact time for the flow from x to reach the region boundary."""
    if not model.region(x.mode).contains_interior(x.zeta):
        raise DomainError(f"state {x} is not interior to its region")
    return model.flow.hit_time(x.mode, x.zeta)


def cumulative_intensity(model: PdmpModel, x: StatePoint, t: float) -> float:
    """Integral of the intensity along the flow from x over [0, t]."""
    ts = hit_time(model, x)
    if t < 0 or t > ts + 1e-12 * max(1.0, ts):
        raise DomainError(f"time {t} outside [0, t*(x)] = [0, {ts}]")
    t = min(t, ts)
    expr = model.intensity[x.mode]
    if expr.is_constant:
        return expr.constant_value() * t
    if t == 0.0:
        return 0.0

    def integrand(s):
        pos = np.asarray(model.flow.position(x.mode, x.zeta, s))
        return model.intensity_at(x.mode, pos)

    value, _err = quad(integrand, 0.0, t, epsabs=1e-14, epsrel=1e-10, limit=200)
    return float(value)


def _sample_truncated(ipath: IntensityPath, t_cap: float, u: float) -> tuple[float, bool]:
    """Inverse-CDF sojourn draw truncated at t_cap, with an atom at t_cap.

    Survival is exp(-cumulative(t)) for t < t_cap; the remaining mass
    exp(-cumulative(t_cap)) sits on t_cap itself and is flagged.
    """
    if t_cap <= 0.0:
        return 0.0, True
    cap_mass = math.exp(-float(ipath.cumulative(t_cap)))
    if u < cap_mass:
        return float(t_cap), True
    target = -math.log(u)
    return ipath.invert(target, t_cap), False


def sample_sojourn(model: PdmpModel, x: StatePoint, u: float) -> tuple[float, bool]:
    """Map one uniform draw to a sojourn time; flags a boundary hit."""
    ts = hit_time(model, x)
    ipath = _runtime(model).intensity_path(x.mode, np.asarray(x.zeta), ts)
    return _sample_truncated(ipath, ts, u)


def sample_post_jump(model: PdmpModel, pre: StatePoint, u: float) -> StatePoint:
    """Select the post-jump state by inverse CDF over the kernel atoms at pre."""
    atoms = model.kernel.atoms_at(pre.mode, pre.zeta)
    acc = 0.0
    for point, prob in atoms:
        acc += prob
        if u < acc:
            return point
    return atoms[-1][0]


def simulate_uncontrolled(
    model: PdmpModel,
    x0: StatePoint,
    horizon: float,
    rng: np.random.Generator,
    collect_events: bool = True,
) -> PathRecord:
    """Simulate the process without interventions up to the horizon.

    Each step draws one uniform for the sojourn and, when a jump lands before
    the horizon, one for the post-jump atom.  Segment running costs are exact
    for mode-wise constant running cost, adaptive quadrature otherwise.
    """
    if horizon <= 0:
        raise DomainError("horizon must be positive")
    rt = _runtime(model)
    if rt.d1:
        return _simulate_uncontrolled_1d(rt, x0, horizon, rng, collect_events)
    events: list[JumpEvent] = []
    mode, zeta = x0.mode, np.asarray(x0.zeta, dtype=float)
    elapsed = 0.0
    cost = 0.0
    n_jumps = 0
    while True:
        ts = model.flow.hit_time(mode, zeta)
        ipath = rt.intensity_path(mode, zeta, ts)
        sojourn, hit = _sample_truncated(ipath, ts, rng.random())
        seg = min(sojourn, horizon - elapsed)
        cost += rt.segment_cost(mode, zeta, seg, elapsed)
        if elapsed + sojourn >= horizon:
            break
        pre_pos = np.asarray(model.flow.position(mode, zeta, sojourn))
        pre = StatePoint(mode, tuple(float(v) for v in pre_pos))
        post = sample_post_jump(model, pre, rng.random())
        elapsed += sojourn
        if collect_events:
            events.append(JumpEvent(elapsed, sojourn, pre, post, hit))
        mode, zeta = post.mode, np.asarray(post.zeta, dtype=float)
        n_jumps += 1
        if n_jumps > MAX_JUMPS:
            raise NumericalError(
                f"more than {MAX_JUMPS} jumps before the horizon; "
                "the model looks numerically explosive"
            )
    return PathRecord(x0, tuple(events), horizon, cost)


def _simulate_uncontrolled_1d(rt: _SimRuntime, x0: StatePoint, horizon: float,
                              rng: np.random.Generator,
                              collect_events: bool) -> PathRecord:
    events: list[JumpEvent] = []
    mode, z = x0.mode, x0.zeta[0]
    elapsed = 0.0
    cost = 0.0
    n_jumps = 0
    alpha = rt.alpha
    rand = rng.random
    while True:
        ts = rt.hit1[mode](z)
        sojourn, hit = rt.sample_trunc1(mode, z, ts, rand())
        seg = sojourn if elapsed + sojourn < horizon else horizon - elapsed
        f0 = rt.f_const[mode]
        if f0 is not None:
            if f0 != 0.0 and seg > 0.0:
                cost += math.exp(-alpha * elapsed) * f0 * (1.0 - math.exp(-alpha * seg)) / alpha
        else:
            cost += rt.segment_cost(mode, (z,), seg, elapsed)
        if elapsed + sojourn >= horizon:
            break
        z_pre = rt.pos1[mode](z, sojourn)
        new_mode, new_z = rt.post_jump1(mode, z_pre, rand())
        elapsed += sojourn
        if collect_events:
            events.append(
                JumpEvent(elapsed, sojourn, StatePoint(mode, (z_pre,)),
                          StatePoint(new_mode, (new_z,)), hit)
            )
        mode, z = new_mode, new_z
        n_jumps += 1
        if n_jumps > MAX_JUMPS:
            raise NumericalError(
                f"more than {MAX_JUMPS} jumps before the horizon; "
                "the model looks numerically explosive"
            )
    return PathRecord(x0, tuple(events), horizon, cost)
