import math

import numpy as np
import pytest
from scipy import stats

from pdmp_impulse.dynamics import (
    cumulative_intensity,
    default_horizon,
    flow_at,
    hit_time,
    sample_post_jump,
    sample_sojourn,
    simulate_uncontrolled,
)
from pdmp_impulse.errors import DomainError, NumericalError
from pdmp_impulse.model import as_state, load_model

from conftest import rm1_doc


# ---------------------------------------------------------------------------
# Flow and hit times


def test_flow_at_closed_form(rm1):
    point, hit = flow_at(rm1, as_state(1, 2.0), 1.0)
    assert point == as_state(1, 1.0)
    assert not hit


def test_flow_at_identity_at_zero(rm1):
    point, hit = flow_at(rm1, as_state(1, 2.0), 0.0)
    assert point == as_state(1, 2.0)
    assert not hit


def test_flow_at_boundary_flagged(rm1):
    point, hit = flow_at(rm1, as_state(2, 4.0), 2.0)
    assert point.mode == 2
    assert point.zeta[0] == pytest.approx(0.0, abs=1e-14)
    assert hit


def test_flow_at_beyond_hit_time_rejected(rm1):
    with pytest.raises(DomainError):
        flow_at(rm1, as_state(1, 2.0), 2.5)


def _hit_time_bisection_oracle(model, x, hi):
    """Independent oracle: bisection on interiority of the flow position."""
    region = model.region(x.mode)
    lo, t = 0.0, hi
    for _ in range(200):
        mid = 0.5 * (lo + t)
        pos = np.asarray(model.flow.position(x.mode, x.zeta, mid))
        if region.contains_interior(pos):
            lo = mid
        else:
            t = mid
    return t


def test_hit_time_matches_bisection_oracle(rm1):
    for x in (as_state(1, 2.0), as_state(2, 4.0), as_state(1, 9.5)):
        direct = hit_time(rm1, x)
        oracle = _hit_time_bisection_oracle(rm1, x, 12.0)
        assert direct == pytest.approx(oracle, abs=1e-10)
    assert hit_time(rm1, as_state(1, 2.0)) == pytest.approx(2.0)
    assert hit_time(rm1, as_state(2, 4.0)) == pytest.approx(2.0)


def test_hit_time_near_boundary_not_clamped(rm1):
    assert hit_time(rm1, as_state(1, 1e-9)) == pytest.approx(1e-9, rel=1e-12)


def test_hit_time_requires_interior(rm1):
    with pytest.raises(DomainError):
        hit_time(rm1, as_state(1, 0.0))


@pytest.mark.parametrize("family,params", [
    ("constant-drift", {"velocity": [-0.7]}),
    ("linear-decay-to-target", {"rate": [0.8], "target": [-2.0]}),
    ("exponential-decay-to-target", {"rate": [0.5], "target": [-1.0]}),
])
def test_flow_semigroup_and_hit_consistency(family, params):
    doc = rm1_doc()
    doc["modes"] = [{"id": 1, "bounds": [[0.0, 10.0]]}]
    doc["flow"] = {"family": family, "params": {"1": params}}
    doc["intensity"] = {"1": "0.3"}
    doc["intensity_bound"] = 0.3
    doc["kernel"] = [{"from_mode": 1, "region": None,
                      "atoms": [{"mode": 1, "zeta": ["5.0"], "prob": 1.0}]}]
    doc["costs"]["running"] = {"1": "1.0"}
    doc["control_set"] = [{"mode": 1, "zeta": [8.0]}]
    doc["t_star_bound"] = 40.0
    model = load_model(doc)
    rng = np.random.default_rng(7)
    for _ in range(50):
        z = 0.1 + 9.8 * rng.random()
        x = as_state(1, z)
        ts = hit_time(model, x)
        t = rng.random() * 0.6 * ts
        s = rng.random() * (ts - t) * 0.999
        once, _ = flow_at(model, x, t)
        twice, _ = flow_at(model, once, s)
        direct, _ = flow_at(model, x, t + s)
        assert twice.zeta[0] == pytest.approx(direct.zeta[0], abs=1e-12)
        end, hit = flow_at(model, x, ts)
        assert hit
        assert min(abs(end.zeta[0] - 0.0), abs(end.zeta[0] - 10.0)) < 1e-10


# ---------------------------------------------------------------------------
# Cumulative intensity


def test_cumulative_intensity_constant_rate(rm1):
    assert cumulative_intensity(rm1, as_state(1, 2.0), 1.0) == pytest.approx(0.5)
    assert cumulative_intensity(rm1, as_state(2, 4.0), 2.0) == pytest.approx(2.0)
    assert cumulative_intensity(rm1, as_state(1, 2.0), 0.0) == 0.0


def test_cumulative_intensity_domain(rm1):
    with pytest.raises(DomainError):
        cumulative_intensity(rm1, as_state(1, 2.0), 2.5)
    with pytest.raises(DomainError):
        cumulative_intensity(rm1, as_state(1, 2.0), -0.1)


def affine_intensity_model():
    doc = rm1_doc()
    doc["intensity"] = {"1": "0.1 + 0.05*zeta[0]", "2": "1.0"}
    doc["intensity_bound"] = 1.0
    return load_model(doc)


def test_cumulative_intensity_affine_closed_form():
    model = affine_intensity_model()
    z0, t = 6.0, 3.0
    # Drift -1: rate along flow is 0.1 + 0.05*(z0 - s).
    hand = 0.1 * t + 0.05 * (z0 * t - 0.5 * t * t)
    got = cumulative_intensity(model, as_state(1, z0), t)
    assert got == pytest.approx(hand, rel=1e-10)


def test_sojourn_inversion_consistency_nonconstant_rate():
    model = affine_intensity_model()
    x = as_state(1, 6.0)
    for u in (0.9, 0.7, 0.5):
        s, hit = sample_sojourn(model, x, u)
        assert not hit
        assert cumulative_intensity(model, x, s) == pytest.approx(-math.log(u), abs=1e-9)


# ---------------------------------------------------------------------------
# Sojourn sampling


def test_sample_sojourn_boundary_atom(rm1):
    s, hit = sample_sojourn(rm1, as_state(1, 2.0), math.exp(-1.0) - 1e-6)
    assert (s, hit) == (2.0, True)


def test_sample_sojourn_interior_root(rm1):
    s, hit = sample_sojourn(rm1, as_state(1, 2.0), math.exp(-0.25))
    assert not hit
    assert s == pytest.approx(0.5, abs=1e-12)


def test_sample_sojourn_near_one_is_tiny(rm1):
    s, hit = sample_sojourn(rm1, as_state(1, 2.0), 1.0 - 1e-12)
    assert not hit
    assert 0.0 < s < 1e-11


def test_sampling_law_kolmogorov_smirnov(rm1):
    x = as_state(1, 2.0)
    ts = hit_time(rm1, x)
    lam = 0.5
    n = 20_000
    rng = np.random.default_rng(123)
    draws = [sample_sojourn(rm1, x, rng.random()) for _ in range(n)]
    interior = np.array([s for s, hit in draws if not hit])
    n_boundary = sum(hit for _s, hit in draws)
    # Boundary atom frequency vs survival mass.
    p_atom = math.exp(-lam * ts)
    se = math.sqrt(p_atom * (1 - p_atom) / n)
    assert abs(n_boundary / n - p_atom) < 4 * se
    # Interior draws follow the truncated survival law.
    denom = 1.0 - p_atom

    def trunc_cdf(t):
        return (1.0 - np.exp(-lam * np.asarray(t))) / denom

    stat = stats.kstest(interior, trunc_cdf).statistic
    crit = math.sqrt(-0.5 * math.log(0.005)) / math.sqrt(len(interior))
    assert stat < crit


# ---------------------------------------------------------------------------
# Post-jump sampling


def test_sample_post_jump_single_atom(rm1):
    assert sample_post_jump(rm1, as_state(1, 1.5), 0.99) == as_state(2, 5.0)
    # Boundary pre-jump point of mode 2 maps to the mode-1 atom.
    assert sample_post_jump(rm1, as_state(2, 0.0), 0.01) == as_state(1, 5.0)


def test_sample_post_jump_inverse_cdf_rule():
    doc = rm1_doc()
    doc["kernel"][0]["atoms"] = [
        {"mode": 2, "zeta": ["5.0"], "prob": 0.3},
        {"mode": 2, "zeta": ["7.0"], "prob": 0.7},
    ]
    model = load_model(doc)
    assert sample_post_jump(model, as_state(1, 1.0), 0.25) == as_state(2, 5.0)
    assert sample_post_jump(model, as_state(1, 1.0), 0.30) == as_state(2, 7.0)
    assert sample_post_jump(model, as_state(1, 1.0), 0.999999) == as_state(2, 7.0)


# ---------------------------------------------------------------------------
# Uncontrolled simulation


def test_zero_running_cost_paths_cost_nothing(rm1_zero_running):
    rng = np.random.default_rng(5)
    rec = simulate_uncontrolled(rm1_zero_running, as_state(1, 2.0), 30.0, rng)
    assert rec.discounted_running_cost == 0.0


def test_short_horizon_mostly_jump_free(rm1):
    n = 4000
    horizon = 0.01
    zero_jumps = 0
    for rep in range(n):
        rng = np.random.default_rng([11, rep])
        rec = simulate_uncontrolled(rm1, as_state(1, 2.0), horizon, rng)
        zero_jumps += not rec.events
    p = math.exp(-0.5 * horizon)
    se = math.sqrt(p * (1 - p) / n)
    assert zero_jumps / n > p - 4 * se


def test_path_structure_and_cost_bound(rm1):
    horizon = default_horizon(rm1)
    for rep in range(40):
        rng = np.random.default_rng([17, rep])
        rec = simulate_uncontrolled(rm1, as_state(1, 7.0), horizon, rng)
        assert rec.discounted_running_cost <= rm1.costs.running_bound / rm1.discount
        times = [e.time for e in rec.events]
        assert times == sorted(times)
        prev = rec.start
        for event in rec.events:
            ts_prev = hit_time(rm1, prev)
            assert event.sojourn <= ts_prev + 1e-12
            assert event.boundary_hit == (abs(event.sojourn - ts_prev) < 1e-12)
            assert rm1.region(event.post_jump.mode).contains_interior(
                event.post_jump.zeta
            )
            prev = event.post_jump


def test_uncontrolled_cost_matches_renewal_oracle(rm1, rm1_h):
    """The mean discounted running cost must match the fixed-point value."""
    x0 = as_state(1, 2.0)
    horizon = default_horizon(rm1)
    n = 20_000
    costs = np.empty(n)
    for rep in range(n):
        rng = np.random.default_rng([29, rep])
        costs[rep] = simulate_uncontrolled(
            rm1, x0, horizon, rng, collect_events=False
        ).discounted_running_cost
    mean = costs.mean()
    se = costs.std(ddof=1) / math.sqrt(n)
    assert abs(mean - rm1_h.eval(x0)) < 4 * se


def test_default_horizon_tail_rule(rm1):
    h = default_horizon(rm1, tail_tol=1e-6)
    tail = math.exp(-rm1.discount * h) * rm1.costs.running_bound / rm1.discount
    assert tail <= 1e-6 * 1.0000001


def test_explosion_guard():
    doc = rm1_doc()
    # Huge constant intensity forces enormous jump counts per unit time.
    doc["intensity"] = {"1": "200000.0", "2": "200000.0"}
    doc["intensity_bound"] = 200000.0
    model = load_model(doc)
    rng = np.random.default_rng(3)
    with pytest.raises(NumericalError, match="jumps"):
        simulate_uncontrolled(model, as_state(1, 2.0), 50.0, rng)


def test_json_lines_round_trip(rm1):
    import json as _json

    rng = np.random.default_rng(8)
    rec = simulate_uncontrolled(rm1, as_state(1, 2.0), 5.0, rng)
    payload = _json.loads(rec.to_json_line())
    assert payload["start"] == [1, [2.0]]
    assert len(payload["events"]) == len(rec.events)
