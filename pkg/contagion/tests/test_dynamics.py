"""
Tests for the integrator: fixed points, regimes on the 1 bank / 1 asset
system, agreement with a brute-force Euler integration and invariances.
"""

import math

import numpy as np
import pytest

from ..dynamics import IntegratorConfig, Verdict, apply_shock, derivatives, run, step
from ..errors import ValidationError
from ..models import ModelParams, ShockSpec, initial_state, single_pair
from ..netgen import GenSpec, generate


def _euler_pair(alpha, beta, shock, t_end, h, every, tau_a=1.0, tau_b=1.0):
    """Scalar explicit Euler on the 1x1 system with E(0) = A(0) = 1, kept every `every` steps."""
    a, p, e = 1.0, 1.0, 1.0 + shock
    da, dp = beta * math.log1p(shock) / tau_b, 0.0
    out = {}
    n = int(round(t_end / h))
    for k in range(n + 1):
        if k % every == 0:
            out[k // every] = (a, da, p, dp, e)
        de = a * dp
        dda = (beta * de / e * a - da) / tau_b
        ddp = (alpha * da / a * p - dp) / tau_a
        a, da, p, dp, e = a + h * da, da + h * dda, p + h * dp, dp + h * ddp, e + h * de
    return out


def test_zero_shock_is_a_fixed_point():
    """Without a shock nothing moves, however long the run."""
    net = generate(GenSpec(n_banks=20, n_assets=4, seed=11))
    params = ModelParams(0.8, 0.8)
    cfg = IntegratorConfig(dt=0.05, t_max=100.0, hold_steps=10 ** 9)
    traj = run(net, params, ShockSpec(net.bank_ids[0], 0.0), cfg)
    assert traj.verdict == Verdict.TIMEOUT
    assert traj.final.t == pytest.approx(100.0)
    start = initial_state(net)
    np.testing.assert_allclose(traj.final.a, start.a, rtol=1e-10)
    np.testing.assert_allclose(traj.final.p, start.p, rtol=1e-10)
    np.testing.assert_allclose(traj.final.e, start.e, rtol=1e-10)
    assert not traj.failed_banks


def test_zero_shock_equilibrium_is_immediate():
    """With the default hold window a quiet system is classified at once."""
    traj = run(single_pair(), ModelParams(0.5, 0.5), ShockSpec("B1", 0.0))
    assert traj.verdict == Verdict.EQUILIBRIUM
    assert traj.relaxation_time == 0.0


def test_shock_impulse():
    """Equity jumps by (1+s) and holdings velocity by β·A·ln(1+s)/τ_B."""
    net = single_pair()
    params = ModelParams(0.5, 0.8, tau_b=2.0)
    state = apply_shock(initial_state(net), ShockSpec("B1", -0.1), params, net)
    assert state.e[0] == pytest.approx(0.9)
    assert state.da[0, 0] == pytest.approx(0.8 * math.log(0.9) / 2.0)
    assert state.p[0] == 1.0 and state.a[0, 0] == 1.0


def test_derivatives_bookkeeping():
    """∂tE equals Σ A·∂tp for live banks and vanishes for failed ones."""
    rng = np.random.default_rng(0)
    a = rng.random((4, 3))
    da = rng.normal(size=(4, 3))
    p = rng.random(3) + 0.5
    dp = rng.normal(size=3)
    e = rng.random(4) + 0.1
    active = np.array([True, True, False, True])
    _, dda, _, _, de = derivatives(a, da, p, dp, e, active, ModelParams(0.5, 0.5), 1e-12, 1e-12)
    np.testing.assert_allclose(de[active], (a @ dp)[active], rtol=1e-15)
    assert de[2] == 0.0
    assert not dda[2].any()


def test_stable_and_unstable_pair():
    """Well below γ = 0.9 the pair settles, well above it the price crashes."""
    net = single_pair()
    cfg = IntegratorConfig(dt=0.02, t_max=400.0)
    for alpha, beta in [(0.5, 0.5), (0.7, 0.7), (0.5, 1.0), (1.0, 0.5)]:
        traj = run(net, ModelParams(alpha, beta), ShockSpec("B1", -0.1), cfg)
        assert traj.verdict == Verdict.EQUILIBRIUM, (alpha, beta)
        assert 0.0 < traj.final.p[0] < 1.0
    for alpha, beta in [(1.5, 1.5), (3.0, 0.75), (0.75, 3.0)]:
        traj = run(net, ModelParams(alpha, beta), ShockSpec("B1", -0.1), cfg)
        assert traj.verdict == Verdict.CRASH, (alpha, beta)


def test_positive_shock_bubble():
    """A positive shock in the unstable regime inflates the price past the cap."""
    net = single_pair()
    traj = run(net, ModelParams(1.5, 1.5), ShockSpec("B1", 0.1), IntegratorConfig(t_max=400.0))
    assert traj.verdict == Verdict.BUBBLE
    stable = run(net, ModelParams(0.5, 0.5), ShockSpec("B1", 0.1), IntegratorConfig(t_max=400.0))
    assert stable.verdict == Verdict.EQUILIBRIUM
    assert stable.final.p[0] > 1.0


def test_relaxation_slows_toward_transition():
    """Relaxation time grows along α = β as γ approaches the transition."""
    net = single_pair()
    cfg = IntegratorConfig(dt=0.05, t_max=5000.0)
    times = []
    for g in (0.5, 0.7, 0.8, 0.9):
        traj = run(net, ModelParams(g, g), ShockSpec("B1", -0.1), cfg)
        assert traj.verdict == Verdict.EQUILIBRIUM
        times.append(traj.relaxation_time)
    assert times == sorted(times)
    assert times[-1] > 1.5 * times[0]


@pytest.mark.parametrize("alpha,beta", [(0.5, 0.5), (1.5, 1.5), (-0.5, -0.5), (2.0, -0.5)])
def test_matches_fine_euler_integration(alpha, beta):
    """RK4 agrees with a fine explicit Euler integration until a clamp or crash."""
    dt, t_end = 0.02, 20.0
    traj = run(single_pair(), ModelParams(alpha, beta), ShockSpec("B1", -0.1),
               IntegratorConfig(dt=dt, t_max=t_end, hold_steps=10 ** 9))
    stride = 50
    reference = _euler_pair(alpha, beta, -0.1, t_end, dt / 1000, 1000 * stride)
    compared = 0
    for k, state in enumerate(traj.samples):
        if state.failed.any() or state.p[0] < 0.3 or state.a[0, 0] < 0.3:
            break
        if k % stride:
            continue
        a, da, p, dp, e = reference[k // stride]
        assert state.t == pytest.approx(k * dt)
        assert state.a[0, 0] == pytest.approx(a, rel=1e-4, abs=1e-6)
        assert state.p[0] == pytest.approx(p, rel=1e-4, abs=1e-6)
        assert state.e[0] == pytest.approx(e, rel=1e-4, abs=1e-6)
        compared += 1
    assert compared >= 3


@pytest.mark.parametrize("c", [0.5, 2.0, 10.0])
def test_time_unit_invariance(c):
    """Scaling τ, dt and t_max together rescales time and nothing else."""
    net = generate(GenSpec(n_banks=10, n_assets=3, seed=5))
    params = ModelParams(0.6, 0.6)
    cfg = IntegratorConfig(dt=0.05, t_max=30.0)
    shock = ShockSpec(net.bank_ids[0], -0.1)
    base = run(net, params, shock, cfg)
    scaled = run(net, params.scaled(c), shock, cfg.scaled(c))
    assert len(base.samples) == len(scaled.samples)
    assert scaled.verdict == base.verdict
    for s0, s1 in zip(base.samples[::25], scaled.samples[::25]):
        assert s1.t == pytest.approx(c * s0.t, rel=1e-9)
        np.testing.assert_allclose(s1.p, s0.p, rtol=1e-9, atol=1e-14)
        np.testing.assert_allclose(s1.a, s0.a, rtol=1e-9, atol=1e-14)
        np.testing.assert_allclose(s1.e, s0.e, rtol=1e-9, atol=1e-14)


def test_halving_dt_converges():
    """Halving dt changes the state at a fixed time only marginally."""
    net = single_pair()
    params = ModelParams(0.6, 0.6)
    shock = ShockSpec("B1", -0.1)
    coarse = run(net, params, shock, IntegratorConfig(dt=0.02, t_max=5.0, hold_steps=10 ** 9))
    fine = run(net, params, shock, IntegratorConfig(dt=0.01, t_max=5.0, hold_steps=10 ** 9))
    assert fine.final.t == pytest.approx(coarse.final.t)
    assert fine.final.p[0] == pytest.approx(coarse.final.p[0], rel=1e-6)
    assert fine.final.e[0] == pytest.approx(coarse.final.e[0], rel=1e-6)


def test_failure_is_monotone_in_shock_size():
    """A leveraged bank that fails under a shock also fails under a larger one."""
    net = single_pair(holding=1.0, equity=0.5)
    params = ModelParams(0.5, 0.5)
    cfg = IntegratorConfig(t_max=400.0)
    failed, crashed = [], []
    for s in (-0.05, -0.2, -0.4, -0.6, -0.8, -0.9):
        traj = run(net, params, ShockSpec("B1", s), cfg)
        failed.append(bool(traj.failed_banks))
        crashed.append(traj.verdict == Verdict.CRASH)
    assert not failed[0] and failed[-1]
    assert failed == sorted(failed)
    assert crashed == sorted(crashed)


def test_failure_is_absorbing():
    """A failed bank keeps zero equity and stops trading while prices settle."""
    net = single_pair(holding=1.0, equity=0.05)
    traj = run(net, ModelParams(1.5, 0.5), ShockSpec("B1", -0.5), IntegratorConfig(t_max=400.0))
    assert [b for b, _ in traj.failed_banks] == ["B1"]
    t_fail = traj.failed_banks[0][1]
    after = [s for s in traj.samples if s.t >= t_fail]
    assert len(after) > 10
    for s in after:
        assert s.failed[0] and s.e[0] == 0.0
        assert s.da[0, 0] == 0.0 and s.a[0, 0] == after[0].a[0, 0]
    assert traj.verdict == Verdict.EQUILIBRIUM
    assert 0.0 < traj.final.p[0] < 1.0


def test_tiny_equity_fails_without_blowing_up():
    """Equity far below one step's loss is caught as a failure, not integrated through zero."""
    net = generate(GenSpec(n_banks=3, n_assets=2, sparsity=1.0, seed=4))
    trigger = ShockSpec(net.bank_ids[int(np.argmax(net.holdings()))], -0.1)
    target = next(i for i, b in enumerate(net.bank_ids) if b != trigger.target_bank)
    cfg = IntegratorConfig(dt=0.1, t_max=400.0, hold_steps=20)
    for multiple in (1e-8, 1e-6, 1e-4):
        trial = net.with_equity(target, multiple * net.banks[target].equity0)
        traj = run(trial, ModelParams(0.5, 0.5), trigger, cfg)
        assert net.bank_ids[target] in [b for b, _ in traj.failed_banks]
        assert 0.0 <= traj.value_ratio() <= 1.0
        for s in traj.samples:
            assert np.all(np.isfinite(s.a)) and np.all(s.e >= 0.0)
            assert s.holdings_value() <= traj.samples[0].holdings_value() * (1.0 + 1e-12)


@pytest.mark.parametrize("gamma", [0.7, 0.85, 0.95, 1.2])
def test_small_disturbance_growth_rate(gamma):
    """
    After a 10% equity loss a small disturbance grows at -1 + sqrt(γ·A·p/E),
    so it decays below γ = 0.9 and grows above.
    """
    kick = -1e-6
    net = single_pair(holding=1.0, equity=0.9)
    g = math.sqrt(gamma)
    traj = run(net, ModelParams(g, g), ShockSpec("B1", kick),
               IntegratorConfig(dt=0.02, t_max=15.0, hold_steps=10 ** 9))
    early, late = traj.samples[250], traj.samples[750]
    assert early.t == pytest.approx(5.0) and late.t == pytest.approx(15.0)
    measured = math.log(abs(late.dp[0]) / abs(early.dp[0])) / (late.t - early.t)
    expected = -1.0 + math.sqrt(gamma / (0.9 * (1.0 + kick)))
    assert measured == pytest.approx(expected, abs=1e-4)
    assert (measured > 0) == (gamma > 0.9)


def test_small_disturbance_relaxation_diverges():
    """Along α = β the settling time of a small disturbance grows tenfold toward γ = 0.9."""
    net = single_pair(holding=1.0, equity=0.9)
    cfg = IntegratorConfig(dt=0.02, t_max=400.0)
    times = []
    for gamma in (0.25, 0.36, 0.49, 0.64, 0.81):
        g = math.sqrt(gamma)
        traj = run(net, ModelParams(g, g), ShockSpec("B1", -1e-7), cfg)
        assert traj.verdict == Verdict.EQUILIBRIUM
        times.append(traj.relaxation_time)
    assert all(b > a for a, b in zip(times, times[1:]))
    assert times[-1] > 10.0 * times[0]


def test_non_negativity():
    """Holdings and prices never go below zero."""
    net = generate(GenSpec(n_banks=30, n_assets=5, seed=2))
    traj = run(net, ModelParams(1.5, 1.5), ShockSpec(net.bank_ids[3], -0.1),
               IntegratorConfig(dt=0.05, t_max=200.0))
    for state in traj.samples:
        assert (state.a >= 0).all() and (state.p >= 0).all() and (state.e >= 0).all()


def test_step_matches_run():
    """Stepping by hand reproduces the samples of run."""
    net = single_pair()
    params = ModelParams(0.6, 0.6)
    shock = ShockSpec("B1", -0.1)
    cfg = IntegratorConfig(dt=0.05, t_max=1.0, hold_steps=10 ** 9)
    traj = run(net, params, shock, cfg)
    state = apply_shock(initial_state(net), shock, params, net)
    for _ in range(10):
        state = step(state, params, cfg)
    assert state.t == pytest.approx(traj.samples[10].t)
    np.testing.assert_allclose(state.p, traj.samples[10].p, rtol=1e-15)
    np.testing.assert_allclose(state.a, traj.samples[10].a, rtol=1e-15)


def test_sequential_shocks_continue_from_state():
    """A second run can start where the first one ended."""
    net = single_pair()
    params = ModelParams(0.5, 0.5)
    cfg = IntegratorConfig(t_max=400.0)
    first = run(net, params, ShockSpec("B1", -0.1), cfg)
    second = run(net, params, ShockSpec("B1", -0.1), cfg, state=first.final)
    assert second.samples[0].t == first.final.t
    assert second.final.p[0] < first.final.p[0]


def test_config_checks():
    """dt must stay below the response times; settings must be positive."""
    with pytest.raises(ValidationError):
        run(single_pair(), ModelParams(0.5, 0.5), None, IntegratorConfig(dt=1.5))
    with pytest.raises(ValidationError):
        IntegratorConfig(dt=-0.1)
    cfg = IntegratorConfig.for_params(ModelParams(0.5, 0.5, tau_a=2.0, tau_b=4.0))
    assert cfg.dt == pytest.approx(0.04)
    assert cfg.t_max == pytest.approx(800.0)
    assert cfg.n_steps == 20000


def test_shocking_failed_bank_rejected():
    """Shocking a bank that has already failed is an error."""
    net = single_pair()
    state = initial_state(net).evolve(e=np.zeros(1), failed=np.ones(1, dtype=bool))
    with pytest.raises(ValidationError):
        apply_shock(state, ShockSpec("B1", -0.1), ModelParams(0.5, 0.5), net)
