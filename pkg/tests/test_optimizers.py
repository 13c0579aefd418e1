"""GRAPE, GOAT, and Krotov against finite differences and each other."""

import numpy as np
import pytest

from optpulse.dynamics import ControlSignal, evolve_continuous, piecewise_propagator
from optpulse.errors import OptimizationError
from optpulse.model import SystemModel
from optpulse.optimize import (
    ControlProblem,
    GaussianTerm,
    GoatEnvelopeSpec,
    goat_optimize,
    grape_gradient,
    grape_optimize,
    infidelity,
    krotov_optimize,
)
from optpulse.optimize.goat import _AugmentedIntegrator, default_envelope_spec, parse_control_func
from optpulse.optimize.problem import initial_amplitudes

X = np.array([[0, 1], [1, 0]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


def x_problem(**kw):
    model = SystemModel(n_qubits=1, dt=0.2, control=(("dx", "X0"),))
    defaults = dict(model=model, target_u=X, max_time=10.0)
    defaults.update(kw)
    return ControlProblem(**defaults)


def h_problem(**kw):
    model = SystemModel(
        n_qubits=1,
        dt=0.2,
        drift=((1.0, "Z0"),),
        control=(("dx", "X0"), ("dy", "Y0")),
    )
    defaults = dict(model=model, target_u=H, max_time=10.0)
    defaults.update(kw)
    return ControlProblem(**defaults)


def random_problem(rng, n_channels=2, n_samples=8):
    ops = ["X0", "Y0", "Z0"]
    model = SystemModel(
        n_qubits=1,
        dt=rng.uniform(0.05, 0.3),
        drift=((rng.uniform(-1, 1), "Z0"),),
        control=tuple((f"c{i}", ops[i]) for i in range(n_channels)),
    )
    # random unitary target via QR
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    q, r = np.linalg.qr(a)
    q = q @ np.diag(np.diag(r) / np.abs(np.diag(r)))
    return ControlProblem(
        model=model, target_u=q, max_time=n_samples * model.dt, n_samples=n_samples
    )


# -------------------------------------------------------- problem plumbing


def test_infidelity_identities():
    assert infidelity(X, X) == pytest.approx(0.0, abs=1e-15)
    assert infidelity(np.exp(0.7j) * X, X) == pytest.approx(0.0, abs=1e-12)
    assert infidelity(X, np.eye(2)) == pytest.approx(1.0)  # traceless overlap


def test_problem_rejects_non_unitary_target():
    with pytest.raises(OptimizationError):
        x_problem(target_u=np.array([[1.0, 0.0], [0.0, 2.0]]))


def test_problem_rejects_bad_horizon():
    with pytest.raises(OptimizationError):
        x_problem(max_time=10.0, n_samples=37)  # 10 / 0.2 = 50


def test_problem_deduces_sample_count():
    p = x_problem()
    assert p.n_samples == 50 and p.dt == pytest.approx(0.2)


def test_initial_amplitude_policies():
    p = x_problem(seed=42)
    r1 = initial_amplitudes(p, "random")
    r2 = initial_amplitudes(p, "random")
    assert np.array_equal(r1, r2)
    assert r1.shape == (1, 50)
    assert np.max(np.abs(r1)) <= 0.1
    sq = initial_amplitudes(x_problem(amplitude_bound=2.0), "square")
    assert np.all(sq == 0.2)  # 0.1 * bound
    assert np.all(initial_amplitudes(p, "zero") == 0.0)


def test_explicit_initial_guess_wins():
    guess = {"dx": np.linspace(-0.1, 0.1, 50)}
    p = x_problem(initial_guess=guess)
    amps = initial_amplitudes(p, "random")
    assert np.allclose(amps[0], guess["dx"])
    with pytest.raises(OptimizationError):
        initial_amplitudes(x_problem(initial_guess={"dx": np.zeros(3)}), "random")


# ------------------------------------------------------------------- GRAPE


def test_grape_gradient_matches_finite_differences():
    # independent route: FD of infidelity(piecewise_propagator) per sample
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(3):
        p = random_problem(rng)
        amps = rng.uniform(-0.5, 0.5, size=(2, p.n_samples))
        grad = grape_gradient(p, amps)

        def loss(a):
            sig = ControlSignal.from_samples(
                {ch: a[i] for i, ch in enumerate(p.model.channels)}, p.dt
            )
            return infidelity(piecewise_propagator(p.model, sig), p.target_u)

        fd = np.zeros_like(amps)
        for i in range(amps.shape[0]):
            for k in range(amps.shape[1]):
                up, dn = amps.copy(), amps.copy()
                up[i, k] += h
                dn[i, k] -= h
                fd[i, k] = (loss(up) - loss(dn)) / (2 * h)
        denom = max(np.max(np.abs(fd)), 1e-12)
        assert np.max(np.abs(grad - fd)) / denom <= 1e-5


def test_grape_reaches_x_gate():
    res = grape_optimize(x_problem(seed=1, tol=1e-6))
    assert res.status == "converged"
    assert res.final_infidelity <= 1e-6
    sig = ControlSignal.from_samples(res.synthesized_samples, res.dt)
    u = piecewise_propagator(x_problem().model, sig)
    assert infidelity(u, X) == pytest.approx(res.final_infidelity, abs=1e-12)


def test_grape_trace_is_non_increasing():
    res = grape_optimize(h_problem(seed=3, tol=1e-5))
    trace = np.asarray(res.trace)
    assert np.all(np.diff(trace) <= 1e-12)
    assert trace[0] > trace[-1]


def test_grape_respects_amplitude_bound():
    res = grape_optimize(x_problem(seed=1, amplitude_bound=0.05, max_iters=50))
    for arr in res.synthesized_samples.values():
        assert np.max(np.abs(arr)) <= 0.05 + 1e-15


def test_grape_converged_start_returns_zero_iterations():
    # exact pi/2 pulse area: a * T = pi/2
    a = np.full(50, np.pi / 2 / 10.0)
    res = grape_optimize(x_problem(initial_guess={"dx": a}))
    assert res.iterations == 0
    assert res.status == "converged"


def test_grape_hits_iteration_cap():
    res = grape_optimize(h_problem(seed=3, tol=1e-14, max_iters=5))
    assert res.status == "max-iters"
    assert res.iterations == 5


def test_grape_is_deterministic():
    a = grape_optimize(h_problem(seed=9, tol=1e-5))
    b = grape_optimize(h_problem(seed=9, tol=1e-5))
    assert np.array_equal(a.optimal_params, b.optimal_params)
    assert a.trace == b.trace
    assert a.final_infidelity == b.final_infidelity


# -------------------------------------------------------------------- GOAT


def test_parse_control_func_fixed_amplitude_form():
    terms = parse_control_func("exp(-t^2/(2*sigma^2))")
    assert len(terms) == 1
    t = terms[0]
    assert t.amplitude == 1.0 and t.center == 0.0 and t.width == "sigma"


def test_parse_control_func_general_form():
    terms = parse_control_func("a*exp(-(t-c)^2/(2*s^2))")
    assert terms[0].amplitude == "a"
    assert terms[0].center == "c"
    assert terms[0].width == "s"


def test_parse_control_func_rejects_garbage():
    with pytest.raises(OptimizationError):
        parse_control_func("sin(t)")


def test_goat_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    p = random_problem(rng, n_channels=1, n_samples=10)
    spec, x0 = default_envelope_spec(p)
    integ = _AugmentedIntegrator(p, spec, n_steps=60)
    x = x0 + rng.uniform(-0.02, 0.02, x0.shape)
    _, grad = integ.loss_and_grad(x)
    h = 1e-6
    fd = np.zeros_like(x)
    for i in range(x.size):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        fd[i] = (integ.loss_and_grad(up)[0] - integ.loss_and_grad(dn)[0]) / (2 * h)
    denom = max(np.max(np.abs(fd)), 1e-12)
    assert np.max(np.abs(grad - fd)) / denom <= 1e-5


def test_goat_reaches_x_gate_and_resimulates():
    p = x_problem(tol=1e-7)
    res = goat_optimize(p)
    assert res.final_infidelity <= 1e-7
    sig = ControlSignal.from_envelopes(res.envelopes, duration=10.0, dt=0.2)
    u = evolve_continuous(p.model, sig)
    assert abs(infidelity(u, X) - res.final_infidelity) <= 1e-6


def test_goat_width_floor():
    p = x_problem(max_iters=5)
    spec, x0 = default_envelope_spec(p)
    x0 = x0.copy()
    x0[1] = 1e-6  # below the 1e-3 width floor; must be clipped, not crash
    res = goat_optimize(p, spec=spec, initial_parameters=x0)
    assert res.optimal_params[1] >= 1e-3


def test_goat_is_deterministic():
    a = goat_optimize(x_problem(tol=1e-6))
    b = goat_optimize(x_problem(tol=1e-6))
    assert np.array_equal(a.optimal_params, b.optimal_params)
    assert a.final_infidelity == b.final_infidelity


def test_goat_custom_spec_needs_initial_parameters():
    p = x_problem()
    spec = GoatEnvelopeSpec(
        terms=(("dx", GaussianTerm("amp", 5.0, 2.0)),), param_names=("amp",)
    )
    with pytest.raises(OptimizationError):
        goat_optimize(p, spec=spec)
    res = goat_optimize(p, spec=spec, initial_parameters=np.array([0.1]))
    assert res.method == "GOAT"


# ------------------------------------------------------------------ Krotov


def test_krotov_monotone_trace_over_seeds():
    for seed in range(8):
        p = h_problem(seed=seed, initial_guess="random", tol=1e-5)
        res = krotov_optimize(p)
        trace = np.asarray(res.trace)
        assert np.all(np.diff(trace) <= 1e-10), f"seed {seed}"


def test_krotov_reaches_x_gate():
    res = krotov_optimize(x_problem(tol=1e-8))
    assert res.status == "converged"
    assert res.final_infidelity <= 1e-8
    sig = ControlSignal.from_samples(res.synthesized_samples, res.dt)
    u = piecewise_propagator(x_problem().model, sig)
    assert infidelity(u, X) == pytest.approx(res.final_infidelity, abs=1e-12)


def test_krotov_square_start_by_default():
    res = krotov_optimize(x_problem(max_iters=1))
    assert res.trace[0] == pytest.approx(
        infidelity(
            piecewise_propagator(
                x_problem().model,
                ControlSignal.from_samples({"dx": np.full(50, 0.1)}, 0.2),
            ),
            X,
        )
    )


def test_krotov_respects_amplitude_bound():
    res = krotov_optimize(x_problem(amplitude_bound=0.12, tol=1e-6))
    for arr in res.synthesized_samples.values():
        assert np.max(np.abs(arr)) <= 0.12 + 1e-15


def test_krotov_is_deterministic():
    a = krotov_optimize(h_problem(tol=1e-5))
    b = krotov_optimize(h_problem(tol=1e-5))
    assert np.array_equal(a.optimal_params, b.optimal_params)
    assert a.trace == b.trace


# ------------------------------------------------------------ cross-method


def test_all_methods_compile_the_same_x_gate():
    target_tol = 1e-3
    model = x_problem().model
    results = {
        "GRAPE": grape_optimize(x_problem(seed=1, tol=target_tol)),
        "krotov": krotov_optimize(x_problem(tol=target_tol)),
        "GOAT": goat_optimize(x_problem(tol=target_tol)),
    }
    for name, res in results.items():
        assert res.final_infidelity <= target_tol, name
        sig = ControlSignal.from_samples(res.synthesized_samples, res.dt)
        u = piecewise_propagator(model, sig)
        gap = abs(infidelity(u, X) - res.final_infidelity)
        # GOAT emits left-endpoint samples of an analytic envelope, so its
        # piecewise re-simulation differs by the discretization error
        assert gap <= (1e-5 if name == "GOAT" else 1e-12), name
