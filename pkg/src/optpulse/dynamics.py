"""Time-domain propagation engines.

Three solvers over a shared bilinear control system H(t) = H_drift +
sum_c s_c(t) * Op_c:

* ``piecewise_propagator`` -- exact product of slice exponentials for
  sampled (piecewise-constant) signals, closed systems only.
* ``evolve_continuous`` -- fixed-step third-order Runge-Kutta integration of
  dU/dt = -i H(t) U for analytic envelopes, with step halving until the
  unitarity defect meets tolerance.
* ``lindblad_evolve`` -- RK3 integration of the Lindblad master equation,
  returning the density-matrix trajectory at every sample time.

Samples are complex for format compatibility, but with no quadrature
partner declared the imaginary part must vanish; only Re(s) drives Op_c.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np

from .errors import DynamicsError
from .model import SystemModel, build_operator

HERMITICITY_TOL = 1e-8
IMAG_SAMPLE_TOL = 1e-12
UNITARITY_TOL = 1e-9  # stricter than the 1e-7 contract; keeps engines in step
MAX_STEP_HALVINGS = 12


@dataclass(frozen=True)
class ControlSignal:
    """Per-channel drive over [0, duration], sampled or analytic.

    Exactly one of ``samples`` (channel -> complex array, one value per dt)
    and ``envelopes`` (channel -> callable of t) is set. All channels share
    ``n_samples`` and ``dt``; duration = n_samples * dt.
    """

    dt: float
    n_samples: int
    samples: Mapping[str, np.ndarray] | None = None
    envelopes: Mapping[str, Callable[[float], complex]] | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise DynamicsError(f"dt must be positive, got {self.dt}")
        if self.n_samples < 1:
            raise DynamicsError("signal must cover at least one sample")
        if (self.samples is None) == (self.envelopes is None):
            raise DynamicsError("signal needs samples or envelopes, not both")

    @classmethod
    def from_samples(cls, samples: Mapping[str, object], dt: float) -> "ControlSignal":
        arrays: dict[str, np.ndarray] = {}
        n = None
        for ch, values in samples.items():
            arr = np.asarray(values, dtype=complex)
            if arr.ndim != 1:
                raise DynamicsError(f"channel {ch!r} samples must be a 1-D array")
            if not np.all(np.isfinite(arr.view(float))):
                raise DynamicsError(f"channel {ch!r} has non-finite samples")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise DynamicsError(
                    f"channel {ch!r} has {arr.size} samples, expected {n}"
                )
            arrays[ch] = arr
        if n is None or n == 0:
            raise DynamicsError("sampled signal needs at least one channel sample")
        return cls(dt=float(dt), n_samples=int(n), samples=arrays)

    @classmethod
    def from_envelopes(
        cls,
        envelopes: Mapping[str, Callable[[float], complex]],
        duration: float,
        dt: float,
    ) -> "ControlSignal":
        if not envelopes:
            raise DynamicsError("analytic signal needs at least one envelope")
        n = int(round(duration / dt))
        if n < 1 or abs(n * dt - duration) > 1e-9 * max(1.0, abs(duration)):
            raise DynamicsError(
                f"duration {duration} is not an integer multiple of dt={dt}"
            )
        return cls(dt=float(dt), n_samples=n, envelopes=dict(envelopes))

    @property
    def duration(self) -> float:
        return self.n_samples * self.dt

    @property
    def is_sampled(self) -> bool:
        return self.samples is not None

    @property
    def channels(self) -> tuple[str, ...]:
        source = self.samples if self.is_sampled else self.envelopes
        return tuple(source.keys())

    def value(self, channel: str, t: float) -> complex:
        """Drive value at time t (left-constant rule for sampled signals)."""
        if self.is_sampled:
            arr = self.samples[channel]
            idx = int(np.floor(t / self.dt + 1e-12))
            if idx < 0 or idx >= arr.size:
                return 0.0
            return complex(arr[idx])
        return complex(self.envelopes[channel](t))

    def sample_array(self, channel: str) -> np.ndarray:
        """Samples for a channel; analytic envelopes use left-endpoint values."""
        if self.is_sampled:
            return np.array(self.samples[channel], dtype=complex)
        f = self.envelopes[channel]
        return np.array([f(n * self.dt) for n in range(self.n_samples)], dtype=complex)


def _check_signal_channels(model: SystemModel, signal: ControlSignal) -> None:
    unknown = set(signal.channels) - set(model.channels)
    if unknown:
        raise DynamicsError(
            f"signal channel(s) {sorted(unknown)} not present in the model "
            f"(has {list(model.channels)})"
        )


def _real_samples(signal: ControlSignal, channel: str) -> np.ndarray:
    arr = signal.samples[channel]
    if np.max(np.abs(arr.imag), initial=0.0) > IMAG_SAMPLE_TOL:
        raise DynamicsError(
            f"channel {channel!r} has complex samples but no quadrature "
            "partner is declared; imaginary parts must be zero"
        )
    return arr.real


def matrix_exp_hermitian_skew(hamiltonian: np.ndarray, time: float) -> np.ndarray:
    """exp(-i * H * time) for Hermitian H, via eigendecomposition."""
    h = np.asarray(hamiltonian, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DynamicsError(f"expected a square matrix, got shape {h.shape}")
    if np.max(np.abs(h - h.conj().T)) > HERMITICITY_TOL:
        raise DynamicsError("matrix is not Hermitian")
    evals, evecs = np.linalg.eigh(h)
    phases = np.exp(-1j * evals * time)
    return (evecs * phases) @ evecs.conj().T


def _slice_hamiltonians(model: SystemModel, signal: ControlSignal) -> np.ndarray:
    """Stack of H(t_n) for each slice, shape (N, dim, dim)."""
    drift = model.drift_matrix()
    controls = model.control_matrices()
    n = signal.n_samples
    hams = np.broadcast_to(drift, (n, *drift.shape)).copy()
    for ch in signal.channels:
        amps = _real_samples(signal, ch)
        hams += amps[:, None, None] * controls[ch]
    return hams


def piecewise_propagator(model: SystemModel, signal: ControlSignal) -> np.ndarray:
    """Total unitary for a sampled signal: product of slice exponentials."""
    if not signal.is_sampled:
        raise DynamicsError("piecewise propagation needs a sampled signal")
    if model.has_dissipation:
        raise DynamicsError(
            "model has collapse operators; use lindblad_evolve for open systems"
        )
    _check_signal_channels(model, signal)
    if abs(signal.dt - model.dt) > 1e-12 * max(1.0, model.dt):
        raise DynamicsError(
            f"signal dt={signal.dt} does not match model dt={model.dt}"
        )
    total = np.eye(model.dim, dtype=complex)
    for h in _slice_hamiltonians(model, signal):
        total = matrix_exp_hermitian_skew(h, signal.dt) @ total
    return total


def evolve_states(
    model: SystemModel, signal: ControlSignal, psi0: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """State-vector trajectory at each sample time under a sampled signal."""
    if not signal.is_sampled:
        raise DynamicsError("state trajectory needs a sampled signal")
    if model.has_dissipation:
        raise DynamicsError("closed-system trajectory, but model has dissipation")
    _check_signal_channels(model, signal)
    psi = np.asarray(psi0, dtype=complex).ravel()
    if psi.size != model.dim:
        raise DynamicsError(f"state dim {psi.size} != model dim {model.dim}")
    if abs(np.linalg.norm(psi) - 1.0) > 1e-9:
        raise DynamicsError("initial state is not normalized")
    states = [psi.copy()]
    for h in _slice_hamiltonians(model, signal):
        psi = matrix_exp_hermitian_skew(h, signal.dt) @ psi
        states.append(psi.copy())
    times = np.arange(signal.n_samples + 1) * signal.dt
    return times, states


def _rk3_step(f, t: float, y: np.ndarray, h: float) -> np.ndarray:
    # classical Kutta tableau: nodes (0, 1/2, 1), weights (1/6, 2/3, 1/6)
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + h, y - h * k1 + 2.0 * h * k2)
    return y + (h / 6.0) * (k1 + 4.0 * k2 + k3)


def evolve_continuous(
    model: SystemModel,
    signal: ControlSignal,
    duration: float | None = None,
    step: float | None = None,
    unitarity_tol: float = UNITARITY_TOL,
) -> np.ndarray:
    """Integrate dU/dt = -i H(t) U with fixed-step RK3 over [0, duration].

    The step starts at dt/10 (or ``step``) and is halved until the unitarity
    defect of the result is within ``unitarity_tol``; running out of
    halvings raises. Sampled signals are integrated slice by slice with the
    Hamiltonian frozen inside each slice, so RK stages never straddle a
    sample discontinuity.
    """
    if model.has_dissipation:
        raise DynamicsError(
            "model has collapse operators; use lindblad_evolve for open systems"
        )
    _check_signal_channels(model, signal)
    tau = signal.duration if duration is None else float(duration)
    if tau <= 0:
        raise DynamicsError(f"duration must be positive, got {tau}")
    drift = model.drift_matrix()
    controls = model.control_matrices()
    chans = signal.channels
    eye = np.eye(model.dim, dtype=complex)
    h0 = signal.dt / 10.0 if step is None else float(step)

    def hamiltonian(t: float) -> np.ndarray:
        h = drift.copy()
        for ch in chans:
            value = signal.value(ch, t)
            if abs(value.imag) > IMAG_SAMPLE_TOL * max(1.0, abs(value)):
                raise DynamicsError(
                    f"channel {ch!r} envelope is complex at t={t}; no "
                    "quadrature partner is declared"
                )
            h += value.real * controls[ch]
        return h

    def integrate_smooth(h_trial: float) -> np.ndarray:
        def rhs(t: float, u: np.ndarray) -> np.ndarray:
            return -1j * (hamiltonian(t) @ u)

        n_steps = max(1, int(np.ceil(tau / h_trial - 1e-12)))
        h = tau / n_steps
        u = eye.copy()
        for k in range(n_steps):
            u = _rk3_step(rhs, k * h, u, h)
        return u

    def integrate_sliced(h_trial: float) -> np.ndarray:
        n_slices = int(round(tau / signal.dt))
        if abs(n_slices * signal.dt - tau) > 1e-9 * max(1.0, tau):
            raise DynamicsError(
                f"duration {tau} is not a multiple of dt={signal.dt} for a "
                "sampled signal"
            )
        per_slice = max(1, int(np.ceil(signal.dt / h_trial - 1e-12)))
        h = signal.dt / per_slice
        u = eye.copy()
        for n, h_slice in enumerate(_slice_hamiltonians(model, signal)[:n_slices]):
            def rhs(t: float, v: np.ndarray, hs=h_slice) -> np.ndarray:
                return -1j * (hs @ v)

            t0 = n * signal.dt
            for k in range(per_slice):
                u = _rk3_step(rhs, t0 + k * h, u, h)
        return u

    integrate = integrate_sliced if signal.is_sampled else integrate_smooth
    for _ in range(MAX_STEP_HALVINGS + 1):
        u = integrate(h0)
        defect = np.max(np.abs(u.conj().T @ u - eye))
        if defect <= unitarity_tol:
            return u
        h0 /= 2.0
    raise DynamicsError(
        f"step floor reached; unitarity defect {defect:.3e} > {unitarity_tol:.1e}"
    )


def lindblad_evolve(
    model: SystemModel,
    signal: ControlSignal,
    rho0: np.ndarray,
    duration: float | None = None,
    substeps: int = 10,
    tol: float = 1e-8,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Integrate the Lindblad master equation; trajectory at sample times.

    drho/dt = -i[H(t), rho] + sum_j gamma_j (L_j rho L_j^+
              - {L_j^+ L_j, rho} / 2), solved with fixed-step RK3 using
    ``substeps`` steps per sample period. Substeps are doubled until two
    successive runs agree to ``tol`` at every sample time (step-doubling
    error control; trace drift alone misses Hamiltonian truncation error
    because commutators conserve trace at each stage). Sampled drives stay
    frozen within their slice, matching the left-constant rule.
    """
    _check_signal_channels(model, signal)
    rho_init = np.asarray(rho0, dtype=complex)
    if rho_init.ndim == 1:  # pure state given as a vector
        rho_init = np.outer(rho_init, rho_init.conj())
    if rho_init.shape != (model.dim, model.dim):
        raise DynamicsError(
            f"rho0 shape {rho_init.shape} != ({model.dim}, {model.dim})"
        )
    trace = complex(np.trace(rho_init))
    if abs(trace - 1.0) > 1e-9:
        raise DynamicsError("rho0 must have unit trace")
    if np.max(np.abs(rho_init - rho_init.conj().T)) > 1e-9:
        raise DynamicsError("rho0 must be Hermitian")

    tau = signal.duration if duration is None else float(duration)
    n_samples = int(round(tau / signal.dt))
    if n_samples < 1 or abs(n_samples * signal.dt - tau) > 1e-9 * max(1.0, tau):
        raise DynamicsError(f"duration {tau} is not a multiple of dt={signal.dt}")
    drift = model.drift_matrix()
    controls = model.control_matrices()
    chans = signal.channels
    l_ops = [(rate, op, op.conj().T @ op) for rate, op in model.collapse_terms()]

    def hamiltonian_at(t: float) -> np.ndarray:
        h = drift.copy()
        for ch in chans:
            value = signal.value(ch, t)
            if abs(value.imag) > IMAG_SAMPLE_TOL * max(1.0, abs(value)):
                raise DynamicsError(
                    f"channel {ch!r} has a complex drive value at t={t}"
                )
            h += value.real * controls[ch]
        return h

    def dissipator(r: np.ndarray) -> np.ndarray:
        out = np.zeros_like(r)
        for rate, l_op, l2 in l_ops:
            out += rate * (l_op @ r @ l_op.conj().T - 0.5 * (l2 @ r + r @ l2))
        return out

    def run(steps_per_slice: int) -> list[np.ndarray]:
        h = signal.dt / steps_per_slice
        rho = rho_init.copy()
        traj = [rho.copy()]
        for n in range(n_samples):
            t0 = n * signal.dt
            if signal.is_sampled:
                h_slice = hamiltonian_at(t0)

                def rhs(t, r, hs=h_slice):
                    return -1j * (hs @ r - r @ hs) + dissipator(r)
            else:

                def rhs(t, r):
                    ht = hamiltonian_at(t)
                    return -1j * (ht @ r - r @ ht) + dissipator(r)

            for k in range(steps_per_slice):
                rho = _rk3_step(rhs, t0 + k * h, rho, h)
            rho = 0.5 * (rho + rho.conj().T)  # clip Hermiticity round-off
            traj.append(rho.copy())
        return traj

    steps = max(1, int(substeps))
    previous = run(steps)
    for _ in range(MAX_STEP_HALVINGS):
        steps *= 2
        current = run(steps)
        gap = max(
            float(np.max(np.abs(a - b))) for a, b in zip(previous, current)
        )
        trace_drift = max(abs(np.trace(r).real - 1.0) for r in current)
        if gap <= tol and trace_drift <= tol:
            times = np.arange(n_samples + 1) * signal.dt
            return times, current
        previous = current
    raise DynamicsError(
        f"substep floor reached; Lindblad step-doubling gap {gap:.3e} > {tol:.1e}"
    )


def expectation(operator: np.ndarray, state: np.ndarray) -> float:
    """<psi|A|psi> for a vector or Tr(A rho) for a density matrix."""
    op = np.asarray(operator, dtype=complex)
    if np.max(np.abs(op - op.conj().T)) > HERMITICITY_TOL:
        raise DynamicsError("observable is not Hermitian")
    s = np.asarray(state, dtype=complex)
    if s.ndim == 1:
        if s.size != op.shape[0]:
            raise DynamicsError(f"state dim {s.size} != operator dim {op.shape[0]}")
        value = complex(s.conj() @ op @ s)
    elif s.ndim == 2:
        if s.shape != op.shape:
            raise DynamicsError(f"state shape {s.shape} != operator {op.shape}")
        value = complex(np.trace(op @ s))
    else:
        raise DynamicsError("state must be a vector or a density matrix")
    if abs(value.imag) > 1e-9:
        raise DynamicsError(f"expectation has imaginary residual {value.imag:.3e}")
    return value.real


def trajectory_csv(
    times: np.ndarray,
    states: list[np.ndarray],
    n_qubits: int,
    extra: Mapping[str, np.ndarray] | None = None,
) -> str:
    """CSV dump of per-qubit Pauli expectations and excited populations.

    Columns: ``t, <X0>, <Y0>, <Z0>, p_excited`` and for each further qubit i
    ``<Xi>, <Yi>, <Zi>, p_excited{i}``; optional extra observables append
    their label as-is. 12 significant digits.
    """
    paulis = []
    for q in range(n_qubits):
        paulis.append(
            (
                build_operator(f"X{q}", n_qubits),
                build_operator(f"Y{q}", n_qubits),
                build_operator(f"Z{q}", n_qubits),
            )
        )
    header = ["t"]
    for q in range(n_qubits):
        suffix = "" if q == 0 else str(q)
        header += [f"<X{q}>", f"<Y{q}>", f"<Z{q}>", f"p_excited{suffix}"]
    extra = dict(extra or {})
    header += list(extra.keys())
    lines = [", ".join(header)]
    for t, state in zip(times, states):
        row = [f"{t:.12g}"]
        for q in range(n_qubits):
            x = expectation(paulis[q][0], state)
            y = expectation(paulis[q][1], state)
            z = expectation(paulis[q][2], state)
            row += [f"{x:.12g}", f"{y:.12g}", f"{z:.12g}", f"{(1.0 - z) / 2.0:.12g}"]
        for op in extra.values():
            row.append(f"{expectation(op, state):.12g}")
        lines.append(", ".join(row))
    return "\n".join(lines) + "\n"
