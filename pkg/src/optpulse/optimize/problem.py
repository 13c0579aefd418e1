"""Shared optimizer plumbing: the loss, the problem container, results.

All methods minimize the trace infidelity

    L = 1 - |Tr(U_target^+ U)|^2 / d^2

over controls of a bilinear system H(t) = H_drift + sum_c u_c(t) Op_c.
The d^2 normalization makes L(U, U) = 0 and keeps the range [0, 1];
global phase drops out through the modulus.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from ..errors import OptimizationError
from ..model import SystemModel

UNITARITY_TOL = 1e-8


def _check_unitary(u: np.ndarray, label: str) -> np.ndarray:
    mat = np.asarray(u, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise OptimizationError(f"{label} must be square, got shape {mat.shape}")
    eye = np.eye(mat.shape[0])
    if np.max(np.abs(mat.conj().T @ mat - eye)) > UNITARITY_TOL:
        raise OptimizationError(f"{label} is not unitary to {UNITARITY_TOL:.0e}")
    return mat


def infidelity(u: np.ndarray, target: np.ndarray) -> float:
    """1 - |Tr(target^+ u)|^2 / d^2, in [0, 1] up to round-off."""
    mat = _check_unitary(u, "propagator")
    tgt = _check_unitary(target, "target")
    if mat.shape != tgt.shape:
        raise OptimizationError(
            f"dimension mismatch: propagator {mat.shape} vs target {tgt.shape}"
        )
    d = mat.shape[0]
    overlap = np.trace(tgt.conj().T @ mat)
    return float(1.0 - (abs(overlap) ** 2) / d**2)


@dataclass(frozen=True)
class ControlProblem:
    """One gate-synthesis task: model, target unitary, horizon, knobs.

    amplitude_bound 0 means unbounded. For sampled methods the horizon must
    tile into n_samples slices of the model's dt; n_samples=None deduces it.
    """

    model: SystemModel
    target_u: np.ndarray
    max_time: float
    n_samples: int | None = None
    amplitude_bound: float = 0.0
    initial_guess: str | Mapping[str, np.ndarray] | None = None
    seed: int = 0
    tol: float | None = None
    max_iters: int | None = None

    def __post_init__(self):
        target = _check_unitary(self.target_u, "target-U")
        if target.shape[0] != self.model.dim:
            raise OptimizationError(
                f"target dimension {target.shape[0]} != model dimension "
                f"{self.model.dim}"
            )
        object.__setattr__(self, "target_u", target)
        if not self.max_time > 0:
            raise OptimizationError(f"max-time must be positive, got {self.max_time}")
        if self.amplitude_bound < 0:
            raise OptimizationError("amplitude-bound must be >= 0")
        dt = self.model.dt
        n = self.n_samples
        if n is None:
            n = int(round(self.max_time / dt))
        if n < 1 or abs(n * dt - self.max_time) > 1e-9 * max(1.0, self.max_time):
            raise OptimizationError(
                f"horizon {self.max_time} does not tile into samples of "
                f"dt={dt} (n_samples={self.n_samples})"
            )
        object.__setattr__(self, "n_samples", n)

    @property
    def dt(self) -> float:
        return self.model.dt

    @property
    def dim(self) -> int:
        return self.model.dim


@dataclass(frozen=True)
class OptimResult:
    """Outcome of one optimize() run.

    status is one of 'converged' (hit tol), 'max-iters', 'stalled'
    (line search or update exhausted without reaching tol), or
    'line-search-failure'. trace holds the per-iteration infidelity,
    starting with the initial guess. synthesized_samples are ready for
    pulse emission; GOAT results additionally carry the analytic
    envelopes at the optimal parameters.
    """

    method: str
    status: str
    optimal_params: np.ndarray
    final_infidelity: float
    iterations: int
    trace: tuple[float, ...]
    synthesized_samples: dict[str, np.ndarray]
    dt: float
    message: str = ""
    envelopes: dict[str, Callable[[float], float]] | None = field(
        default=None, compare=False
    )

    @property
    def converged(self) -> bool:
        return self.status == "converged"


class _Propagation:
    """Slice propagators plus forward/backward partial products.

    Shared by GRAPE (gradient) and Krotov (state sweeps). Eigendecomposes
    every slice Hamiltonian in one stacked call; fields:
      umats (N,d,d), evals (N,d), evecs (N,d,d),
      fwd (N+1,d,d) with fwd[n] = U_{n-1}...U_0,
      bwd (N+1,d,d) with bwd[n] = U_{N-1}...U_n,
      overlap g = Tr(target^+ total), loss.
    """

    def __init__(
        self,
        drift: np.ndarray,
        ops: np.ndarray,
        amps: np.ndarray,
        dt: float,
        target: np.ndarray,
    ):
        n = amps.shape[1]
        d = drift.shape[0]
        hams = drift[None, :, :] + np.einsum("cn,cij->nij", amps, ops)
        evals, evecs = np.linalg.eigh(hams)
        phases = np.exp(-1j * evals * dt)
        self.umats = (evecs * phases[:, None, :]) @ evecs.conj().swapaxes(1, 2)
        self.evals = evals
        self.evecs = evecs
        self.dt = dt
        fwd = np.empty((n + 1, d, d), dtype=complex)
        fwd[0] = np.eye(d)
        for k in range(n):
            fwd[k + 1] = self.umats[k] @ fwd[k]
        bwd = np.empty((n + 1, d, d), dtype=complex)
        bwd[n] = np.eye(d)
        for k in range(n - 1, -1, -1):
            bwd[k] = bwd[k + 1] @ self.umats[k]
        self.fwd = fwd
        self.bwd = bwd
        self.total = fwd[n]
        self.overlap = complex(np.trace(target.conj().T @ self.total))
        self.loss = float(1.0 - abs(self.overlap) ** 2 / d**2)


def initial_amplitudes(
    problem: ControlProblem, policy: str
) -> np.ndarray:
    """(channels, N) start amplitudes for the sampled methods.

    'random': uniform in [-0.1, 0.1] from the problem seed (GRAPE default).
    'square': constant 0.1*bound, or 0.1 when unbounded (Krotov default).
    'zero': all zeros.
    Explicit per-channel arrays in problem.initial_guess win over policy.
    """
    channels = problem.model.channels
    n = problem.n_samples
    guess = problem.initial_guess
    if isinstance(guess, Mapping):
        amps = np.zeros((len(channels), n))
        for i, ch in enumerate(channels):
            if ch not in guess:
                raise OptimizationError(f"initial guess missing channel {ch!r}")
            arr = np.asarray(guess[ch], dtype=float)
            if arr.shape != (n,):
                raise OptimizationError(
                    f"initial guess for {ch!r} has shape {arr.shape}, "
                    f"expected ({n},)"
                )
            amps[i] = arr
        return amps
    if isinstance(guess, str):
        policy = guess
    if policy == "random":
        rng = np.random.default_rng(problem.seed)
        return rng.uniform(-0.1, 0.1, size=(len(channels), n))
    if policy == "square":
        level = 0.1 * problem.amplitude_bound if problem.amplitude_bound > 0 else 0.1
        return np.full((len(channels), n), level)
    if policy == "zero":
        return np.zeros((len(channels), n))
    raise OptimizationError(f"unknown initial-guess policy {policy!r}")


def clip_amplitudes(amps: np.ndarray, bound: float) -> np.ndarray:
    if bound > 0:
        return np.clip(amps, -bound, bound)
    return amps
