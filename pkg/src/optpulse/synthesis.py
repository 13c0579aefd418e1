"""Digital-to-analog lowering: circuits to scheduled pulse programs.

Two paths produce a PulseProgram:

* ``transform`` -- the optimal-control route: circuit -> target unitary ->
  optimizer dispatch -> one pulse instruction per driven channel.
* ``library_lower`` -- the default-calibration route: every gate is looked
  up in a pulse library and its fragment is time-shifted behind earlier
  activity on any channel it touches (gates stay atomic; gates on disjoint
  channels may overlap).

Programs serialize to a canonical JSON document (sorted instructions,
sorted keys) so equality of programs is byte-equality of documents.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .circuits import Circuit, circuit_unitary
from .dynamics import ControlSignal
from .errors import CircuitError, LibraryError, OptimizationError, TransformError
from .model import SystemModel
from .optimize import ControlProblem, get_optimizer

DEFAULT_ACCEPT_THRESHOLD = 5e-2


@dataclass(frozen=True)
class PulseInstruction:
    """A complex sample train on one channel, starting at sample index t0."""

    channel: str
    t0: int
    samples: tuple[complex, ...]

    def __post_init__(self):
        if self.t0 < 0:
            raise OptimizationError(f"start time must be >= 0, got {self.t0}")
        if not self.samples:
            raise OptimizationError(f"empty pulse on channel {self.channel!r}")
        object.__setattr__(
            self, "samples", tuple(complex(s) for s in self.samples)
        )

    @property
    def end(self) -> int:
        return self.t0 + len(self.samples)

    def sample_array(self) -> np.ndarray:
        return np.asarray(self.samples, dtype=complex)


@dataclass(frozen=True)
class PulseProgram:
    """Scheduled pulse instructions sharing one sample period dt.

    Per channel, instruction windows [t0, t0+len) may not overlap.
    total_duration is measured in samples.
    """

    dt: float
    instructions: tuple[PulseInstruction, ...] = ()
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise OptimizationError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "instructions", tuple(self.instructions))
        object.__setattr__(self, "metadata", dict(self.metadata))
        windows: dict[str, list[tuple[int, int]]] = {}
        for instr in self.instructions:
            spans = windows.setdefault(instr.channel, [])
            for start, end in spans:
                if instr.t0 < end and start < instr.end:
                    raise OptimizationError(
                        f"overlapping instructions on channel {instr.channel!r}"
                        f": [{start}, {end}) and [{instr.t0}, {instr.end})"
                    )
            spans.append((instr.t0, instr.end))

    @property
    def total_duration(self) -> int:
        return max((i.end for i in self.instructions), default=0)

    @property
    def channels(self) -> tuple[str, ...]:
        return tuple(sorted({i.channel for i in self.instructions}))

    def shifted(self, offset: int) -> "PulseProgram":
        return PulseProgram(
            dt=self.dt,
            instructions=tuple(
                PulseInstruction(i.channel, i.t0 + offset, i.samples)
                for i in self.instructions
            ),
            metadata=self.metadata,
        )

    def to_signal(self, n_samples: int | None = None) -> ControlSignal:
        """Materialize per-channel sample arrays (zeros where idle)."""
        length = self.total_duration if n_samples is None else int(n_samples)
        length = max(length, 1)
        arrays = {
            ch: np.zeros(length, dtype=complex) for ch in self.channels
        }
        if not arrays:
            raise OptimizationError("cannot build a signal from an empty program")
        for instr in self.instructions:
            arrays[instr.channel][instr.t0 : instr.end] = instr.samples
        return ControlSignal.from_samples(arrays, self.dt)


def discretize_envelope(
    envelope: Callable[[float], complex], duration: float, dt: float
) -> np.ndarray:
    """Left-endpoint samples f(n*dt), n = 0..round(duration/dt)-1."""
    if not dt > 0:
        raise OptimizationError(f"dt must be positive, got {dt}")
    if duration < dt:
        raise OptimizationError(
            f"duration {duration} shorter than one sample period {dt}"
        )
    n = int(round(duration / dt))
    values = np.asarray([complex(envelope(k * dt)) for k in range(n)])
    if not np.all(np.isfinite(values.view(float))):
        raise OptimizationError("envelope produced a non-finite sample")
    return values


def transform(
    circuit: Circuit,
    model: SystemModel,
    method: str,
    options: Mapping[str, object] | None = None,
) -> PulseProgram:
    """Compile a concrete circuit into a monolithic pulse program.

    The circuit's unitary becomes the optimization target; horizon and the
    remaining problem fields are deduced from the model plus options
    (max-time is required). If the optimizer cannot reach accept-threshold
    (default 5e-2) a TransformError carrying the best-effort program is
    raised.
    """
    program, _ = compile_circuit(circuit, model, method, options)
    return program


def compile_circuit(
    circuit: Circuit,
    model: SystemModel,
    method: str,
    options: Mapping[str, object] | None = None,
):
    """Like transform, but also returns the underlying optimizer result."""
    opts = dict(options or {})
    accept = float(opts.pop("accept-threshold", DEFAULT_ACCEPT_THRESHOLD))
    if not circuit.is_concrete:
        raise CircuitError(
            "circuit has unbound parameters "
            f"{circuit.free_params}; bind them before compiling"
        )
    if "max-time" not in opts:
        raise OptimizationError("transform needs a max-time option")
    target = circuit_unitary(circuit)
    if circuit.n_qubits != model.n_qubits:
        raise OptimizationError(
            f"circuit acts on {circuit.n_qubits} qubit(s), model has "
            f"{model.n_qubits}"
        )
    handle = get_optimizer(method, opts)
    max_time = float(opts["max-time"])
    n_samples = int(round(max_time / model.dt))
    if "n-samples" in opts and int(opts["n-samples"]) != n_samples:
        raise OptimizationError(
            f"n-samples {opts['n-samples']} contradicts max-time/dt = "
            f"{max_time}/{model.dt} (= {n_samples} samples)"
        )
    problem = ControlProblem(
        model=model,
        target_u=target,
        max_time=max_time,
        n_samples=n_samples,
        amplitude_bound=float(opts.get("amplitude-bound", 0.0)),
        seed=int(opts.get("seed", 0)),
        tol=opts.get("tol"),
        max_iters=opts.get("max-iters"),
    )
    result = handle.optimize(problem)
    instructions = tuple(
        PulseInstruction(channel=ch, t0=0, samples=tuple(samples))
        for ch, samples in sorted(result.synthesized_samples.items())
    )
    program = PulseProgram(
        dt=model.dt,
        instructions=instructions,
        metadata={"method": result.method, "infidelity": result.final_infidelity},
    )
    if result.final_infidelity > accept:
        raise TransformError(
            f"{result.method} stopped at infidelity "
            f"{result.final_infidelity:.3e} (> accept-threshold {accept:g}, "
            f"status {result.status})",
            program=program,
            infidelity=result.final_infidelity,
            result=result,
        )
    return program, result


class PulseLibrary:
    """Map from (gate name, target qubits) to a pulse-program fragment."""

    def __init__(self, dt: float, model: SystemModel | None = None):
        if not dt > 0:
            raise LibraryError(f"dt must be positive, got {dt}")
        self.dt = dt
        self.model = model
        self._entries: dict[tuple[str, tuple[int, ...]], PulseProgram] = {}

    def add(
        self, name: str, targets: tuple[int, ...], fragment: PulseProgram
    ) -> None:
        if abs(fragment.dt - self.dt) > 1e-12 * max(1.0, self.dt):
            raise LibraryError(
                f"fragment dt {fragment.dt} does not match library dt {self.dt}"
            )
        if self.model is not None:
            missing = set(fragment.channels) - set(self.model.channels)
            if missing:
                raise LibraryError(
                    f"fragment for {name}{list(targets)} uses channel(s) "
                    f"{sorted(missing)} absent from the model"
                )
        self._entries[(name, tuple(targets))] = fragment

    def lookup(self, name: str, targets: tuple[int, ...]) -> PulseProgram:
        try:
            return self._entries[(name, tuple(targets))]
        except KeyError:
            raise LibraryError(
                f"no pulse entry for gate {name} on qubit(s) {list(targets)}"
            ) from None


def library_lower(circuit: Circuit, library: PulseLibrary) -> PulseProgram:
    """Concatenate library fragments gate by gate.

    Each gate starts after every earlier instruction on any channel its
    fragment touches has finished (the whole fragment counts as busy time
    on all its channels, keeping gates atomic); gates with disjoint
    channels are free to overlap.
    """
    if not circuit.is_concrete:
        raise LibraryError("circuit has unbound parameters")
    channel_free: dict[str, int] = {}
    placed: list[PulseInstruction] = []
    for gate in circuit.gates:
        fragment = library.lookup(gate.name, gate.targets)
        start = max((channel_free.get(ch, 0) for ch in fragment.channels), default=0)
        placed.extend(fragment.shifted(start).instructions)
        busy_until = start + fragment.total_duration
        for ch in fragment.channels:
            channel_free[ch] = busy_until
    return PulseProgram(dt=library.dt, instructions=tuple(placed))


def emit_program(program: PulseProgram) -> str:
    """Canonical JSON: instructions sorted by (t0, channel), sorted keys."""
    ordered = sorted(program.instructions, key=lambda i: (i.t0, i.channel))
    doc = {
        "dt": program.dt,
        "instructions": [
            {
                "channel": instr.channel,
                "t0": instr.t0,
                "samples": [[s.real, s.imag] for s in instr.samples],
            }
            for instr in ordered
        ],
        "metadata": dict(program.metadata),
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def parse_program(document: str | Mapping) -> PulseProgram:
    """Inverse of emit_program; validates the document shape."""
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise OptimizationError(f"pulse document is not valid JSON: {exc}")
    else:
        doc = dict(document)
    if not isinstance(doc, dict):
        raise OptimizationError("pulse document must be a JSON object")
    unknown = set(doc) - {"dt", "instructions", "metadata"}
    if unknown:
        raise OptimizationError(f"unknown pulse document key(s) {sorted(unknown)}")
    if "dt" not in doc or "instructions" not in doc:
        raise OptimizationError("pulse document needs 'dt' and 'instructions'")
    instructions = []
    for entry in doc["instructions"]:
        extra = set(entry) - {"channel", "t0", "samples"}
        if extra:
            raise OptimizationError(f"unknown instruction key(s) {sorted(extra)}")
        samples = tuple(complex(re, im) for re, im in entry["samples"])
        instructions.append(
            PulseInstruction(
                channel=str(entry["channel"]), t0=int(entry["t0"]), samples=samples
            )
        )
    return PulseProgram(
        dt=float(doc["dt"]),
        instructions=tuple(instructions),
        metadata=doc.get("metadata", {}),
    )


def load_program(path: str) -> PulseProgram:
    with open(path, encoding="utf-8") as fh:
        return parse_program(fh.read())


def save_program(program: PulseProgram, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(emit_program(program))
