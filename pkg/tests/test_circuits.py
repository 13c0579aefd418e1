"""Circuit parser and unitary construction."""

import math

import numpy as np
import pytest

from optpulse.circuits import (
    Circuit,
    Gate,
    circuit_unitary,
    eval_parametric,
    gate_matrix,
    parse_circuit,
)
from optpulse.errors import CircuitError, CircuitSyntaxError

I2 = np.eye(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.diag([1, -1]).astype(complex)
H = np.array([[1, 1], [1, -1]]) / math.sqrt(2)


def test_parse_single_gate():
    c = parse_circuit("X(q[0]);")
    assert c.n_qubits == 1
    assert c.gates == (Gate("X", (0,)),)
    assert c.is_concrete


def test_parse_deduces_qubit_count_from_max_index():
    c = parse_circuit("H(q[2]);")
    assert c.n_qubits == 3


def test_parse_parametric_gate_keeps_symbol():
    c = parse_circuit("Rx(q[0], theta);")
    assert c.free_params == ("theta",)
    assert not c.is_concrete


def test_parse_pi_arithmetic():
    c = parse_circuit("Rz(q[0], 3*pi/4);")
    assert c.gates[0].params[0] == pytest.approx(3 * math.pi / 4)


def test_parse_numeric_literals():
    c = parse_circuit("Rx(q[0], 0.5); Ry(q[0], -1.25e-1);")
    assert c.gates[0].params[0] == pytest.approx(0.5)
    assert c.gates[1].params[0] == pytest.approx(-0.125)


def test_syntax_error_carries_position():
    with pytest.raises(CircuitSyntaxError) as err:
        parse_circuit("X(q[0]);\nY(q[0)")
    assert err.value.line == 2


def test_newline_separated_statements_and_comments():
    c = parse_circuit("X(q[0])  // flip\nY(q[0])\n")
    assert [g.name for g in c.gates] == ["X", "Y"]


def test_missing_parenthesis_is_a_syntax_error():
    with pytest.raises(CircuitSyntaxError):
        parse_circuit("X q[0];")


def test_unknown_gate_rejected():
    with pytest.raises((CircuitError, CircuitSyntaxError)):
        parse_circuit("Toffoli(q[0], q[1], q[2]);")


def test_wrong_arity_rejected():
    with pytest.raises((CircuitError, CircuitSyntaxError)):
        parse_circuit("H(q[0], q[1]);")


def test_wrong_param_count_rejected():
    with pytest.raises((CircuitError, CircuitSyntaxError)):
        parse_circuit("Rx(q[0]);")


def test_duplicate_targets_rejected():
    with pytest.raises(CircuitError):
        Gate("Swap", (0, 0))


def test_gate_matrices_match_definitions():
    assert np.allclose(gate_matrix(Gate("X", (0,))), X)
    assert np.allclose(gate_matrix(Gate("H", (0,))), H)
    theta = 0.7
    rx = gate_matrix(Gate("Rx", (0,), (theta,)))
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    assert np.allclose(rx, [[c, -1j * s], [-1j * s, c]])
    rz = gate_matrix(Gate("Rz", (0,), (theta,)))
    assert np.allclose(rz, np.diag([np.exp(-1j * theta / 2), np.exp(1j * theta / 2)]))


def test_rotation_matches_exponential():
    # Rx(theta) = exp(-i theta X / 2), same for Y and Z
    rng = np.random.default_rng(1)
    for name, op in [("Rx", X), ("Ry", Y), ("Rz", Z)]:
        theta = rng.uniform(-2 * math.pi, 2 * math.pi)
        w, v = np.linalg.eigh(op)
        expm = (v * np.exp(-0.5j * theta * w)) @ v.conj().T
        assert np.allclose(gate_matrix(Gate(name, (0,), (theta,))), expm, atol=1e-12)


def test_gates_compose_left_to_right():
    u = circuit_unitary(parse_circuit("X(q[0]); Z(q[0]);"))
    assert np.allclose(u, Z @ X)


def test_qubit_zero_is_least_significant():
    u0 = circuit_unitary(parse_circuit("X(q[0]);"), max_qubits=2)
    u1 = circuit_unitary(parse_circuit("X(q[1]);"))
    # 1-qubit circuit on q[0] stays 2x2; embed by parsing with a 2-qubit gate
    assert u0.shape == (2, 2)
    assert np.allclose(u1, np.kron(X, I2))


def test_two_qubit_embedding():
    u = circuit_unitary(parse_circuit("X(q[0]); Y(q[1]);"))
    assert np.allclose(u, np.kron(Y, X))


def test_cnot_truth_table():
    u = circuit_unitary(parse_circuit("CNOT(q[0], q[1]);"))
    # control q0 (low bit): |01> -> |11>, |11> -> |01>
    basis = np.eye(4)
    assert np.allclose(u @ basis[:, 1], basis[:, 3])
    assert np.allclose(u @ basis[:, 3], basis[:, 1])
    assert np.allclose(u @ basis[:, 0], basis[:, 0])


def test_hadamard_as_ry_then_x(fixtures):
    source = (fixtures / "h_as_yx.xasm").read_text()
    u = circuit_unitary(parse_circuit(source))
    assert np.max(np.abs(u - H)) <= 1e-12


def test_qft2_circuit_is_dft_matrix(fixtures):
    source = (fixtures / "qft2.xasm").read_text()
    u = circuit_unitary(parse_circuit(source))
    w = np.exp(2j * np.pi / 4)
    dft = np.array([[w ** (j * k) for k in range(4)] for j in range(4)]) / 2.0
    assert np.max(np.abs(u - dft)) <= 1e-12


def test_circuit_unitary_is_unitary_on_random_programs():
    rng = np.random.default_rng(7)
    names_1q = ["X", "Y", "Z", "H"]
    for _ in range(20):
        gates = []
        for _ in range(rng.integers(1, 8)):
            if rng.random() < 0.5:
                gates.append(f"{rng.choice(names_1q)}(q[{rng.integers(0, 2)}]);")
            else:
                gates.append(f"Rx(q[{rng.integers(0, 2)}], {rng.uniform(-3, 3)});")
        u = circuit_unitary(parse_circuit(" ".join(gates), n_qubits=2))
        assert np.max(np.abs(u.conj().T @ u - np.eye(4))) <= 1e-12


def test_eval_parametric_binds_in_declaration_order():
    c = parse_circuit("Rx(q[0], a); Rz(q[0], b);")
    bound = eval_parametric(c, [math.pi, math.pi / 2])
    assert bound.is_concrete
    assert bound.gates[0].params[0] == pytest.approx(math.pi)
    assert bound.gates[1].params[0] == pytest.approx(math.pi / 2)


def test_eval_parametric_wrong_count():
    c = parse_circuit("Rx(q[0], a);")
    with pytest.raises(CircuitError):
        eval_parametric(c, [1.0, 2.0])


def test_unitary_of_unbound_circuit_rejected():
    with pytest.raises(CircuitError):
        circuit_unitary(parse_circuit("Rx(q[0], theta);"))


def test_qubit_cap_enforced():
    with pytest.raises(CircuitError):
        circuit_unitary(parse_circuit("X(q[6]);"))


def test_circuit_validates_target_range():
    with pytest.raises(CircuitError):
        Circuit(1, (Gate("X", (1,)),), ())
