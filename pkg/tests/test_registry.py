"""Optimizer registry: options maps, standalone problems, target parsing."""

import numpy as np
import pytest

from optpulse.errors import OptimizationError, UnknownMethodError
from optpulse.model import SystemModel
from optpulse.optimize import (
    ControlProblem,
    get_optimizer,
    infidelity,
    method_names,
    parse_target_unitary,
)

X = np.array([[0, 1], [1, 0]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


def test_method_names():
    assert method_names() == ("GRAPE", "GOAT", "krotov")


def test_lookup_is_case_insensitive():
    assert get_optimizer("grape", {}).method == "GRAPE"
    assert get_optimizer("Krotov", {}).method == "krotov"


def test_unknown_method_lists_known_ones():
    with pytest.raises(UnknownMethodError) as err:
        get_optimizer("NELDER", {})
    assert "GRAPE, GOAT, krotov" in str(err.value)


def test_unknown_option_key_rejected():
    with pytest.raises(OptimizationError) as err:
        get_optimizer("GRAPE", {"learning-rate": 0.1})
    assert "learning-rate" in str(err.value)


def test_method_key_must_agree():
    with pytest.raises(OptimizationError):
        get_optimizer("GRAPE", {"method": "GOAT"})
    handle = get_optimizer("GOAT", {"method": "GOAT"})
    assert handle.method == "GOAT"


def test_target_unitary_gate_name():
    assert np.allclose(parse_target_unitary("X0", 1), X)
    assert np.allclose(parse_target_unitary("H0", 1), H)


def test_target_unitary_expression_and_matrix():
    assert np.allclose(parse_target_unitary("X0*X1", 2), np.kron(X, X))
    inline = [[0.0, 1.0], [1.0, 0.0]]
    assert np.allclose(parse_target_unitary(inline, 1), X)
    pairs = [[[0.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 0.0]]]  # [re, im]
    assert np.allclose(parse_target_unitary(pairs, 1), X)


def test_target_unitary_rejects_non_unitary():
    with pytest.raises(OptimizationError):
        parse_target_unitary("X0+Z0", 1)  # Hermitian but not unitary
    with pytest.raises(OptimizationError):
        parse_target_unitary([[1.0, 0.0], [0.0, 2.0]], 1)


def test_standalone_grape_from_options_map():
    handle = get_optimizer(
        "GRAPE",
        {
            "dimension": 2,
            "target-U": "X0",
            "control-H": ["X0"],
            "max-time": 10.0,
            "n-samples": 50,
            "tol": 1e-6,
            "seed": 1,
        },
    )
    res = handle.optimize()
    assert res.method == "GRAPE"
    assert res.final_infidelity <= 1e-6


def test_standalone_goat_gaussian_family():
    handle = get_optimizer(
        "GOAT",
        {
            "dimension": 2,
            "target-U": "X0",
            "control-H": ["X0"],
            "control-funcs": ["a*exp(-(t-c)^2/(2*s^2))"],
            "control-params": [["a", "c", "s"]],
            "initial-parameters": [0.2, 5.0, 2.0],
            "max-time": 10.0,
            "tol": 1e-6,
        },
    )
    res = handle.optimize()
    assert res.final_infidelity <= 1e-6
    assert set(res.synthesized_samples) == {"d0"}


def test_standalone_goat_without_control_funcs_fails():
    handle = get_optimizer(
        "GOAT",
        {"dimension": 2, "target-U": "X0", "control-H": ["X0"], "max-time": 10.0},
    )
    with pytest.raises(OptimizationError):
        handle.optimize()


def test_compiler_path_accepts_external_problem():
    model = SystemModel(n_qubits=1, dt=0.2, control=(("dx", "X0"),))
    problem = ControlProblem(model=model, target_u=X, max_time=10.0, tol=1e-5, seed=2)
    for name in method_names():
        res = get_optimizer(name, {}).optimize(problem)
        assert res.final_infidelity <= 1e-5, name


def test_option_values_are_type_checked():
    with pytest.raises(OptimizationError):
        get_optimizer("GRAPE", {"max-time": "ten"})
    with pytest.raises(OptimizationError):
        get_optimizer("GRAPE", {"n-samples": 2.5})


def test_options_are_copied_not_aliased():
    opts = {"max-time": 10.0}
    handle = get_optimizer("GRAPE", opts)
    opts["max-time"] = 999.0
    assert handle.options["max-time"] == 10.0
