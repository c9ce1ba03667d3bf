import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kcontract.lurie import LurieSystem, affine_activation, linear_feedback, tanh_diagonal
from kcontract.network import NetworkedSystem, tanh_activation
from kcontract.sysfile import (
    SystemFileError,
    preset,
    read_system,
    system_from_dict,
    system_to_dict,
    write_system,
)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4).flatmap(lambda n: st.tuples(
    arrays(np.float64, (n,), elements=finite),
    arrays(np.float64, (n, n), elements=finite),
    arrays(np.float64, (n, n), elements=finite),
    arrays(np.float64, (n,), elements=finite),
)))
def test_network_roundtrip_bit_exact(parts):
    d, W1, W2, v = parts
    sys = NetworkedSystem(d, W1, W2, v, tanh_activation(d.size))
    back = system_from_dict(json.loads(json.dumps(system_to_dict(sys))))
    for name in ("d", "W1", "W2", "v"):
        np.testing.assert_array_equal(getattr(back, name), getattr(sys, name))


def test_lurie_roundtrip_through_file(tmp_path, rng):
    A = rng.standard_normal((3, 3))
    B = rng.standard_normal((3, 2))
    C = rng.standard_normal((2, 3))
    box = (-np.ones(3), 2 * np.ones(3))
    for phi in (tanh_diagonal(2), linear_feedback(rng.standard_normal((2, 2)))):
        sys = LurieSystem(A, B, C, phi, domain=box)
        path = tmp_path / "sys.json"
        write_system(path, sys)
        back = read_system(path)
        np.testing.assert_array_equal(back.A, A)
        np.testing.assert_array_equal(back.B, B)
        np.testing.assert_array_equal(back.C, C)
        np.testing.assert_array_equal(back.domain[1], box[1])
        assert back.phi.kind == phi.kind
        x = rng.standard_normal(3)
        np.testing.assert_array_equal(back.rhs(0.0, x), sys.rhs(0.0, x))


def test_presets_roundtrip(tmp_path):
    for name, kw in (("hopfield-ex5", {"alpha": 1.5}), ("opinion-ex6", {"u": 0.5}),
                     ("power-2bus", {"params": {"a": 2.0}})):
        sys = preset(name, **kw)
        path = tmp_path / f"{name}.json"
        write_system(path, sys)
        back = read_system(path)
        assert back.f.kind == sys.f.kind
        x = np.array([0.3, -0.7, 1.1])
        np.testing.assert_array_equal(back.rhs(0.0, x), sys.rhs(0.0, x))
    assert preset("power-2bus", params={"phi": 0.2}).f.params["phi"] == 0.2


def test_user_activation_and_sampled_lurie():
    doc = {"kind": "network", "D": [1, 1], "W1": [[0.1, 0], [0, 0.1]], "W2": [[1, 0], [0, 1]],
           "activation": {"kind": "user", "params": {"function": "atan"}},
           "domain": {"lower": [-1, -1], "upper": [1, 1]}}
    sys = system_from_dict(doc)
    assert sys.f.provenance == "sampled"
    assert system_to_dict(sys)["activation"]["params"]["function"] == "atan"
    lur = system_from_dict({"kind": "lurie", "A": [[-1, 0], [0, -1]], "B": [[1], [0]],
                            "C": [[1, 1]],
                            "nonlinearity": {"kind": "user-sampled", "params": {"function": "sin"}},
                            "domain": {"lower": [-1, -2], "upper": [1, 2]}})
    np.testing.assert_array_equal(lur.phi.sample_box[0], [-3.0])
    np.testing.assert_array_equal(lur.phi.sample_box[1], [3.0])


@pytest.mark.parametrize("doc", [
    [],
    {"kind": "graph"},
    {"kind": "network", "D": [1, 1], "W1": [[1, 0]], "W2": [[1, 0], [0, 1]]},
    {"kind": "network", "D": [1], "W1": [["x"]], "W2": [[1]]},
    {"kind": "network", "D": [1], "W1": [[1]], "W2": [[1]], "activation": {"kind": "relu"}},
    {"kind": "lurie", "A": [[1]], "B": [[1]]},
    {"kind": "lurie", "A": [[1]], "B": [[1]], "C": [[1]], "nonlinearity": {"kind": "magic"}},
    {"kind": "network", "D": [1], "W1": [[1]], "W2": [[1]],
     "domain": {"lower": [2], "upper": [1]}},
])
def test_malformed_documents(doc):
    with pytest.raises(SystemFileError):
        system_from_dict(doc)


def test_unknown_preset_and_unserialisable():
    with pytest.raises(SystemFileError):
        preset("lorenz")
    phi = affine_activation(np.eye(2), np.eye(2), np.sin, lambda z: np.diag(np.cos(z)), 1.0)
    with pytest.raises(SystemFileError):
        system_to_dict(LurieSystem(-np.eye(2), np.eye(2), np.eye(2), phi))


def test_power_preset_defaults():
    sys = preset("power-2bus")
    np.testing.assert_allclose(sys.d, [100.0, 100.0, 0.0])
    assert sys.f.params["phi"] == pytest.approx(math.pi / 4)
