"""JSON system descriptions and the named example presets.

A system document looks like::

    {"kind": "network",
     "D": [1, 1, 1], "W1": [[...]], "W2": [[...]], "v": [0, 0, 0],
     "activation": {"kind": "tanh-diagonal", "params": {}},
     "domain": {"lower": [...], "upper": [...]}}

or::

    {"kind": "lurie", "A": [[...]], "B": [[...]], "C": [[...]],
     "nonlinearity": {"kind": "linear", "params": {"K": [[...]]}}}

Floats are written with Python's shortest round-trip repr, so a
write/read cycle reproduces every matrix bit for bit.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .lurie import (
    LurieSystem,
    affine_activation,
    linear_feedback,
    tanh_diagonal,
    user_sampled,
)
from .network import (
    _ELEMENTWISE,
    HOPFIELD_EX5_W,
    OPINION_EX6_A,
    OPINION_EX6_B,
    NetworkedSystem,
    elementwise_activation,
    hopfield_network,
    odd_saturating,
    opinion_network,
    power_2bus_system,
    power_trig,
    tanh_activation,
)

__all__ = [
    "SystemFileError",
    "system_from_dict",
    "system_to_dict",
    "read_system",
    "write_system",
    "dumps",
    "PRESETS",
    "POWER_DEFAULTS",
    "preset",
]


class SystemFileError(ValueError):
    """Malformed system description."""


POWER_DEFAULTS = {
    "M1": 0.1, "M2": 0.1, "R1": 10.0, "R2": 10.0,
    "a": 1.0, "phi": math.pi / 4, "p1": 0.1, "p2": 0.1,
}


def dumps(obj):
    """Deterministic JSON text (sorted keys, shortest round-trip floats)."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _matrix(doc, key, ndim=2):
    if key not in doc:
        raise SystemFileError(f"missing field {key!r}")
    try:
        M = np.asarray(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise SystemFileError(f"field {key!r} is not numeric: {exc}") from None
    if M.ndim != ndim:
        raise SystemFileError(f"field {key!r} must be {ndim}-dimensional, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise SystemFileError(f"field {key!r} has non-finite entries")
    return M


def _domain(doc, n):
    dom = doc.get("domain")
    if dom is None:
        return None
    lo = _matrix(dom, "lower", 1)
    hi = _matrix(dom, "upper", 1)
    if lo.shape != (n,) or hi.shape != (n,) or np.any(lo > hi):
        raise SystemFileError("domain must give lower <= upper vectors of the state dimension")
    return lo, hi


def _activation(desc, q):
    kind = desc.get("kind")
    params = desc.get("params", {}) or {}
    if kind == "tanh-diagonal":
        return tanh_activation(q)
    if kind == "opinion-odd-saturating":
        return odd_saturating(q, float(params.get("slope", 1.0)))
    if kind == "power-trig":
        if q != 2:
            raise SystemFileError("power-trig activation takes a 2-dimensional input")
        return power_trig(float(params["phi"]))
    if kind == "user":
        return elementwise_activation(params.get("function", ""), q)
    raise SystemFileError(f"unknown activation kind {kind!r}")


def _network(doc):
    d = np.asarray(doc.get("D"), dtype=float)
    if d.ndim not in (1, 2):
        raise SystemFileError("D must be a vector or a diagonal matrix")
    W1 = _matrix(doc, "W1")
    W2 = _matrix(doc, "W2")
    n = W2.shape[1]
    v = _matrix(doc, "v", 1) if "v" in doc else np.zeros(n)
    desc = doc.get("activation") or {"kind": "tanh-diagonal"}
    f = _activation(desc, W2.shape[0])
    if f.kind == "tanh-diagonal" and W1.shape[1] != W2.shape[0]:
        raise SystemFileError("tanh activation needs W1 columns == W2 rows")
    return NetworkedSystem(d, W1, W2, v, f, omega=_domain(doc, n), name=doc.get("name", ""))


def _elementwise(name):
    try:
        return _ELEMENTWISE[name][:2]
    except KeyError:
        raise SystemFileError(f"unknown elementwise function {name!r}") from None


def _box_image(C, box):
    # interval image of a box under y = C x
    lo, hi = box
    mid = 0.5 * (lo + hi)
    rad = 0.5 * (hi - lo)
    c = C @ mid
    r = np.abs(C) @ rad
    return c - r, c + r


def _nonlinearity(desc, C, box):
    kind = desc.get("kind")
    params = desc.get("params", {}) or {}
    q = C.shape[0]
    if kind == "tanh-diagonal":
        return tanh_diagonal(q)
    if kind == "linear":
        return linear_feedback(_matrix(params, "K"))
    if kind == "affine-tanh":
        outer = _matrix(params, "outer")
        inner = _matrix(params, "inner")
        offset = _matrix(params, "offset", 1) if "offset" in params else None
        phi = affine_activation(outer, inner, np.tanh,
                                lambda z: np.diag(1.0 - np.tanh(z) ** 2), 1.0, offset=offset)
        phi.params["function"] = "tanh"
        return phi
    if kind == "user-sampled":
        name = params.get("function", "")
        f, df = _elementwise(name)
        if box is None:
            box = (-3.0 * np.ones(C.shape[1]), 3.0 * np.ones(C.shape[1]))
        phi = user_sampled(lambda t, y: f(y), lambda t, y: np.diag(df(y)), q, q,
                           sample_box=_box_image(C, box))
        phi.params["function"] = name
        return phi
    raise SystemFileError(f"unknown nonlinearity kind {kind!r}")


def _lurie(doc):
    A = _matrix(doc, "A")
    B = _matrix(doc, "B")
    C = _matrix(doc, "C")
    box = _domain(doc, A.shape[0])
    phi = _nonlinearity(doc.get("nonlinearity") or {"kind": "tanh-diagonal"}, C, box)
    return LurieSystem(A, B, C, phi, domain=box)


def system_from_dict(doc):
    if not isinstance(doc, dict):
        raise SystemFileError("a system description must be a JSON object")
    kind = doc.get("kind")
    try:
        if kind == "network":
            return _network(doc)
        if kind == "lurie":
            return _lurie(doc)
    except SystemFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SystemFileError(f"invalid {kind} system: {exc}") from None
    raise SystemFileError(f"kind must be 'lurie' or 'network', got {kind!r}")


def _activation_to_dict(f):
    return {"kind": f.kind, "params": dict(f.params)}


def _nonlinearity_to_dict(phi):
    if phi.kind == "tanh-diagonal":
        return {"kind": "tanh-diagonal", "params": {}}
    if phi.kind == "linear":
        return {"kind": "linear", "params": {"K": phi.params["K"].tolist()}}
    if phi.kind == "affine-tanh" and phi.params.get("function") == "tanh":
        return {"kind": "affine-tanh", "params": {
            "outer": phi.outer.tolist(),
            "inner": phi.inner.tolist(),
            "offset": np.asarray(phi.params["offset"]).tolist(),
        }}
    if phi.kind == "user-sampled" and "function" in phi.params:
        return {"kind": "user-sampled", "params": {"function": phi.params["function"]}}
    raise SystemFileError(f"cannot serialise a {phi.kind} nonlinearity built from callables")


def system_to_dict(sys):
    if isinstance(sys, NetworkedSystem):
        doc = {
            "kind": "network",
            "D": sys.d.tolist(),
            "W1": sys.W1.tolist(),
            "W2": sys.W2.tolist(),
            "v": sys.v.tolist(),
            "activation": _activation_to_dict(sys.f),
        }
        if sys.name:
            doc["name"] = sys.name
        box = sys.omega
    elif isinstance(sys, LurieSystem):
        doc = {
            "kind": "lurie",
            "A": sys.A.tolist(),
            "B": sys.B.tolist(),
            "C": sys.C.tolist(),
            "nonlinearity": _nonlinearity_to_dict(sys.phi),
        }
        box = sys.domain
    else:
        raise TypeError(f"cannot serialise {type(sys).__name__}")
    if box is not None:
        doc["domain"] = {"lower": box[0].tolist(), "upper": box[1].tolist()}
    return doc


def read_system(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SystemFileError(f"{path}: not valid JSON ({exc})") from None
    return system_from_dict(doc)


def write_system(path, sys):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(system_to_dict(sys)))


# --------------------------------------------------------------------------
# presets


def _hopfield(alpha=1.5, **_):
    return hopfield_network(HOPFIELD_EX5_W, alpha)


def _opinion(u=0.5, **_):
    return opinion_network(1.0, u, OPINION_EX6_A, OPINION_EX6_B)


def _power(params=None, **_):
    p = dict(POWER_DEFAULTS)
    p.update(params or {})
    return power_2bus_system(**p)


PRESETS = {
    "hopfield-ex5": _hopfield,
    "opinion-ex6": _opinion,
    "power-2bus": _power,
}


def preset(name, **kwargs):
    """Build a named example; unset keyword arguments fall back to defaults."""
    try:
        build = PRESETS[name]
    except KeyError:
        raise SystemFileError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    kwargs = {k: v for k, v in kwargs.items() if v is not None}
    return build(**kwargs)
