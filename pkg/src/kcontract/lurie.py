"""Lurie systems x' = Ax - B Phi(t, Cx) and their k-contraction certificates.

A certificate is a witness ``(k, Q, eta1, eta2)`` with ``Q`` symmetric
positive definite such that

* the k-ARI holds: with
  ``S = Q A Q^-1 + Q^-1 A^T Q + (eta1/k) I + Q B B^T Q + Q^-1 C^T C Q^-1``
  the sum of the k largest eigenvalues of ``S`` is <= 0, and
* one of the two gain conditions holds for every ``(t, y)``:
  ``sum_k lambda_i(Q^-1 C^T (J^T J - I) C Q^-1) <= -eta2`` (C-side) or
  ``sum_k lambda_i(Q B (J J^T - I) B^T Q) <= -eta2`` (B-side),
  where ``J`` is the Jacobian of ``Phi``.

If ``eta1 + eta2 > 0`` the closed loop satisfies
``mu_{2,Q^(k)}(J_cl^[k](t, x)) <= -(eta1 + eta2)/2`` everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import qmc

from .compound import add_compound, as_matrix, mult_compound
from .measures import (
    bottom_k_eig_sum,
    lambda_max,
    psd_tolerance,
    singular_values,
    top_k_eig_sum,
)

__all__ = [
    "NonlinearityDescriptor",
    "LurieSystem",
    "Certificate",
    "AriCheck",
    "GainCheck",
    "ScalarPResult",
    "tanh_diagonal",
    "linear_feedback",
    "affine_activation",
    "user_sampled",
    "closed_loop_jacobian",
    "k_ari_matrix",
    "k_ari_check",
    "gain_condition_check",
    "default_samples",
    "certify_lurie",
    "recertify",
    "scale_for_gain",
    "certify_with_gain",
    "scalar_p_search",
    "lemma1_gap",
]

DEFAULT_SAMPLES = 512
DEFAULT_BACKOFF = 0.05
STATUSES = ("certified", "infeasible", "sampled-only")
SIDES = ("C-side", "B-side", "both", "none")


# --------------------------------------------------------------------------
# nonlinearities


@dataclass
class NonlinearityDescriptor:
    """The feedback map Phi: R_+ x R^q -> R^m together with its Jacobian.

    ``gain_bound`` bounds ``sigma_1(J_Phi)`` uniformly; its provenance is
    ``"analytic"`` (a proven bound) or ``"sampled"`` (an estimate).

    When Phi has the form ``outer @ f(inner @ y) + offset`` with
    ``||J_f||_2 <= inner_gain`` analytically, ``outer``/``inner``/``inner_gain``
    are recorded so the gain conditions can use singular-value products
    instead of the cruder norm bound.
    """

    kind: str
    in_dim: int
    out_dim: int
    eval: Callable
    jac: Callable
    gain_bound: Optional[float] = None
    gain_provenance: Optional[str] = None
    outer: Optional[np.ndarray] = None
    inner: Optional[np.ndarray] = None
    inner_gain: Optional[float] = None
    time_varying: bool = False
    sample_box: Optional[tuple] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("tanh-diagonal", "affine-tanh", "user-sampled", "linear"):
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if self.gain_provenance not in (None, "analytic", "sampled"):
            raise ValueError(f"bad gain provenance {self.gain_provenance!r}")
        if self.kind == "tanh-diagonal" and (
            self.gain_bound != 1.0 or self.gain_provenance != "analytic"
        ):
            raise ValueError("tanh-diagonal nonlinearity must carry the analytic gain 1")

    @property
    def analytic(self):
        return self.gain_provenance == "analytic" and self.gain_bound is not None

    @property
    def structured(self):
        return self.analytic and self.outer is not None and self.inner is not None

    def jacobian(self, t, y):
        J = np.asarray(self.jac(t, y), dtype=float)
        if J.shape != (self.out_dim, self.in_dim):
            raise ValueError(
                f"Jacobian of Phi has shape {J.shape}, expected {(self.out_dim, self.in_dim)}"
            )
        if not np.all(np.isfinite(J)):
            raise ValueError(f"non-finite Jacobian of Phi at t={t}, y={y}")
        return J

    def scaled(self, c):
        """Descriptor of ``c * Phi``."""
        c = float(c)
        ev, jac = self.eval, self.jac
        return NonlinearityDescriptor(
            kind=self.kind if self.kind != "tanh-diagonal" else "affine-tanh",
            in_dim=self.in_dim,
            out_dim=self.out_dim,
            eval=lambda t, y: c * np.asarray(ev(t, y)),
            jac=lambda t, y: c * np.asarray(jac(t, y)),
            gain_bound=None if self.gain_bound is None else abs(c) * self.gain_bound,
            gain_provenance=self.gain_provenance,
            outer=None if self.outer is None else c * self.outer,
            inner=self.inner,
            inner_gain=self.inner_gain,
            time_varying=self.time_varying,
            sample_box=self.sample_box,
            params=dict(self.params, scale=c * self.params.get("scale", 1.0)),
        )


def tanh_diagonal(q):
    """Phi(y) = tanh(y) componentwise; ||J_Phi||_2 <= 1."""
    eye = np.eye(q)
    return NonlinearityDescriptor(
        kind="tanh-diagonal",
        in_dim=q,
        out_dim=q,
        eval=lambda t, y: np.tanh(y),
        jac=lambda t, y: np.diag(1.0 - np.tanh(y) ** 2),
        gain_bound=1.0,
        gain_provenance="analytic",
        outer=eye,
        inner=eye,
        inner_gain=1.0,
    )


def linear_feedback(K):
    """Phi(y) = K y, with the exact gain sigma_1(K)."""
    K = as_matrix(K, "K")
    m, q = K.shape
    return NonlinearityDescriptor(
        kind="linear",
        in_dim=q,
        out_dim=m,
        eval=lambda t, y: K @ y,
        jac=lambda t, y: K,
        gain_bound=float(singular_values(K)[0]),
        gain_provenance="analytic",
        outer=K,
        inner=np.eye(q),
        inner_gain=1.0,
        params={"K": K},
    )


def affine_activation(outer, inner, f, f_jac, f_gain, provenance="analytic", offset=None):
    """Phi(y) = outer @ f(inner @ y) + offset.

    ``f_gain`` bounds ``||J_f||_2``; with ``provenance="sampled"`` the bound is
    only an estimate and certificates built on it are labelled sampled-only.
    """
    outer = as_matrix(outer, "outer")
    inner = as_matrix(inner, "inner")
    m, p = outer.shape
    if offset is None:
        offset = np.zeros(m)
    offset = np.asarray(offset, dtype=float)

    def ev(t, y):
        return outer @ np.asarray(f(inner @ y)) + offset

    def jac(t, y):
        return outer @ np.asarray(f_jac(inner @ y)) @ inner

    bound = f_gain * singular_values(outer)[0] * singular_values(inner)[0]
    return NonlinearityDescriptor(
        kind="affine-tanh",
        in_dim=inner.shape[1],
        out_dim=m,
        eval=ev,
        jac=jac,
        gain_bound=float(bound),
        gain_provenance=provenance,
        outer=outer,
        inner=inner,
        inner_gain=float(f_gain),
        params={"offset": offset},
    )


def user_sampled(eval, jac, in_dim, out_dim, sample_box=None, time_varying=False):
    """An arbitrary C^1 nonlinearity; gain conditions are checked on samples only."""
    return NonlinearityDescriptor(
        kind="user-sampled",
        in_dim=in_dim,
        out_dim=out_dim,
        eval=eval,
        jac=jac,
        time_varying=time_varying,
        sample_box=sample_box,
    )


# --------------------------------------------------------------------------
# systems


@dataclass
class LurieSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    phi: NonlinearityDescriptor
    domain: Optional[tuple] = None  # optional state box (lower, upper)

    def __post_init__(self):
        self.A = as_matrix(self.A, "A")
        self.B = as_matrix(self.B, "B")
        self.C = as_matrix(self.C, "C")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {self.B.shape}")
        if self.C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {self.C.shape}")
        if self.phi.in_dim != self.C.shape[0] or self.phi.out_dim != self.B.shape[1]:
            raise ValueError(
                f"Phi maps R^{self.phi.in_dim} -> R^{self.phi.out_dim}, but C is "
                f"{self.C.shape} and B is {self.B.shape}"
            )

    @property
    def n(self):
        return self.A.shape[0]

    def rhs(self, t, x):
        x = np.asarray(x, dtype=float)
        return self.A @ x - self.B @ np.asarray(self.phi.eval(t, self.C @ x), dtype=float)

    def jacobian(self, t, x):
        return closed_loop_jacobian(self, t, x)


def closed_loop_jacobian(sys, t, x):
    """J(t, x) = A - B J_Phi(t, Cx) C."""
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.n,):
        raise ValueError(f"state must have shape ({sys.n},), got {x.shape}")
    return sys.A - sys.B @ sys.phi.jacobian(t, sys.C @ x) @ sys.C


# --------------------------------------------------------------------------
# certificates


@dataclass
class Certificate:
    """Witness for a k-contraction sufficient condition.

    ``margin`` is the worst tolerance-adjusted slack: each non-strict matrix
    inequality contributes ``slack + tol`` and the rate condition contributes
    ``eta1 + eta2 - tol``, so ``margin > 0`` exactly when every check passes.
    Networked-system certificates report ``alpha_k**2 * k - lhs`` instead.
    """

    k: int
    Q: np.ndarray
    eta1: float
    eta2: float
    status: str
    margin: float
    which_gain: str
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Q = as_matrix(self.Q, "Q")
        if self.status not in STATUSES:
            raise ValueError(f"bad certificate status {self.status!r}")
        if self.which_gain not in SIDES:
            raise ValueError(f"bad gain side {self.which_gain!r}")
        _check_spd(self.Q)
        if self.status == "certified" and not (self.eta1 + self.eta2 > 0 and self.margin > 0):
            raise ValueError("a certified certificate needs eta1 + eta2 > 0 and margin > 0")

    @property
    def rate(self):
        return 0.5 * (self.eta1 + self.eta2)

    @property
    def certified(self):
        return self.status == "certified"

    def weight(self):
        """Q^(k): the weight of the norm |z|_{2,Q^(k)} in which J^[k] contracts."""
        return mult_compound(self.Q, self.k)

    def to_dict(self):
        out = {
            "k": int(self.k),
            "status": self.status,
            "rate": float(self.rate),
            "eta1": float(self.eta1),
            "eta2": float(self.eta2),
            "margin": float(self.margin),
            "which_gain": self.which_gain,
            "Q": self.Q.tolist(),
        }
        out["details"] = _jsonable(self.details)
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _check_spd(Q):
    n = Q.shape[0]
    if Q.shape != (n, n):
        raise ValueError(f"Q must be square, got {Q.shape}")
    scale = max(1.0, float(np.abs(Q).max()))
    if np.abs(Q - Q.T).max() > 1e-10 * scale:
        raise ValueError("Q must be symmetric")
    eig = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    if eig[0] <= 1e-15 * scale:
        raise ValueError(f"Q must be positive definite (lambda_min = {eig[0]:.3e})")
    if eig[-1] / eig[0] > 1e12:
        raise np.linalg.LinAlgError(f"Q is ill-conditioned (cond = {eig[-1] / eig[0]:.3e})")
    return Q


@dataclass
class AriCheck:
    holds: bool
    margin: float
    top_k_sum: float
    tol: float


@dataclass
class GainCheck:
    eta2: float
    side: str
    provenance: str
    eta2_c: float
    eta2_b: float
    sampled_eta2_c: Optional[float] = None
    sampled_eta2_b: Optional[float] = None
    tol: float = 0.0


def _ari_matrix_s(sys, Q, eta1, k):
    Qi = np.linalg.inv(Q)
    n = sys.n
    return (
        Q @ sys.A @ Qi
        + Qi @ sys.A.T @ Q
        + (eta1 / k) * np.eye(n)
        + Q @ sys.B @ sys.B.T @ Q
        + Qi @ sys.C.T @ sys.C @ Qi
    )


def k_ari_check(sys, k, Q, eta1):
    """Evaluate the k-ARI through ``S``: holds iff sum of top-k eigenvalues <= tol."""
    Q = _check_spd(as_matrix(Q, "Q"))
    if not 1 <= k <= sys.n:
        raise ValueError(f"k must lie in [1, {sys.n}], got {k}")
    S = _ari_matrix_s(sys, Q, eta1, k)
    S = 0.5 * (S + S.T)
    value = top_k_eig_sum(S, k)
    tol = psd_tolerance(S)
    return AriCheck(holds=value <= tol, margin=-value, top_k_sum=value, tol=tol)


def k_ari_matrix(sys, k, Q, eta1):
    """The k-ARI left-hand side built explicitly from compound matrices.

    P^(k) A^[k] + (A^[k])^T P^(k) + eta1 P^(k)
        + Q^(k) ((Q B B^T Q)^[k] + (Q^-1 C^T C Q^-1)^[k]) Q^(k)
    with P = Q Q.  Much larger than ``S``; used to cross-check k_ari_check.
    """
    Q = _check_spd(as_matrix(Q, "Q"))
    Qi = np.linalg.inv(Q)
    Pk = mult_compound(Q @ Q, k)
    Qk = mult_compound(Q, k)
    Ak = add_compound(sys.A, k)
    inner = add_compound(Q @ sys.B @ sys.B.T @ Q, k) + add_compound(
        Qi @ sys.C.T @ sys.C @ Qi, k
    )
    M = Pk @ Ak + Ak.T @ Pk + eta1 * Pk + Qk @ inner @ Qk
    return 0.5 * (M + M.T)


def default_samples(phi, n=DEFAULT_SAMPLES, seed=0, box=None, t_range=(0.0, 10.0)):
    """Latin-hypercube samples ``(t, y)`` over a declared box."""
    box = box if box is not None else phi.sample_box
    if box is None:
        raise ValueError(
            "sampled gain conditions need a sample box (phi.sample_box) or explicit samples"
        )
    lower = np.asarray(box[0], dtype=float)
    upper = np.asarray(box[1], dtype=float)
    if lower.shape != (phi.in_dim,) or upper.shape != (phi.in_dim,):
        raise ValueError(f"sample box must have {phi.in_dim} coordinates")
    d = phi.in_dim + (1 if phi.time_varying else 0)
    u = qmc.LatinHypercube(d=d, seed=seed).random(n)
    ys = lower + u[:, : phi.in_dim] * (upper - lower)
    if phi.time_varying:
        ts = t_range[0] + u[:, -1] * (t_range[1] - t_range[0])
    else:
        ts = np.zeros(n)
    return list(zip(ts, ys))


def _horn_bound(outer, inner_right, gain, k):
    # sum_{i<=k} sigma_i^2(outer @ J_f @ inner_right) <= gain^2 * sum sigma_i^2(outer) sigma_i^2(inner_right)
    so = singular_values(outer)
    si = singular_values(inner_right)
    r = min(k, len(so), len(si))
    return gain**2 * float(np.sum(so[:r] ** 2 * si[:r] ** 2))


def _analytic_gain(sys, k, Q, Qi):
    phi = sys.phi
    NC = Qi @ sys.C.T @ sys.C @ Qi
    NB = Q @ sys.B @ sys.B.T @ Q
    NC = 0.5 * (NC + NC.T)
    NB = 0.5 * (NB + NB.T)
    c2 = phi.gain_bound**2 - 1.0
    # J^T J <= q^2 I gives G_C <= (q^2 - 1) N_C (Loewner), likewise on the B side.
    eta_c = -top_k_eig_sum(c2 * NC, k)
    eta_b = -top_k_eig_sum(c2 * NB, k)
    if phi.structured:
        horn_c = _horn_bound(phi.outer, phi.inner @ sys.C @ Qi, phi.inner_gain, k)
        horn_b = _horn_bound(Q @ sys.B @ phi.outer, phi.inner, phi.inner_gain, k)
        eta_c = max(eta_c, bottom_k_eig_sum(NC, k) - horn_c)
        eta_b = max(eta_b, bottom_k_eig_sum(NB, k) - horn_b)
    return eta_c, eta_b


def _sampled_gain(sys, k, Q, Qi, samples):
    phi = sys.phi
    worst_c = -math.inf
    worst_b = -math.inf
    CQi = sys.C @ Qi
    QB = Q @ sys.B
    Iq = np.eye(phi.in_dim)
    Im = np.eye(phi.out_dim)
    for t, y in samples:
        J = phi.jacobian(t, np.asarray(y, dtype=float))
        worst_c = max(worst_c, top_k_eig_sum(CQi.T @ (J.T @ J - Iq) @ CQi, k))
        worst_b = max(worst_b, top_k_eig_sum(QB @ (J @ J.T - Im) @ QB.T, k))
    return -worst_c, -worst_b


def gain_condition_check(sys, k, Q, samples=None, *, n_samples=DEFAULT_SAMPLES, seed=0):
    """Best eta2 for which the C-side or B-side gain condition holds.

    With an analytic gain bound the returned eta2 is proven; otherwise it is
    the value achieved over ``samples`` (default: Latin hypercube over
    ``phi.sample_box``) and the provenance is ``"sampled-only"``.
    """
    Q = _check_spd(as_matrix(Q, "Q"))
    Qi = np.linalg.inv(Q)
    if not 1 <= k <= sys.n:
        raise ValueError(f"k must lie in [1, {sys.n}], got {k}")

    s_c = s_b = None
    if samples is None and not sys.phi.analytic:
        samples = default_samples(sys.phi, n=n_samples, seed=seed)
    if samples is not None:
        if len(samples) == 0:
            raise ValueError("samples must be non-empty")
        s_c, s_b = _sampled_gain(sys, k, Q, Qi, samples)

    if sys.phi.analytic:
        eta_c, eta_b = _analytic_gain(sys, k, Q, Qi)
        provenance = "analytic"
    else:
        eta_c, eta_b = s_c, s_b
        provenance = "sampled-only"

    tol = 1e-9 * max(1.0, abs(eta_c), abs(eta_b))
    eta2 = max(eta_c, eta_b)
    if eta2 < -tol:
        side = "none"
    elif abs(eta_c - eta_b) <= tol:
        side = "both"
    else:
        side = "C-side" if eta_c > eta_b else "B-side"
    return GainCheck(
        eta2=eta2,
        side=side,
        provenance=provenance,
        eta2_c=eta_c,
        eta2_b=eta_b,
        sampled_eta2_c=s_c,
        sampled_eta2_b=s_b,
        tol=tol,
    )


def _split_backoff(eta1_max, eta2_max, backoff):
    total = eta1_max + eta2_max
    shrink = backoff * total
    s2 = shrink / 2
    if eta2_max >= 0:
        s2 = min(s2, eta2_max)
    return eta1_max - (shrink - s2), eta2_max - s2


def _assemble(sys, k, Q, eta1_max, gain, backoff, details):
    total = eta1_max + gain.eta2
    S0 = _ari_matrix_s(sys, Q, 0.0, k)
    rate_tol = psd_tolerance(S0)
    if total > rate_tol:
        eta1, eta2 = _split_backoff(eta1_max, gain.eta2, backoff)
    else:
        eta1, eta2 = eta1_max, gain.eta2
    ari = k_ari_check(sys, k, Q, eta1)
    gain_slack = gain.eta2 - eta2
    margin = min(ari.margin + ari.tol, gain_slack + gain.tol, eta1 + eta2 - rate_tol)
    ok = ari.holds and gain_slack >= -gain.tol and eta1 + eta2 > rate_tol
    if not ok:
        status = "infeasible"
    elif gain.provenance == "analytic":
        status = "certified"
    else:
        status = "sampled-only"
    details = dict(details)
    details.update(
        ari_top_k_sum=ari.top_k_sum,
        ari_slack=ari.margin,
        ari_tol=ari.tol,
        gain_slack=gain_slack,
        gain_tol=gain.tol,
        eta2_c=gain.eta2_c,
        eta2_b=gain.eta2_b,
        gain_provenance=gain.provenance,
        eta1_max=eta1_max,
        eta2_max=gain.eta2,
    )
    if gain.sampled_eta2_c is not None:
        details.update(sampled_eta2_c=gain.sampled_eta2_c, sampled_eta2_b=gain.sampled_eta2_b)
    return Certificate(
        k=k, Q=Q, eta1=eta1, eta2=eta2, status=status, margin=margin,
        which_gain=gain.side, details=details,
    )


def _eta1_max(sys, k, Q):
    return -top_k_eig_sum(_ari_matrix_s(sys, Q, 0.0, k), k)


def _best_scalar_p(sys, k, samples):
    """Maximise eta1_max(p) + eta2_max(p) over P = p I."""
    unit = gain_condition_check(sys, k, np.eye(sys.n), samples)
    c, b = unit.eta2_c, unit.eta2_b
    AAt = sys.A + sys.A.T
    BBt = sys.B @ sys.B.T
    CtC = sys.C.T @ sys.C

    def total(logp):
        p = math.exp(logp)
        eta1 = -top_k_eig_sum(AAt + p * BBt + CtC / p, k)
        return eta1 + max(c / p, b * p)

    grid = np.linspace(-18.0, 18.0, 73)
    values = [total(g) for g in grid]
    i = int(np.argmax(values))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    best_logp, best = grid[i], values[i]
    if hi > lo:
        res = minimize_scalar(lambda g: -total(g), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10})
        if -res.fun > best:
            best_logp, best = res.x, -res.fun
    return math.exp(best_logp)


def certify_lurie(sys, k, strategy="scalar-P", Q=None, *, samples=None,
                  backoff=DEFAULT_BACKOFF):
    """Search (scalar-P) or check (given-Q) a k-contraction certificate.

    ``scalar-P`` restricts to ``P = p I`` and picks ``p`` maximising
    ``eta1 + eta2``; ``given-Q`` evaluates the supplied ``Q``.  When the total
    slack is positive a fraction ``backoff`` of it is held back so that the
    k-ARI is satisfied strictly.
    """
    if not 1 <= k <= sys.n:
        raise ValueError(f"k must lie in [1, {sys.n}], got {k}")
    if samples is None and not sys.phi.analytic:
        samples = default_samples(sys.phi)
    if strategy == "scalar-P":
        p = _best_scalar_p(sys, k, samples)
        Q = math.sqrt(p) * np.eye(sys.n)
        details = {"strategy": "scalar-P", "p": p}
    elif strategy == "given-Q":
        if Q is None:
            raise ValueError("given-Q strategy needs a candidate Q")
        Q = _check_spd(as_matrix(Q, "Q"))
        details = {"strategy": "given-Q"}
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    gain = gain_condition_check(sys, k, Q, samples)
    return _assemble(sys, k, Q, _eta1_max(sys, k, Q), gain, backoff, details)


def recertify(sys, cert, ell, samples=None):
    """Re-check ``cert``'s (Q, eta1, eta2) at order ``ell`` without changing them."""
    if not 1 <= ell <= sys.n:
        raise ValueError(f"ell must lie in [1, {sys.n}], got {ell}")
    if samples is None and not sys.phi.analytic:
        samples = default_samples(sys.phi)
    ari = k_ari_check(sys, ell, cert.Q, cert.eta1)
    gain = gain_condition_check(sys, ell, cert.Q, samples)
    gain_slack = gain.eta2 - cert.eta2
    rate_tol = psd_tolerance(_ari_matrix_s(sys, cert.Q, 0.0, ell))
    total = cert.eta1 + cert.eta2
    ok = ari.holds and gain_slack >= -gain.tol and total > rate_tol
    if not ok:
        status = "infeasible"
    else:
        status = "certified" if gain.provenance == "analytic" else "sampled-only"
    margin = min(ari.margin + ari.tol, gain_slack + gain.tol, total - rate_tol)
    return Certificate(
        k=ell, Q=cert.Q, eta1=cert.eta1, eta2=cert.eta2, status=status, margin=margin,
        which_gain=gain.side,
        details={"recertified_from": cert.k, "ari_slack": ari.margin, "gain_slack": gain_slack},
    )


# --------------------------------------------------------------------------
# gain scaling, scalar-P closed form, Horn-type gap


def scale_for_gain(sys, q):
    """Equivalent system with B -> qB and Phi -> Phi/q (same closed loop)."""
    if q <= 0:
        raise ValueError(f"gain q must be positive, got {q}")
    return LurieSystem(sys.A, q * sys.B, sys.C, sys.phi.scaled(1.0 / q))


def certify_with_gain(sys, k, q, Q=None, *, backoff=DEFAULT_BACKOFF):
    """Decoupled test: sigma_1(J_Phi) <= q plus the k-ARI of the q-scaled system.

    After scaling, the small-gain condition holds with eta2 = 0, so the
    certificate has rate eta1/2.  ``q`` must dominate an analytic gain bound
    for the result to count as certified.
    """
    scaled = scale_for_gain(sys, q)
    if Q is None:
        AAt = scaled.A + scaled.A.T
        BBt = scaled.B @ scaled.B.T
        CtC = scaled.C.T @ scaled.C

        def neg_eta1(logp):
            p = math.exp(logp)
            return top_k_eig_sum(AAt + p * BBt + CtC / p, k)

        grid = np.linspace(-18.0, 18.0, 73)
        i = int(np.argmin([neg_eta1(g) for g in grid]))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        res = minimize_scalar(neg_eta1, bounds=(lo, hi), method="bounded")
        logp = res.x if res.fun < neg_eta1(grid[i]) else grid[i]
        Q = math.exp(0.5 * logp) * np.eye(sys.n)
    Q = _check_spd(as_matrix(Q, "Q"))
    bound = sys.phi.gain_bound
    if bound is None or bound > q * (1 + 1e-12):
        # sigma_1(J_Phi) <= q is not established
        return Certificate(
            k=k, Q=Q, eta1=_eta1_max(scaled, k, Q), eta2=0.0, status="infeasible",
            margin=-math.inf, which_gain="none",
            details={"strategy": "gain-q", "q": q, "gain_bound": bound},
        )
    provenance = "analytic" if sys.phi.analytic else "sampled-only"
    gain = GainCheck(eta2=0.0, side="both", provenance=provenance, eta2_c=0.0, eta2_b=0.0,
                     tol=1e-9)
    return _assemble(scaled, k, Q, _eta1_max(scaled, k, Q), gain, backoff,
                     {"strategy": "gain-q", "q": q, "gain_bound": bound})


@dataclass
class ScalarPResult:
    p: float
    feasible: bool
    g_min: float
    alpha_k: float


def scalar_p_search(sys, k, gamma, alpha_k=None):
    """Closed-form scalar-P choice for the k-ARI of (A, gamma I, I).

    Minimises g(p) = gamma^2 p + 1/p at p* = 1/gamma, g(p*) = 2 gamma; the
    k-ARI then admits eta1 > 0 iff 2 gamma < 2 alpha_k, where
    ``alpha_k = -(top-k eigenvalue sum of A + A^T) / (2k)`` (the networked
    alpha_k when A = -D).
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if alpha_k is None:
        if sys is None:
            raise ValueError("need a system or an explicit alpha_k")
        alpha_k = -top_k_eig_sum(sys.A + sys.A.T, k) / (2 * k)
    p = 1.0 / gamma
    g = gamma**2 * p + 1.0 / p
    return ScalarPResult(p=p, feasible=g < 2 * alpha_k, g_min=g, alpha_k=alpha_k)


def lemma1_gap(M, N, k):
    """lambda_max((-MN - N^T M^T - N^T N)^[k] - (M M^T)^[k]); never positive in exact arithmetic."""
    M = as_matrix(M, "M")
    N = as_matrix(N, "N")
    n, m = M.shape
    if N.shape != (m, n):
        raise ValueError(f"N must be {m} x {n} to match M {M.shape}, got {N.shape}")
    lhs = add_compound(-M @ N - N.T @ M.T - N.T @ N, k)
    rhs = add_compound(M @ M.T, k)
    return lambda_max(lhs - rhs)
