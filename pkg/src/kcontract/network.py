"""Networked systems x' = -D x + W1 f(W2 x) + v and their k-contraction test.

The test: with alpha_k the mean of the k smallest entries of D,

    alpha_k > 0   and   sup ||J_f||_2^2 * sum_{i<=k} s_i(W1)^2 s_i(W2)^2 < alpha_k^2 k.

When it passes, an explicit Lurie witness is built: the system is rewritten
as (A, B, C) = (-D, gamma I, I) with Phi(y) = -(W1 f(W2 y) + v)/gamma,
gamma = (alpha_k + sqrt(lhs/k))/2 and P = I/gamma, which yields concrete
(Q, eta1, eta2) through :func:`kcontract.lurie.certify_lurie`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .compound import as_matrix
from .lurie import Certificate, LurieSystem, affine_activation, certify_lurie
from .measures import singular_values

__all__ = [
    "ActivationDescriptor",
    "NetworkedSystem",
    "tanh_activation",
    "odd_saturating",
    "power_trig",
    "elementwise_activation",
    "alpha_k",
    "network_lhs",
    "net_k_contraction_check",
    "HopfieldThresholds",
    "hopfield_thresholds",
    "hopfield_network",
    "alpha_threshold",
    "opinion_network",
    "opinion_check",
    "opinion_u_threshold",
    "power_2bus_system",
    "power_2bus_check",
    "PowerCheck",
    "HOPFIELD_EX5_W",
    "OPINION_EX6_A",
    "OPINION_EX6_B",
]

HOPFIELD_EX5_W = np.array([[0.0, 1.0, 1.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
OPINION_EX6_A = np.eye(3) - np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
OPINION_EX6_B = np.array([0.2, 0.0, -0.2])

DEFAULT_SAMPLES = 512


@dataclass
class ActivationDescriptor:
    """Activation f: R^q -> R^m with Jacobian and a bound on ||J_f||_2.

    ``provenance`` is ``"analytic"`` for proven bounds and ``"sampled"`` when
    the bound must be estimated over the domain at check time (then
    ``jac_norm_bound`` may be None).
    """

    kind: str
    in_dim: int
    out_dim: int
    eval: Callable
    jac: Callable
    jac_norm_bound: Optional[float]
    provenance: str
    uniformly_bounded: bool
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("tanh-diagonal", "opinion-odd-saturating", "power-trig", "user"):
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.provenance not in ("analytic", "sampled"):
            raise ValueError(f"bad provenance {self.provenance!r}")
        if self.provenance == "analytic" and self.jac_norm_bound is None:
            raise ValueError("an analytic activation needs jac_norm_bound")


def tanh_activation(q):
    return ActivationDescriptor(
        kind="tanh-diagonal",
        in_dim=q,
        out_dim=q,
        eval=np.tanh,
        jac=lambda z: np.diag(1.0 - np.tanh(z) ** 2),
        jac_norm_bound=1.0,
        provenance="analytic",
        uniformly_bounded=True,
    )


def odd_saturating(q, slope=1.0):
    """f(z) = tanh(slope * z) componentwise: odd, saturating, |f'| <= slope."""
    if slope <= 0:
        raise ValueError("slope must be positive")
    return ActivationDescriptor(
        kind="opinion-odd-saturating",
        in_dim=q,
        out_dim=q,
        eval=lambda z: np.tanh(slope * z),
        jac=lambda z: np.diag(slope * (1.0 - np.tanh(slope * z) ** 2)),
        jac_norm_bound=float(slope),
        provenance="analytic",
        uniformly_bounded=True,
        params={"slope": float(slope)},
    )


def power_trig(phi):
    """f(z) = [sin(z1 + phi), sin(z1 - phi), z2]; ||J_f||_2^2 <= 1 + |cos 2 phi|."""

    def ev(z):
        return np.array([math.sin(z[0] + phi), math.sin(z[0] - phi), z[1]])

    def jac(z):
        return np.array([[math.cos(z[0] + phi), 0.0], [math.cos(z[0] - phi), 0.0], [0.0, 1.0]])

    return ActivationDescriptor(
        kind="power-trig",
        in_dim=2,
        out_dim=3,
        eval=ev,
        jac=jac,
        jac_norm_bound=math.sqrt(1.0 + abs(math.cos(2.0 * phi))),
        provenance="analytic",
        uniformly_bounded=False,
        params={"phi": float(phi)},
    )


_ELEMENTWISE = {
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2, True),
    "atan": (np.arctan, lambda z: 1.0 / (1.0 + z**2), True),
    "sin": (np.sin, np.cos, True),
    "softsign": (lambda z: z / (1.0 + np.abs(z)), lambda z: 1.0 / (1.0 + np.abs(z)) ** 2, True),
    "logistic": (lambda z: 1.0 / (1.0 + np.exp(-z)),
                 lambda z: np.exp(-z) / (1.0 + np.exp(-z)) ** 2, True),
    "cubic": (lambda z: z - z**3 / 3.0, lambda z: 1.0 - z**2, False),
}


def elementwise_activation(name, q):
    """A named componentwise activation whose Jacobian bound is estimated by sampling."""
    try:
        f, df, bounded = _ELEMENTWISE[name]
    except KeyError:
        raise ValueError(f"unknown elementwise activation {name!r}; "
                         f"choose from {sorted(_ELEMENTWISE)}") from None
    return ActivationDescriptor(
        kind="user",
        in_dim=q,
        out_dim=q,
        eval=f,
        jac=lambda z: np.diag(df(np.asarray(z, dtype=float))),
        jac_norm_bound=None,
        provenance="sampled",
        uniformly_bounded=bounded,
        params={"function": name},
    )


@dataclass
class NetworkedSystem:
    """x' = -D x + W1 f(W2 x) + v on an (optional) axis-aligned box ``omega``."""

    d: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    v: np.ndarray
    f: ActivationDescriptor
    omega: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        if d.ndim == 2:
            if d.shape[0] != d.shape[1] or np.any(d - np.diag(np.diag(d))):
                raise ValueError("D must be diagonal")
            d = np.diag(d).copy()
        if d.ndim != 1 or not np.all(np.isfinite(d)):
            raise ValueError("D must be a finite vector or diagonal matrix")
        self.d = d
        n = d.size
        self.W1 = as_matrix(self.W1, "W1")
        self.W2 = as_matrix(self.W2, "W2")
        self.v = np.asarray(self.v, dtype=float).reshape(-1)
        if self.W1.shape != (n, self.f.out_dim):
            raise ValueError(f"W1 must be {n} x {self.f.out_dim}, got {self.W1.shape}")
        if self.W2.shape != (self.f.in_dim, n):
            raise ValueError(f"W2 must be {self.f.in_dim} x {n}, got {self.W2.shape}")
        if self.v.shape != (n,):
            raise ValueError(f"v must have length {n}")
        if self.omega is not None:
            lo = np.asarray(self.omega[0], dtype=float)
            hi = np.asarray(self.omega[1], dtype=float)
            if lo.shape != (n,) or hi.shape != (n,) or np.any(lo > hi):
                raise ValueError("omega must be a box (lower, upper) in R^n")
            self.omega = (lo, hi)

    @property
    def n(self):
        return self.d.size

    @property
    def D(self):
        return np.diag(self.d)

    def rhs(self, t, x):
        x = np.asarray(x, dtype=float)
        return -self.d * x + self.W1 @ np.asarray(self.f.eval(self.W2 @ x)) + self.v

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        return -np.diag(self.d) + self.W1 @ np.asarray(self.f.jac(self.W2 @ x)) @ self.W2

    def as_lurie(self, gamma, jac_bound=None):
        """Lurie form (A, B, C) = (-D, gamma I, I), Phi(y) = -(W1 f(W2 y) + v)/gamma.

        ``jac_bound`` overrides the activation's bound (e.g. with a sampled
        estimate); the rewritten nonlinearity then treats it as given.
        """
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        if jac_bound is None:
            if self.f.jac_norm_bound is None:
                raise ValueError("activation has no Jacobian bound; pass jac_bound")
            jac_bound = self.f.jac_norm_bound
            provenance = self.f.provenance
        else:
            provenance = "analytic"
        phi = affine_activation(
            -self.W1 / gamma,
            self.W2,
            self.f.eval,
            self.f.jac,
            jac_bound,
            provenance=provenance,
            offset=-self.v / gamma,
        )
        n = self.n
        return LurieSystem(-self.D, gamma * np.eye(n), np.eye(n), phi)


def alpha_k(D, k):
    """(1/k) times the sum of the k smallest diagonal entries of D."""
    d = np.asarray(D, dtype=float)
    if d.ndim == 2:
        d = np.diag(d)
    n = d.size
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    return float(np.sort(d)[:k].sum() / k)


def _sv_product_sum(W1, W2, k):
    s1 = singular_values(W1) ** 2
    s2 = singular_values(W2) ** 2
    r = min(k, s1.size, s2.size)
    return float(np.sum(s1[:r] * s2[:r]))


def _sampled_jac_bound(sys, n_samples, seed):
    from scipy.stats import qmc

    if sys.omega is not None:
        lo, hi = sys.omega
        box_source = "omega"
    else:
        lo, hi = -3.0 * np.ones(sys.n), 3.0 * np.ones(sys.n)
        box_source = "default [-3, 3]^n"
    u = qmc.LatinHypercube(d=sys.n, seed=seed).random(n_samples)
    xs = lo + u * (hi - lo)
    worst = max(float(np.linalg.norm(sys.f.jac(sys.W2 @ x), 2)) for x in xs)
    return worst, box_source


def network_lhs(sys, k, jac_bound=None):
    """sup ||J_f||^2 * sum_{i<=k} s_i(W1)^2 s_i(W2)^2 using the given/declared bound."""
    bound = sys.f.jac_norm_bound if jac_bound is None else jac_bound
    return bound**2 * _sv_product_sum(sys.W1, sys.W2, k)


def net_k_contraction_check(sys, k, *, n_samples=DEFAULT_SAMPLES, seed=0):
    """Networked k-contraction test, returning a Certificate with a Lurie witness."""
    if not 1 <= k <= sys.n:
        raise ValueError(f"k must lie in [1, {sys.n}], got {k}")
    a = alpha_k(sys.d, k)
    details = {"alpha_k": a, "activation": sys.f.kind}
    if sys.f.provenance == "analytic":
        bound = sys.f.jac_norm_bound
        provenance = "analytic"
    else:
        bound, box_source = _sampled_jac_bound(sys, n_samples, seed)
        provenance = "sampled"
        details["sample_box"] = box_source
    lhs = network_lhs(sys, k, bound)
    rhs = a * a * k
    details.update(
        jac_norm_bound=bound,
        provenance=provenance,
        lhs=lhs,
        rhs=rhs,
        sv_product_sum=_sv_product_sum(sys.W1, sys.W2, k),
        bounded_trajectories_converge=False,
        all_trajectories_converge=False,
    )
    if not (a > 0 and lhs < rhs):
        margin = rhs - lhs if a > 0 else min(a, rhs - lhs)
        return Certificate(k=k, Q=np.eye(sys.n), eta1=0.0, eta2=0.0, status="infeasible",
                           margin=margin, which_gain="none", details=details)

    gamma = 0.5 * (a + math.sqrt(lhs / k))
    p = 1.0 / gamma
    lurie = sys.as_lurie(gamma, jac_bound=bound)
    witness = certify_lurie(lurie, k, "given-Q", Q=math.sqrt(p) * np.eye(sys.n))
    converge = k == 2
    details.update(
        gamma=gamma,
        p=p,
        witness_status=witness.status,
        witness_margin=witness.margin,
        witness_eta1_max=witness.details["eta1_max"],
        witness_eta2_max=witness.details["eta2_max"],
        bounded_trajectories_converge=converge,
        all_trajectories_converge=converge and sys.f.uniformly_bounded and bool(np.all(sys.d > 0)),
    )
    if witness.status == "infeasible":
        # cannot happen in exact arithmetic once lhs < rhs; keep the evidence
        status = "infeasible"
    else:
        status = "certified" if provenance == "analytic" else "sampled-only"
    return Certificate(k=k, Q=witness.Q, eta1=witness.eta1, eta2=witness.eta2, status=status,
                       margin=rhs - lhs, which_gain=witness.which_gain, details=details)


# --------------------------------------------------------------------------
# Hopfield networks


@dataclass
class HopfieldThresholds:
    alpha_1star: float
    alpha_2star: Optional[float]
    sigma1_sq: float
    sigma2_sq: Optional[float]


def hopfield_network(W, alpha, omega=None):
    """x' = -alpha x + W tanh(x)."""
    W = as_matrix(W, "W")
    n = W.shape[0]
    return NetworkedSystem(alpha * np.ones(n), W, np.eye(n), np.zeros(n), tanh_activation(n),
                           omega=omega, name="hopfield")


def alpha_threshold(W1, W2, k, jac_bound=1.0):
    """Smallest alpha for which D = alpha I passes the networked test at order k (strictly above)."""
    return math.sqrt(jac_bound**2 * _sv_product_sum(W1, W2, k) / k)


def hopfield_thresholds(W):
    """Thresholds on alpha for 1- and 2-contraction of x' = -alpha x + W tanh(x).

    ``alpha_1star = sigma_1(W)`` and ``alpha_2star = sqrt((sigma_1^2 + sigma_2^2)/2)``;
    ``sigma1_sq`` is reported separately because it is sometimes quoted as
    the 1-contraction threshold.
    """
    W = as_matrix(W, "W")
    if W.shape[0] != W.shape[1]:
        raise ValueError("W must be square")
    s = singular_values(W)
    a1 = float(s[0])
    if s.size >= 2:
        a2 = math.sqrt((s[0] ** 2 + s[1] ** 2) / 2.0)
        s2 = float(s[1] ** 2)
    else:
        a2 = s2 = None
    return HopfieldThresholds(alpha_1star=a1, alpha_2star=a2, sigma1_sq=float(s[0] ** 2),
                              sigma2_sq=s2)


# --------------------------------------------------------------------------
# opinion dynamics


def opinion_network(d, u_weights, A_conn, b, activation=None):
    """x_i' = -d_i x_i + u_i f(sum_j a_ij x_j) + b_i."""
    A_conn = as_matrix(A_conn, "A_conn")
    n = A_conn.shape[0]
    d = np.asarray(d, dtype=float)
    if d.ndim == 2:
        d = np.diag(d)
    if d.ndim == 0:
        d = d * np.ones(n)
    u = np.asarray(u_weights, dtype=float)
    if u.ndim == 0:
        u = u * np.ones(n)
    f = activation if activation is not None else tanh_activation(n)
    return NetworkedSystem(d, np.diag(u), A_conn, b, f, name="opinion")


def opinion_check(D, u_weights, A_conn, b, k, activation=None):
    """Networked test for the opinion model with W1 = diag(u), W2 = A_conn, v = b.

    The singular values of diag(u) are the |u_i| in descending order, so the
    ordering u_1^2 >= ... >= u_n^2 is applied implicitly; the reported
    ``u_sorted`` shows it while the state ordering is left untouched.
    """
    sys = opinion_network(D, u_weights, A_conn, b, activation)
    cert = net_k_contraction_check(sys, k)
    u = np.diag(sys.W1)
    cert.details["u_weights"] = u.tolist()
    cert.details["u_sorted"] = sorted(u.tolist(), key=lambda x: -x * x)
    return cert


def opinion_u_threshold(A_conn, k, alpha=1.0, jac_bound=1.0):
    """Largest uniform attention u (exclusive) for which the order-k test passes, D = alpha I."""
    s = singular_values(A_conn) ** 2
    return alpha * math.sqrt(k / (jac_bound**2 * float(s[:k].sum())))


# --------------------------------------------------------------------------
# two-bus power system


def _check_power_params(M1, M2, R1, R2, a, phi):
    for name, val in (("M1", M1), ("M2", M2), ("R1", R1), ("R2", R2), ("a", a)):
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")
    if not -math.pi / 2 < phi < math.pi / 2:
        raise ValueError(f"phi must lie in (-pi/2, pi/2), got {phi}")
    if not a > max(M1, M2):
        raise ValueError(f"need a > max(M1, M2); got a={a}, M1={M1}, M2={M2}")


def power_2bus_system(M1, M2, R1, R2, a, phi, p1, p2):
    """Two-bus swing model in networked form, state x = [omega_1, omega_2, delta].

    M1 w1' = p1 - R1 w1 - a sin(delta + phi)
    M2 w2' = p2 - R2 w2 + a sin(delta - phi)
    delta' = w2 - w1
    """
    d = np.array([R1 / M1, R2 / M2, 0.0])
    W1 = np.diag([-a / M1, a / M2, 1.0])
    W2 = np.array([[0.0, 0.0, 1.0], [-1.0, 1.0, 0.0]])
    v = np.array([p1 / M1, p2 / M2, 0.0])
    return NetworkedSystem(d, W1, W2, v, power_trig(phi), name="power-2bus")


@dataclass
class PowerCheck:
    """Closed-form two-bus test next to the general networked test at k = 2."""

    closed_form: bool
    closed_form_lhs: float
    closed_form_rhs: float
    theorem: Certificate
    system: NetworkedSystem
    # same test with the inertia ratio squared; this one does imply the k=2 test
    strict_form: bool = False
    strict_form_rhs: float = 0.0

    @property
    def certified(self):
        return self.theorem.certified

    def to_dict(self):
        return {
            "closed_form": {
                "passes": self.closed_form,
                "lhs": self.closed_form_lhs,
                "rhs": self.closed_form_rhs,
            },
            "strict_form": {
                "passes": self.strict_form,
                "lhs": self.closed_form_lhs,
                "rhs": self.strict_form_rhs,
            },
            "certificate": self.theorem.to_dict(),
        }


def power_2bus_check(M1, M2, R1, R2, a, phi, p1=0.0, p2=0.0):
    """Closed-form two-bus test next to the networked test at k = 2.

    ``closed_form``: 3 a^2 (1 + |cos 2 phi|) < (min M / max M) * min(R_i^2) / 2.
    That inequality does not imply the networked test when M1 != M2 (the
    networked left side carries a^2 / min(M)^2 while the right side only
    offers min(R)^2 / max(M)^2).  ``strict_form`` uses (min M / max M)^2 and
    does imply it.
    """
    _check_power_params(M1, M2, R1, R2, a, phi)
    lhs = 3.0 * a * a * (1.0 + abs(math.cos(2.0 * phi)))
    ratio = min(M1, M2) / max(M1, M2)
    rhs = ratio * min(R1, R2) ** 2 / 2.0
    strict_rhs = ratio * rhs
    sys = power_2bus_system(M1, M2, R1, R2, a, phi, p1, p2)
    cert = net_k_contraction_check(sys, 2)
    return PowerCheck(closed_form=lhs < rhs, closed_form_lhs=lhs, closed_form_rhs=rhs,
                      theorem=cert, system=sys, strict_form=lhs < strict_rhs,
                      strict_form_rhs=strict_rhs)
