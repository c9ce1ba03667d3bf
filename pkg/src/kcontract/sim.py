"""Trajectory simulation, equilibrium search and empirical certificate audits.

Any object with ``n``, ``rhs(t, x)`` and ``jacobian(t, x)`` can be simulated
(both :class:`~kcontract.lurie.LurieSystem` and
:class:`~kcontract.network.NetworkedSystem` qualify).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationError

__all__ = [
    "SimConfig",
    "Trajectory",
    "integrate",
    "EquilibriumReport",
    "find_equilibria",
    "newton_polish",
    "VolumeAudit",
    "volume_decay_audit",
    "SweepReport",
    "convergence_sweep",
    "draw_initial_conditions",
]

METHOD = "DOP853"
EQ_DEDUP_RADIUS = 1e-6
EQ_RESIDUAL_TOL = 1e-10
CONVERGENCE_RADIUS = 1e-4
UNBOUNDED_NORM = 1e6
LOG_UNDERFLOW = math.log(1e-300)


@dataclass
class SimConfig:
    t_end: float
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = np.inf
    seed: int = 0
    ic_box: Optional[tuple] = None  # (lower, upper); default [-3, 3]^n
    n_out: int = 201

    def __post_init__(self):
        if not (np.isfinite(self.t_end) and self.t_end > 0):
            raise ValueError(f"t_end must be a positive number, got {self.t_end}")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.n_out < 2:
            raise ValueError("n_out must be at least 2")

    def box(self, n):
        if self.ic_box is None:
            return -3.0 * np.ones(n), 3.0 * np.ones(n)
        lo, hi = self.ic_box
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
        if np.any(lo > hi):
            raise ValueError("ic_box lower bound exceeds upper bound")
        return lo, hi


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # shape (len(times), n)
    terminal_velocity: float
    unbounded: bool = False

    @property
    def terminal_state(self):
        return self.states[-1]


def _finite_rhs(sys):
    def f(t, x):
        dx = np.asarray(sys.rhs(t, x), dtype=float)
        if not np.all(np.isfinite(dx)):
            raise IntegrationError(f"non-finite derivative at t={t:.6g}", t=t, state=np.array(x))
        return dx
    return f


def _escape_event(t, x):
    return UNBOUNDED_NORM - np.linalg.norm(x)


_escape_event.terminal = True


def integrate(sys, x0, cfg, *, stop_if_unbounded=False):
    """Integrate from ``x0`` over [0, cfg.t_end], sampled at ``cfg.n_out`` points.

    With ``stop_if_unbounded`` the run halts once |x| reaches 1e6 and the
    returned trajectory is flagged ``unbounded`` (and ends early).
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (sys.n,):
        raise ValueError(f"x0 must have length {sys.n}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    t_eval = np.linspace(0.0, cfg.t_end, cfg.n_out)
    f = _finite_rhs(sys)
    sol = solve_ivp(
        f, (0.0, cfg.t_end), x0, method=METHOD, t_eval=t_eval, rtol=cfg.rtol, atol=cfg.atol,
        max_step=cfg.max_step, events=_escape_event if stop_if_unbounded else None,
    )
    if sol.status == -1:
        last_t = float(sol.t[-1]) if sol.t.size else 0.0
        last_x = sol.y[:, -1] if sol.y.size else x0
        raise IntegrationError(f"integration failed: {sol.message}", t=last_t, state=last_x)
    states = sol.y.T
    times = sol.t
    unbounded = sol.status == 1
    if unbounded:
        xe = sol.y_events[0][0]
        times = np.append(times, sol.t_events[0][0])
        states = np.vstack([states, xe])
    if not np.all(np.isfinite(states)):
        raise IntegrationError("non-finite state", t=float(times[-1]), state=states[-1])
    vel = float(np.linalg.norm(f(times[-1], states[-1])))
    return Trajectory(times=times, states=states, terminal_velocity=vel, unbounded=unbounded)


def draw_initial_conditions(n, count, cfg):
    """``count`` points drawn uniformly from the config's box with its seed."""
    lo, hi = cfg.box(n)
    rng = np.random.default_rng(cfg.seed)
    return lo + rng.random((count, n)) * (hi - lo)


# --------------------------------------------------------------------------
# equilibria


def newton_polish(sys, x, max_iter=100, tol=EQ_RESIDUAL_TOL):
    """Damped Newton on rhs(0, x) = 0.  Returns (x, residual, converged)."""
    x = np.asarray(x, dtype=float).copy()
    F = np.asarray(sys.rhs(0.0, x), dtype=float)
    res = float(np.linalg.norm(F))
    for _ in range(max_iter):
        if res <= tol:
            return x, res, True
        J = sys.jacobian(0.0, x)
        try:
            step = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, F, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            break
        lam = 1.0
        while lam > 1e-10:
            xn = x - lam * step
            Fn = np.asarray(sys.rhs(0.0, xn), dtype=float)
            rn = float(np.linalg.norm(Fn))
            if np.isfinite(rn) and rn < res:
                break
            lam *= 0.5
        else:
            break
        x, F, res = xn, Fn, rn
    return x, res, res <= tol


def _match(point, equilibria, radius):
    for i, e in enumerate(equilibria):
        if np.linalg.norm(point - e) <= radius:
            return i
    return None


def _canonical_order(equilibria, counts):
    order = sorted(range(len(equilibria)),
                   key=lambda i: (round(float(np.linalg.norm(equilibria[i])), 8),
                                  tuple(np.round(equilibria[i], 8))))
    return [equilibria[i] for i in order], [counts[i] for i in order]


@dataclass
class EquilibriumReport:
    equilibria: list
    basins: list  # number of Newton starts landing on each equilibrium
    failures: int
    residuals: list = field(default_factory=list)

    def __len__(self):
        return len(self.equilibria)


def find_equilibria(sys, n_starts=64, seed=0, box=None, starts=None):
    """Damped Newton from random starts in ``box`` (default [-3, 3]^n) plus any ``starts``."""
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    cfg = SimConfig(t_end=1.0, seed=seed, ic_box=box)
    points = draw_initial_conditions(sys.n, n_starts, cfg)
    if starts is not None:
        points = np.vstack([np.atleast_2d(np.asarray(starts, dtype=float)), points])
    eqs, counts, failures = [], [], 0
    for x0 in points:
        x, res, ok = newton_polish(sys, x0)
        if not ok:
            failures += 1
            continue
        i = _match(x, eqs, EQ_DEDUP_RADIUS)
        if i is None:
            eqs.append(x)
            counts.append(1)
        else:
            counts[i] += 1
    eqs, counts = _canonical_order(eqs, counts)
    residuals = [float(np.linalg.norm(sys.rhs(0.0, e))) for e in eqs]
    return EquilibriumReport(equilibria=eqs, basins=counts, failures=failures,
                             residuals=residuals)


# --------------------------------------------------------------------------
# volume decay of k-parallelotopes under the variational flow


@dataclass
class VolumeAudit:
    times: np.ndarray
    log_volumes: np.ndarray  # s(t) = log |Q^(k) X^(k)(t)|_2
    observed_rate: float  # least-squares slope of s(t)
    bound_rate: float
    within_bound: bool
    monotone: bool
    max_bound_excess: float
    max_increase: float
    underflow: bool


def _log_scaled_volume(Q, U):
    # |(QU)^(k)|_2^2 = det((QU)^T QU) by Cauchy-Binet
    QU = Q @ U
    sign, logdet = np.linalg.slogdet(QU.T @ QU)
    return 0.5 * logdet if sign > 0 else -np.inf


def volume_decay_audit(sys, cert, x0, k=None, cfg=None, *, tol=1e-6):
    """Track s(t) = log |Q^(k) X^(k)(t)| along X' = J(t, x) X and compare with -rate * t.

    X(0) holds k random orthonormal columns.  X is re-orthonormalised at every
    output time (X = U R) and log|det R| accumulated, so the volume never
    underflows in floating point; if s drops below log(1e-300) the series is
    truncated there and ``underflow`` is set.
    """
    if cert.status != "certified":
        raise ValueError(f"volume audit needs a certified certificate, got {cert.status!r}")
    k = cert.k if k is None else k
    if k != cert.k:
        raise ValueError(f"certificate is for k={cert.k}, audit requested k={k}")
    if cfg is None:
        cfg = SimConfig(t_end=10.0)
    n = sys.n
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    rng = np.random.default_rng(cfg.seed)
    U, _ = np.linalg.qr(rng.standard_normal((n, k)))
    Q = cert.Q

    def aug(t, z):
        x = z[:n]
        X = z[n:].reshape(n, k)
        dx = np.asarray(sys.rhs(t, x), dtype=float)
        dX = sys.jacobian(t, x) @ X
        out = np.concatenate([dx, dX.ravel()])
        if not np.all(np.isfinite(out)):
            raise IntegrationError(f"non-finite variational derivative at t={t:.6g}",
                                   t=t, state=x)
        return out

    times = np.linspace(0.0, cfg.t_end, cfg.n_out)
    s = [_log_scaled_volume(Q, U)]
    acc = 0.0
    x = x0
    underflow = False
    for t0, t1 in zip(times[:-1], times[1:]):
        z0 = np.concatenate([x, U.ravel()])
        sol = solve_ivp(aug, (t0, t1), z0, method=METHOD, rtol=cfg.rtol, atol=cfg.atol,
                        max_step=cfg.max_step)
        if sol.status != 0:
            raise IntegrationError(f"variational integration failed: {sol.message}",
                                   t=float(sol.t[-1]), state=sol.y[:n, -1])
        z = sol.y[:, -1]
        x = z[:n]
        U, R = np.linalg.qr(z[n:].reshape(n, k))
        acc += float(np.sum(np.log(np.abs(np.diag(R)))))
        val = acc + _log_scaled_volume(Q, U)
        if not np.isfinite(val) or val - s[0] < LOG_UNDERFLOW:
            underflow = True
            break
        s.append(val)
    s = np.array(s)
    times = times[: s.size]
    rel = s - s[0]
    excess = rel + cert.rate * times
    slope = float(np.polyfit(times, s, 1)[0]) if s.size >= 2 else float("nan")
    increase = float(np.max(np.diff(s))) if s.size >= 2 else 0.0
    return VolumeAudit(
        times=times,
        log_volumes=s,
        observed_rate=slope,
        bound_rate=cert.rate,
        within_bound=bool(np.all(excess <= tol)),
        monotone=increase <= tol,
        max_bound_excess=float(np.max(excess)),
        max_increase=increase,
        underflow=underflow,
    )


# --------------------------------------------------------------------------
# convergence sweeps


@dataclass
class SweepReport:
    n_traj: int
    converged: int
    tally: list  # trajectories ending near each equilibrium
    equilibria: list
    max_terminal_velocity: float
    unbounded: int
    unconverged: int
    guaranteed: bool  # a certified k=2 certificate backs the expectation of convergence
    initial_conditions: np.ndarray
    terminal_states: np.ndarray
    trajectories: list = field(default_factory=list)

    @property
    def all_converged(self):
        return self.converged == self.n_traj

    @property
    def distinct_equilibria(self):
        return sum(1 for c in self.tally if c > 0)


def convergence_sweep(sys, n_traj, cfg, *, equilibria=None, cert=None, keep=False,
                      radius=CONVERGENCE_RADIUS):
    """Simulate ``n_traj`` seeded trajectories and tally where they end.

    Terminal states are Newton-polished to discover equilibria that were not
    supplied; a trajectory counts as converged when its terminal state is
    within ``radius`` of a known equilibrium.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    eqs = [np.asarray(e, dtype=float) for e in (equilibria or [])]
    ics = draw_initial_conditions(sys.n, n_traj, cfg)
    trajs = [integrate(sys, x0, cfg, stop_if_unbounded=True) for x0 in ics]
    terminals = np.array([tr.terminal_state for tr in trajs])

    for tr in trajs:
        if tr.unbounded:
            continue
        xe, _, ok = newton_polish(sys, tr.terminal_state)
        if ok and np.linalg.norm(xe - tr.terminal_state) <= radius and \
                _match(xe, eqs, EQ_DEDUP_RADIUS) is None:
            eqs.append(xe)
    eqs, _ = _canonical_order(eqs, [0] * len(eqs))

    tally = [0] * len(eqs)
    converged = unbounded = 0
    for tr in trajs:
        if tr.unbounded:
            unbounded += 1
            continue
        dists = [np.linalg.norm(tr.terminal_state - e) for e in eqs]
        if dists and min(dists) <= radius:
            tally[int(np.argmin(dists))] += 1
            converged += 1
    guaranteed = cert is not None and cert.k == 2 and cert.status == "certified"
    return SweepReport(
        n_traj=n_traj,
        converged=converged,
        tally=tally,
        equilibria=eqs,
        max_terminal_velocity=max(tr.terminal_velocity for tr in trajs),
        unbounded=unbounded,
        unconverged=n_traj - converged - unbounded,
        guaranteed=guaranteed,
        initial_conditions=ics,
        terminal_states=terminals,
        trajectories=trajs if keep else [],
    )
