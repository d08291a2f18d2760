"""Certificate checks and Lyapunov bookkeeping for a given closed loop.

Nothing here depends on how the closed loop was designed. Semidefinite
conditions are checked with a symmetric eigensolver on explicitly
symmetrized matrices; each margin is reported in absolute terms and
relative to the largest entry of the matrices involved.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._linalg import max_abs
from .lmi import Certificate, build_analysis_M1, build_analysis_M2
from .model import ClosedLoopMatrices, DimensionError

__all__ = [
    "CheckEntry",
    "VerificationReport",
    "CertificateConstants",
    "verify_certificate",
    "certificate_constants",
    "lyapunov_value",
    "lyapunov_along",
    "sandwich_ratio",
    "jump_increase",
    "flow_dissipation_residual",
]


@dataclass
class CheckEntry:
    name: str
    kind: str  # "pd" (> 0), "nd" (< 0), "nsd" (<= 0), "budget" (<= 0)
    margin: float  # lambda_min for "pd", lambda_max otherwise
    scale: float
    passed: bool

    @property
    def relative(self) -> float:
        return self.margin / self.scale if self.scale > 0 else self.margin


@dataclass
class VerificationReport:
    entries: list[CheckEntry] = field(default_factory=list)
    slack: float = 0.0

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def __getitem__(self, name: str) -> CheckEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def failures(self) -> list[str]:
        return [e.name for e in self.entries if not e.passed]

    def summary(self) -> str:
        if self.passed:
            worst = max(self.entries, key=lambda e: -e.relative if e.kind == "pd" else e.relative)
            return f"all {len(self.entries)} checks pass (tightest: {worst.name}, relative {worst.relative:.3g})"
        return "failed: " + ", ".join(self.failures())

    def to_json_dict(self) -> dict:
        return {
            "passed": self.passed,
            "slack": self.slack,
            "checks": [dict(asdict(e), relative=e.relative) for e in self.entries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


def _eig(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.linalg.eigvalsh((a + a.T) / 2)


def _entry(name: str, kind: str, mat: np.ndarray, scale: float, slack: float) -> CheckEntry:
    w = _eig(mat)
    if kind == "pd":
        margin = float(w[0])
        ok = margin > -slack * scale
    else:
        margin = float(w[-1])
        ok = margin < slack * scale if kind == "nd" else margin <= slack * scale
    return CheckEntry(name, kind, margin, scale, bool(ok))


def verify_certificate(
    cert: Certificate,
    cl: ClosedLoopMatrices,
    T2: float | None = None,
    gamma: float | None = None,
    slack: float = 0.0,
) -> VerificationReport:
    """Check every sufficient condition for the dissipation properties.

    ``slack`` loosens each test by ``slack * scale`` where ``scale`` is the
    largest entry of the matrices involved (useful for rounded data).
    """
    T2 = cert.T2 if T2 is None else float(T2)
    gamma = cert.gamma if gamma is None else float(gamma)
    if cert.P1.shape != (cl.n_x, cl.n_x) or cert.P2.shape != (cl.n_e, cl.n_e):
        raise DimensionError("certificate does not match the closed loop")
    rep = VerificationReport(slack=slack)
    add = rep.entries.append
    add(_entry("P1>0", "pd", cert.P1, max_abs(cert.P1), slack))
    add(_entry("P2>0", "pd", cert.P2, max_abs(cert.P2), slack))
    add(_entry("Q-O<0", "nd", cert.Q - cert.O, max_abs(cert.Q, cert.O), slack))
    add(_entry("R-S<0", "nd", cert.R - cert.S, max_abs(cert.R, cert.S), slack))
    M1 = build_analysis_M1(cert.P1, cert.S, cert.Q, cert.gamma1, cl)
    add(_entry("M1<=0", "nsd", M1, max_abs(M1), slack))
    for tau, label in ((0.0, "M2(0)<=0"), (T2, "M2(T2)<=0")):
        M2 = build_analysis_M2(tau, cert.P2, cert.O, cert.R, cert.gamma2, cert.delta, cl, T2)
        add(_entry(label, "nsd", M2, max_abs(M2), slack))
    budget = cert.gamma1 + cert.gamma2 - gamma**2
    add(CheckEntry("gamma budget", "budget", budget, gamma**2, bool(budget <= slack * gamma**2)))
    return rep


@dataclass(frozen=True)
class CertificateConstants:
    chi1: float
    chi2: float
    chi3: float
    lambda_t: float
    lambda_max: float  # largest admissible hybrid-time rate
    lam: float
    omega: float
    kappa: float
    alpha: float  # chi2, as fixed by the proof
    alpha_norm: float  # sqrt(chi2), constant multiplying |x0| in the L2 bound

    def to_json_dict(self) -> dict:
        return asdict(self)

    def hybrid_time_bound(self, t, j):
        """``omega - lam (t + j)``; must dominate ``-lambda_t t`` on valid domains."""
        return self.omega - self.lam * (np.asarray(t) + np.asarray(j))


def certificate_constants(cert: Certificate, T1: float, T2: float | None = None, lam: float | None = None):
    """Decay constants of the hybrid closed loop implied by ``cert``."""
    T2 = cert.T2 if T2 is None else float(T2)
    if not 0 < T1 <= T2:
        raise ValueError("need 0 < T1 <= T2")
    if not (cert.k_v1 > 0 and cert.k_v2 > 0 and cert.chi1 > 0):
        raise ValueError("certificate rejected: R - S and Q - O must be negative definite, P1, P2 positive definite")
    if T2 != cert.T2:
        cert = Certificate(**{**cert.__dict__, "T2": T2})
    chi1, chi2, chi3 = cert.chi1, cert.chi2, cert.chi3
    lambda_t = chi3 / (2 * chi2)
    lam_max = lambda_t * T1 / (1 + T1)
    if lam is None:
        lam = lam_max
    elif not 0 < lam <= lam_max:
        raise ValueError(f"lam must lie in (0, {lam_max:.6g}]")
    omega = lam
    kappa = 2 * math.sqrt(chi2 / chi1) * math.exp(omega)
    return CertificateConstants(chi1, chi2, chi3, lambda_t, lam_max, lam, omega, kappa, chi2, math.sqrt(chi2))


def lyapunov_value(xbar, eta, tau, P1, P2, delta: float) -> float:
    """``xbar' P1 xbar + exp(delta tau) eta' P2 eta``."""
    xbar = np.asarray(xbar, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return float(xbar @ P1 @ xbar + math.exp(delta * float(tau)) * (eta @ P2 @ eta))


def lyapunov_along(xbar, eta, tau, P1, P2, delta: float) -> np.ndarray:
    """Vectorized :func:`lyapunov_value` over sample rows."""
    xbar = np.atleast_2d(xbar)
    eta = np.atleast_2d(eta)
    v1 = np.einsum("ij,jk,ik->i", xbar, P1, xbar)
    v2 = np.einsum("ij,jk,ik->i", eta, P2, eta)
    return v1 + np.exp(delta * np.asarray(tau, dtype=float)) * v2


def sandwich_ratio(xbar, eta, tau, cert: Certificate) -> np.ndarray:
    """``V / |(xbar, eta)|^2`` per sample; must lie in ``[chi1, chi2]``."""
    V = lyapunov_along(xbar, eta, tau, cert.P1, cert.P2, cert.delta)
    nrm2 = np.sum(np.atleast_2d(xbar) ** 2, axis=1) + np.sum(np.atleast_2d(eta) ** 2, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return V / nrm2


def jump_increase(arc, cert: Certificate) -> float:
    """Largest relative increase of ``V`` across the jumps of ``arc`` (``<= 0`` is monotone)."""
    worst = -math.inf
    for jr in arc.jumps:
        nx = cert.P1.shape[0]
        before = lyapunov_value(jr.before[:nx], jr.before[nx:-1], jr.before[-1], cert.P1, cert.P2, cert.delta)
        after = lyapunov_value(jr.after[:nx], jr.after[nx:-1], jr.after[-1], cert.P1, cert.P2, cert.delta)
        worst = max(worst, (after - before) / max(before, 1e-300))
    return worst if arc.jumps else 0.0


def flow_dissipation_residual(arc, cert: Certificate, lambda_t: float, gamma: float, h: float = 1e-5):
    """Relative residual of ``dV/dt + 2 lambda_t V + |y_o|^2 - gamma^2 |d|^2 <= 0``.

    ``dV/dt`` is a central finite difference on each flow segment's dense
    output; returns the largest value of residual divided by the sum of
    absolute terms (so ``<= 0`` means the inequality holds everywhere).
    """
    nx = cert.P1.shape[0]
    worst = -math.inf
    for seg in arc.segments:
        if seg.t1 - seg.t0 <= 4 * h:
            continue
        ts = seg.t[(seg.t >= seg.t0 + 2 * h) & (seg.t <= seg.t1 - 2 * h)]
        if ts.size == 0:
            continue

        def V_at(t):
            s = seg.state(t)
            return lyapunov_along(s[:, :nx], s[:, nx:-1], s[:, -1], cert.P1, cert.P2, cert.delta)

        dV = (V_at(ts + h) - V_at(ts - h)) / (2 * h)
        V = V_at(ts)
        s = seg.state(ts)
        y = s[:, :nx] @ arc.C_o.T
        y2 = np.sum(y**2, axis=1)
        d = arc.disturbance(ts)
        d2 = np.sum(d**2, axis=1)
        res = dV + 2 * lambda_t * V + y2 - gamma**2 * d2
        mag = np.abs(dV) + 2 * lambda_t * V + y2 + gamma**2 * d2
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.where(mag > 0, res / mag, 0.0)
        worst = max(worst, float(np.max(rel)))
    return worst
