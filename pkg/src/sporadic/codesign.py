"""Joint design of the controller and the holding device.

The synthesis conditions are LMIs except for ``F F_i = I``. That equality
is relaxed to ``[[F, I], [I, F_i]] >= 0`` and saturated by the cone
complementarity linearization (minimize ``trace(F_k F_i + F_ik F)``). The
exponential weight ``delta`` is found by bisection on a relaxed problem
followed by a geometric line search.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import cvxpy as cp
import numpy as np

from . import lmi
from ._linalg import SingularMatrixError, max_abs
from .analysis import VerificationReport, verify_certificate
from .lmi import Certificate, DesignVariables
from .model import (
    ClosedLoopMatrices,
    ControllerParams,
    HolderParams,
    PlantModel,
    assemble_closed_loop,
    build_P1,
    factor_U,
    reconstruct_controller,
)
from .sdp import NUMERICAL_FAILURE, OPTIMAL, SdpProblem, SolverSettings, solve

log = logging.getLogger(__name__)

__all__ = [
    "CodesignOptions",
    "IterationRecord",
    "CCResult",
    "DesignResult",
    "Infeasible",
    "SynthesisProblem",
    "build_synthesis_problem",
    "cc_minimize_trace",
    "relaxed_feasible",
    "delta_lower_bound",
    "posterior_check",
    "design",
    "minimize_gamma",
]


@dataclass
class CodesignOptions:
    gamma: float
    T2: float
    T1: float | None = None
    r: float = 1.1
    delta_bar: float = 10.0
    bisection_tol: float = 0.1
    cc_max_iter: int = 50
    cc_trace_tol: float = 1e-4  # relative to dim(F)
    cc_stall_tol: float = 1e-9  # relative decrease of the linearized objective
    cc_init: str = "feasible"  # or "identity"
    # early stop when the current trace decrease would need more than
    # factor * remaining iterations to reach the target (None disables)
    cc_projection_factor: float | None = 2.0
    cc_projection_min_iter: int = 10
    eps_strict: float = 1e-6
    verify_slack: float = 1e-7
    # optional pole region for the flow matrix of the closed loop (off by default)
    pole_decay: float | None = None
    pole_speed: float | None = None
    pole_damping: float | None = None
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        for name in ("gamma", "T2", "delta_bar", "bisection_tol", "cc_trace_tol", "cc_stall_tol",
                     "eps_strict"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be positive")
        if self.T1 is not None and not 0 < self.T1 <= self.T2:
            raise ValueError("need 0 < T1 <= T2")
        if not self.r > 1:
            raise ValueError("line-search ratio r must exceed 1")
        if self.cc_max_iter < 1:
            raise ValueError("cc_max_iter must be at least 1")
        if self.cc_init not in ("feasible", "identity"):
            raise ValueError(f"unknown cc_init {self.cc_init!r}")
        if self.verify_slack < 0:
            raise ValueError("verify_slack must be nonnegative")
        if self.pole_damping is not None and not 0 < self.pole_damping < 1:
            raise ValueError("pole_damping must lie in (0, 1)")

    def replace(self, **changes) -> "CodesignOptions":
        return dataclasses.replace(self, **changes)


@dataclass
class IterationRecord:
    phase: str  # "bisection" | "cc" | "posterior" | "verify"
    delta: float
    iteration: int = 0
    status: str = OPTIMAL
    trace: float | None = None
    objective: float | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Infeasible:
    """Negative outcome of a design step; falsy so callers can branch on it."""

    reason: str
    log: list[IterationRecord] = field(default_factory=list)
    numerical: bool = False

    def __bool__(self) -> bool:
        return False


@dataclass
class CCResult:
    variables: DesignVariables
    trace: float
    converged: bool
    iterations: int
    objectives: list[float]
    traces: list[float]
    log: list[IterationRecord]

    @property
    def identity_residual(self) -> float:
        """``max |F F_i - I|`` at the returned iterate."""
        v = self.variables
        return max_abs(v.F @ v.F_i - np.eye(v.F.shape[0]))


@dataclass
class DesignResult:
    plant: PlantModel
    controller: ControllerParams
    holder: HolderParams
    certificate: Certificate
    closed_loop: ClosedLoopMatrices
    variables: DesignVariables
    delta: float
    delta_lower: float
    trace: float
    report: VerificationReport
    log: list[IterationRecord]

    def to_json_dict(self) -> dict:
        return {
            "plant": self.plant.to_json_dict(),
            "controller": self.controller.to_json_dict(),
            "holder": self.holder.to_json_dict(),
            "certificate": self.certificate.to_json_dict(),
            "delta": self.delta,
            "delta_lower": self.delta_lower,
            "trace": self.trace,
            "verification": self.report.to_json_dict(),
            "log": [r.to_dict() for r in self.log],
        }


# ---------------------------------------------------------------------------


class SynthesisProblem:
    """Synthesis LMIs with ``delta`` as a parameter, compiled once and reused.

    The objective is ``trace(F_k F_i + F_ik F)`` with parameters ``F_k``,
    ``F_ik``; setting both to zero turns it into a feasibility problem.
    """

    def __init__(self, plant: PlantModel, options: CodesignOptions, include_T2: bool = True):
        n, nu, ny = plant.n_p, plant.n_u, plant.n_y
        self.plant, self.options, self.include_T2 = plant, options, include_T2
        p = SdpProblem("synthesis" if include_T2 else "synthesis-relaxed")
        self.delta_par = cp.Parameter(nonneg=True, name="delta")
        self.e_T2 = cp.Parameter(nonneg=True, name="exp(delta T2)")
        self.de_T2 = cp.Parameter(nonneg=True, name="delta exp(delta T2)")
        v = DesignVariables(
            X=p.symmetric("X", n),
            Y=p.symmetric("Y", n),
            K=p.matrix("K", n, n),
            L=p.matrix("L", n, ny),
            M=p.matrix("M", nu, n),
            N=p.matrix("N", nu, ny),
            J=p.matrix("J", ny, ny),
            Z=p.matrix("Z", ny, n),
            V=p.matrix("V", n, n),
            P2=p.symmetric("P2", ny),
            Q=p.symmetric("Q", ny),
            O=p.symmetric("O", ny),
            R=p.symmetric("R", 2 * n),
            F=p.symmetric("F", 2 * n),
            F_i=p.symmetric("F_i", 2 * n),
            gamma1=p.scalar("gamma1"),
            gamma2=p.scalar("gamma2"),
            delta=math.nan,
        )
        eps = options.eps_strict
        I2n = np.eye(2 * n)
        p.add_lmi("Theta", lmi.build_theta(v.X, v.Y), ">>", eps)
        p.add_lmi("Q-O", v.Q - v.O, "<<", eps)
        p.add_lmi("R-F_i", v.R - v.F_i, "<<", eps)
        p.add_lmi("M1", lmi.build_M1hat(v, plant), "<<")
        p.add_lmi("M2(0)", lmi.build_M2hat(0.0, v, plant, weights=(1.0, self.delta_par)), "<<")
        if include_T2:
            p.add_lmi("M2(T2)", lmi.build_M2hat(options.T2, v, plant, weights=(self.e_T2, self.de_T2)), "<<")
        p.add_lmi("gamma budget", v.gamma1 + v.gamma2 - options.gamma**2, "<<")
        p.add_lmi("cone", lmi.bmat([[v.F, I2n], [I2n, v.F_i]]), ">>")
        p.add_lmi("V nonsingular", v.V + v.V.T, ">>", eps)
        for name in ("P2", "Q", "O", "R", "F", "F_i"):
            p.add_lmi(f"{name}>0", getattr(v, name), ">>", eps)
        p.add_lmi("gamma1>0", v.gamma1, ">>", eps)
        p.add_lmi("gamma2>0", v.gamma2, ">>", eps)
        if options.pole_decay is not None:
            p.add_lmi("pole decay", lmi.decay_rate_lmi(v, plant, options.pole_decay), "<<")
        if options.pole_speed is not None:
            p.add_lmi("pole speed", lmi.speed_bound_lmi(v, plant, options.pole_speed), "<<")
        if options.pole_damping is not None:
            p.add_lmi("pole damping", lmi.damping_sector_lmi(v, plant, options.pole_damping), "<<")
        dim = 2 * n
        self.F_k = cp.Parameter((dim, dim), name="F_k")
        self.F_ik = cp.Parameter((dim, dim), name="F_i_k")
        p.minimize(cp.trace(self.F_k @ v.F_i + self.F_ik @ v.F))
        self.problem, self.vars, self.dim = p, v, dim
        self.delta = math.nan

    def set_delta(self, delta: float) -> None:
        if not delta > 0:
            raise ValueError("delta must be positive")
        self.delta = float(delta)
        self.delta_par.value = self.delta
        e = math.exp(self.delta * self.options.T2)
        self.e_T2.value = e
        self.de_T2.value = self.delta * e

    def solve(self, F_k=None, F_ik=None):
        """Linearized CC step (or feasibility when the weights are omitted)."""
        self.F_k.value = np.zeros((self.dim, self.dim)) if F_k is None else F_k
        self.F_ik.value = np.zeros((self.dim, self.dim)) if F_ik is None else F_ik
        return solve(self.problem, self.options.solver)

    def numeric(self, values: dict) -> DesignVariables:
        out = {f.name: values[f.name] for f in dataclasses.fields(self.vars) if f.name in values}
        return DesignVariables(**out, delta=self.delta)


def build_synthesis_problem(plant: PlantModel, delta: float, options: CodesignOptions, include_T2: bool = True):
    """Convenience: a :class:`SynthesisProblem` already set to ``delta``."""
    sp = SynthesisProblem(plant, options, include_T2)
    sp.set_delta(delta)
    return sp


def relaxed_feasible(plant: PlantModel, delta: float, options: CodesignOptions, include_T2: bool = False,
                     problem: SynthesisProblem | None = None):
    """Single feasibility solve; returns the SdpSolution."""
    sp = problem or SynthesisProblem(plant, options, include_T2)
    sp.set_delta(delta)
    return sp.solve()


def _hopeless(traces: list[float], target: float, remaining: int, options: CodesignOptions) -> bool:
    """Current rate of decrease cannot reach ``target`` within the remaining budget."""
    k = len(traces)
    if options.cc_projection_factor is None or k < options.cc_projection_min_iter:
        return False
    rate = traces[-2] - traces[-1]
    gap = traces[-1] - target
    return rate <= 0 or gap / rate > options.cc_projection_factor * remaining


def cc_minimize_trace(
    plant: PlantModel,
    delta: float,
    options: CodesignOptions,
    include_T2: bool = True,
    problem: SynthesisProblem | None = None,
) -> CCResult | Infeasible:
    """Cone complementarity iterations at fixed ``delta``."""
    sp = problem or SynthesisProblem(plant, options, include_T2)
    sp.set_delta(delta)
    dim = sp.dim
    records: list[IterationRecord] = []

    if options.cc_init == "identity":
        Fk, Fik = np.eye(dim), np.eye(dim)
    else:
        sol = sp.solve()
        records.append(IterationRecord("cc", delta, 0, sol.status, note="initial feasibility solve"))
        if not sol.ok:
            return Infeasible(f"synthesis LMIs {sol.status} at delta={delta:.6g}", records,
                              numerical=sol.status == NUMERICAL_FAILURE)
        Fk, Fik = sol["F"], sol["F_i"]

    objectives: list[float] = []
    traces: list[float] = []
    target = dim * (1 + options.cc_trace_tol)
    best = None
    converged = False
    for k in range(1, options.cc_max_iter + 1):
        sol = sp.solve(Fk, Fik)
        if not sol.ok:
            records.append(IterationRecord("cc", delta, k, sol.status))
            if best is None:
                return Infeasible(f"CC step {k} {sol.status} at delta={delta:.6g}", records,
                                  numerical=sol.status == NUMERICAL_FAILURE)
            log.debug("CC step %d %s; keeping previous iterate", k, sol.status)
            break
        Fk, Fik = sol["F"], sol["F_i"]
        tr = float(np.trace(Fk @ Fik))
        objectives.append(sol.objective)
        traces.append(tr)
        note = ""
        if tr < dim * (1 - 1e-6):
            note = "trace below dim(F)"
            log.warning("trace(F F_i)=%.10g below its lower bound %d", tr, dim)
        records.append(IterationRecord("cc", delta, k, sol.status, tr, sol.objective, note))
        best = sol
        if tr <= target:
            converged = True
            break
        if len(objectives) > 1 and objectives[-2] - objectives[-1] <= options.cc_stall_tol * abs(objectives[-2]):
            records[-1].note = (records[-1].note + " stagnation").strip()
            break
        if _hopeless(traces, target, options.cc_max_iter - k, options):
            records[-1].note = (records[-1].note + " projected target out of reach").strip()
            break
    return CCResult(sp.numeric(best.values), traces[-1], converged, len(traces), objectives, traces, records)


def delta_lower_bound(plant: PlantModel, options: CodesignOptions) -> tuple[float, list[IterationRecord]] | Infeasible:
    """Smallest ``delta`` (to ``bisection_tol``) for which the relaxed problem is feasible.

    The relaxed problem keeps only the ``tau = 0`` end of the ``eta``
    inequality; feasibility there is monotone in ``delta``.
    """
    records: list[IterationRecord] = []

    sp = SynthesisProblem(plant, options, include_T2=False)

    def feasible(delta: float) -> bool:
        sol = relaxed_feasible(plant, delta, options, problem=sp)
        records.append(IterationRecord("bisection", delta, len(records), sol.status))
        return sol.ok

    hi = options.delta_bar
    if not feasible(hi):
        numerical = records[-1].status == NUMERICAL_FAILURE
        return Infeasible(f"relaxed problem infeasible at delta_bar={hi:.6g}", records, numerical)
    lo = 0.0
    while hi - lo > options.bisection_tol:
        mid = (lo + hi) / 2
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi, records


def posterior_check(R, F) -> tuple[bool, float]:
    """``(passed, lambda_max(R - F^-1))``; a singular ``F`` fails with ``nan``."""
    R = np.asarray(R, dtype=float)
    F = np.asarray(F, dtype=float)
    try:
        if np.linalg.cond(F) > 1e14:
            raise np.linalg.LinAlgError
        Finv = np.linalg.inv(F)
    except np.linalg.LinAlgError:
        log.info("posterior check: F is singular")
        return False, math.nan
    D = R - Finv
    lam = float(np.linalg.eigvalsh((D + D.T) / 2)[-1])
    return lam < 0, lam


def _recover(plant: PlantModel, v: DesignVariables, options: CodesignOptions):
    U = factor_U(v.X, v.Y, v.V)
    P1 = build_P1(v.X, v.Y, U, v.V)
    ctrl, hold = reconstruct_controller(v.K, v.L, v.M, v.N, v.J, v.Z, v.X, v.Y, U, v.V, v.P2, plant)
    S = np.linalg.inv(v.F)
    cert = Certificate(P1=P1, P2=v.P2, S=(S + S.T) / 2, R=v.R, Q=v.Q, O=v.O, delta=v.delta,
                       gamma1=v.gamma1, gamma2=v.gamma2, gamma=options.gamma, T2=options.T2)
    return ctrl, hold, cert


def design(
    plant: PlantModel,
    options: CodesignOptions,
    progress: Callable[[IterationRecord], None] | None = None,
) -> DesignResult | Infeasible:
    """Bisection for a lower bound on ``delta``, then line search ``delta <- r delta``."""
    records: list[IterationRecord] = []

    def emit(recs):
        for r in recs:
            records.append(r)
            if progress is not None:
                progress(r)

    lb = delta_lower_bound(plant, options)
    if not lb:
        emit(lb.log)
        return Infeasible(lb.reason, records, lb.numerical)
    delta_lower, recs = lb
    emit(recs)
    delta = delta_lower
    all_numerical = True
    sp = SynthesisProblem(plant, options, include_T2=True)
    while delta <= options.delta_bar * (1 + 1e-12):
        res = cc_minimize_trace(plant, delta, options, problem=sp)
        if not res:
            emit(res.log)
            all_numerical &= res.numerical
            delta *= options.r
            continue
        emit(res.log)
        ok, lam = posterior_check(res.variables.R, res.variables.F)
        emit([IterationRecord("posterior", delta, res.iterations, "pass" if ok else "fail",
                              res.trace, note=f"lambda_max(R - F^-1) = {lam:.6g}")])
        if ok:
            all_numerical = False
            try:
                ctrl, hold, cert = _recover(plant, res.variables, options)
            except SingularMatrixError as exc:
                emit([IterationRecord("verify", delta, 0, "fail", note=str(exc))])
                delta *= options.r
                continue
            cl = assemble_closed_loop(plant, ctrl, hold)
            report = verify_certificate(cert, cl, slack=options.verify_slack)
            emit([IterationRecord("verify", delta, 0, "pass" if report.passed else "fail",
                                  note=report.summary())])
            if report.passed:
                return DesignResult(plant, ctrl, hold, cert, cl, res.variables, delta, delta_lower,
                                    res.trace, report, records)
        else:
            all_numerical = False
        delta *= options.r
    return Infeasible(f"no feasible solution for delta up to {options.delta_bar:.6g}", records,
                      numerical=all_numerical)


def minimize_gamma(plant: PlantModel, options: CodesignOptions, lo: float, hi: float, tol: float = 0.1):
    """Outer bisection on ``gamma``; returns the best DesignResult found (or Infeasible)."""
    best = design(plant, options.replace(gamma=hi))
    if not best:
        return best
    while hi - lo > tol:
        mid = (lo + hi) / 2
        res = design(plant, options.replace(gamma=mid))
        if res:
            best, hi = res, mid
        else:
            lo = mid
    return best
