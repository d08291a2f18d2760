"""Thin layer over cvxpy for the LMI problems solved here.

A :class:`SdpProblem` holds named decision variables, named affine matrix
inequalities (``expr << -margin*I`` or ``expr >> margin*I``), linear
equalities and a linear objective. :func:`solve` never raises on solver
trouble: the outcome is reported in :class:`SdpSolution.status`, and every
"optimal" answer is re-checked with a dense symmetric eigensolver before it
is returned.
"""

from __future__ import annotations

import io
import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import IO, Literal

import cvxpy as cp
import numpy as np

from ._linalg import max_abs

log = logging.getLogger(__name__)

Sense = Literal["<<", ">>"]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"

__all__ = [
    "SolverSettings",
    "LmiConstraint",
    "SdpProblem",
    "SdpSolution",
    "MalformedProblemError",
    "solve",
    "OPTIMAL",
    "INFEASIBLE",
    "NUMERICAL_FAILURE",
]


class MalformedProblemError(ValueError):
    """Problem rejected before reaching the solver."""


@dataclass
class SolverSettings:
    solver: str = "CLARABEL"
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iters: int = 200
    # accepted constraint violation in the independent re-check, relative to
    # max(1, largest entry of the constraint matrix)
    verify_tol: float = 1e-6
    verbose: bool = False

    def solver_kwargs(self) -> dict:
        s = self.solver.upper()
        if s == "CLARABEL":
            return dict(
                tol_feas=self.feas_tol,
                tol_gap_abs=self.gap_tol,
                tol_gap_rel=self.gap_tol,
                max_iter=self.max_iters,
            )
        if s == "CVXOPT":
            return dict(feastol=self.feas_tol, abstol=self.gap_tol, reltol=self.gap_tol,
                        max_iters=self.max_iters)
        if s == "SCS":
            return dict(eps_abs=self.feas_tol, eps_rel=self.gap_tol, max_iters=50 * self.max_iters)
        return {}


@dataclass
class LmiConstraint:
    name: str
    expr: cp.Expression
    sense: Sense = "<<"
    margin: float = 0.0

    def residual(self, value: np.ndarray) -> float:
        """Signed violation (``<= 0`` means satisfied) at a numeric value of ``expr``."""
        value = np.atleast_2d(np.asarray(value, dtype=float))
        w = np.linalg.eigvalsh((value + value.T) / 2)
        if self.sense == "<<":
            return float(w[-1] + self.margin)
        return float(self.margin - w[0])


@dataclass
class SdpSolution:
    status: str
    values: dict[str, np.ndarray] | None = None
    objective: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def __getitem__(self, name: str) -> np.ndarray:
        if self.values is None:
            raise KeyError(f"no values (status {self.status})")
        return self.values[name]


class SdpProblem:
    """Container for variables, LMIs, equalities and a linear objective."""

    def __init__(self, name: str = "sdp"):
        self.name = name
        self.variables: dict[str, cp.Variable] = {}
        self.constraints: list[LmiConstraint] = []
        self.equalities: list[tuple[str, cp.Expression]] = []
        self.objective: cp.Expression | None = None
        self._compiled: cp.Problem | None = None

    # -- declarations -----------------------------------------------------
    def _declare(self, name: str, var: cp.Variable) -> cp.Variable:
        if name in self.variables:
            raise MalformedProblemError(f"variable {name!r} declared twice")
        self.variables[name] = var
        self._compiled = None
        return var

    def symmetric(self, name: str, n: int) -> cp.Variable:
        return self._declare(name, cp.Variable((n, n), symmetric=True, name=name))

    def matrix(self, name: str, rows: int, cols: int) -> cp.Variable:
        return self._declare(name, cp.Variable((rows, cols), name=name))

    def scalar(self, name: str) -> cp.Variable:
        return self._declare(name, cp.Variable(name=name))

    def add_lmi(self, name: str, expr, sense: Sense = "<<", margin: float = 0.0) -> LmiConstraint:
        if sense not in ("<<", ">>"):
            raise MalformedProblemError(f"{name}: unknown sense {sense!r}")
        expr = cp.Constant(expr) if not isinstance(expr, cp.Expression) else expr
        if expr.ndim == 0:
            expr = cp.reshape(expr, (1, 1), order="F")
        if expr.ndim != 2 or expr.shape[0] != expr.shape[1]:
            raise MalformedProblemError(f"{name}: LMI expression must be square, got {expr.shape}")
        con = LmiConstraint(name, expr, sense, float(margin))
        self.constraints.append(con)
        self._compiled = None
        return con

    def add_equality(self, name: str, expr) -> None:
        self.equalities.append((name, expr))
        self._compiled = None

    def minimize(self, expr) -> None:
        self.objective = expr
        self._compiled = None

    def feasibility(self) -> None:
        self.minimize(None)

    # -- checks -----------------------------------------------------------
    def validate(self) -> None:
        declared = {id(v) for v in self.variables.values()}
        exprs = [(c.name, c.expr) for c in self.constraints] + list(self.equalities)
        if self.objective is not None:
            exprs.append(("objective", self.objective))
        for name, expr in exprs:
            for var in expr.variables():
                if id(var) not in declared:
                    raise MalformedProblemError(f"{name}: references undeclared variable {var.name()}")
            if not expr.is_affine():
                raise MalformedProblemError(f"{name}: expression is not affine")
        if self.objective is not None and self.objective.size != 1:
            raise MalformedProblemError("objective must be scalar")
        # structural symmetry: evaluate at random values
        rng = np.random.default_rng(0)
        saved = {k: v.value for k, v in self.variables.items()}
        unset = {id(q): q for _, e in exprs for q in e.parameters() if q.value is None}
        try:
            for q in unset.values():
                q.value = np.abs(rng.standard_normal(q.shape)) if q.shape else abs(rng.standard_normal())
            for var in self.variables.values():
                val = rng.standard_normal(var.shape) if var.shape else rng.standard_normal()
                if var.is_symmetric() and var.ndim == 2:
                    val = val + val.T
                var.value = val
            for c in self.constraints:
                v = np.atleast_2d(c.expr.value)
                if max_abs(v - v.T) > 1e-9 * max(1.0, max_abs(v)):
                    raise MalformedProblemError(f"{c.name}: constraint matrix is not symmetric")
        finally:
            for k, v in self.variables.items():
                v.value = saved[k]
            for q in unset.values():
                q.value = None

    def compile(self) -> cp.Problem:
        if self._compiled is None:
            self.validate()
            cons = []
            for c in self.constraints:
                e = (c.expr + c.expr.T) / 2
                n = e.shape[0]
                if c.sense == "<<":
                    cons.append(e << -c.margin * np.eye(n))
                else:
                    cons.append(e >> c.margin * np.eye(n))
            cons += [expr == 0 for _, expr in self.equalities]
            obj = cp.Minimize(0 if self.objective is None else self.objective)
            self._compiled = cp.Problem(obj, cons)
        return self._compiled

    # -- export -----------------------------------------------------------
    def coordinates(self) -> list[tuple[str, tuple]]:
        """Scalar coordinates, one per free entry (upper triangle for symmetric)."""
        coords = []
        for name, var in self.variables.items():
            if var.ndim == 0:
                coords.append((name, ()))
            elif var.is_symmetric():
                n = var.shape[0]
                coords += [(name, (i, j)) for i in range(n) for j in range(i, n)]
            else:
                coords += [(name, (i, j)) for i in range(var.shape[0]) for j in range(var.shape[1])]
        return coords

    def dump_sdpa(self, out: IO[str] | None = None) -> str:
        """Write the problem in SDPA sparse format (see README); returns the text."""
        self.validate()
        coords = self.coordinates()
        saved = {k: v.value for k, v in self.variables.items()}

        def set_point(active=None):
            for name, var in self.variables.items():
                var.value = np.zeros(var.shape) if var.shape else 0.0
            if active is not None:
                name, idx = active
                var = self.variables[name]
                if not idx:
                    var.value = 1.0
                else:
                    val = np.zeros(var.shape)
                    val[idx] = 1.0
                    if var.is_symmetric():
                        val[idx[::-1]] = 1.0
                    var.value = val

        def snapshot():
            blocks = []
            for c in self.constraints:
                v = np.atleast_2d(np.asarray(c.expr.value, dtype=float))
                blocks.append(-v if c.sense == "<<" else v)
            lp = [np.ravel(np.asarray(e.value, dtype=float)) for _, e in self.equalities]
            lp = np.concatenate(lp) if lp else np.zeros(0)
            obj = 0.0 if self.objective is None else float(np.asarray(self.objective.value).sum())
            return blocks, np.concatenate([lp, -lp]), obj

        try:
            set_point()
            base_blocks, base_lp, base_obj = snapshot()
            columns = []
            for coord in coords:
                set_point(coord)
                b, lp, obj = snapshot()
                columns.append(([bi - b0 for bi, b0 in zip(b, base_blocks)], lp - base_lp, obj - base_obj))
        finally:
            for k, v in self.variables.items():
                v.value = saved[k]

        # F0 such that sum_k x_k F_k - F0 >= 0
        F0 = []
        for c, b0 in zip(self.constraints, base_blocks):
            F0.append(-b0 + c.margin * np.eye(b0.shape[0]))
        sizes = [b.shape[0] for b in base_blocks]
        if base_lp.size:
            sizes.append(-base_lp.size)
        buf = io.StringIO()
        buf.write(f'"{self.name}: {len(self.constraints)} LMI blocks, objective offset {base_obj:.17g}\n')
        for k, (name, idx) in enumerate(coords, start=1):
            buf.write(f"* x{k} = {name}{list(idx) if idx else ''}\n")
        buf.write(f"{len(coords)}\n{len(sizes)}\n{' '.join(map(str, sizes))}\n")
        buf.write(" ".join(f"{col[2]:.17g}" for col in columns) + "\n")

        def write_mat(matno, blocks, lp):
            for blk, m in enumerate(blocks, start=1):
                iu = np.argwhere(np.triu(np.abs(m) > 0))
                for i, j in iu:
                    buf.write(f"{matno} {blk} {i + 1} {j + 1} {m[i, j]:.17g}\n")
            if lp.size:
                for i in np.flatnonzero(lp):
                    buf.write(f"{matno} {len(blocks) + 1} {i + 1} {i + 1} {lp[i]:.17g}\n")

        write_mat(0, F0, -base_lp)
        for k, (blocks, lp, _) in enumerate(columns, start=1):
            write_mat(k, blocks, lp)
        text = buf.getvalue()
        if out is not None:
            out.write(text)
        return text


def _verify(problem: SdpProblem, settings: SolverSettings) -> tuple[dict[str, float], bool]:
    residuals: dict[str, float] = {}
    ok = True
    for c in problem.constraints:
        value = np.atleast_2d(np.asarray(c.expr.value, dtype=float))
        r = c.residual(value)
        residuals[c.name] = r
        if r > settings.verify_tol * max(1.0, max_abs(value)):
            ok = False
    for name, expr in problem.equalities:
        r = max_abs(np.asarray(expr.value, dtype=float))
        residuals[name] = r
        if r > settings.verify_tol:
            ok = False
    return residuals, ok


def solve(problem: SdpProblem, settings: SolverSettings | None = None) -> SdpSolution:
    """Solve ``problem``; malformed problems raise, solver trouble is a status."""
    settings = settings or SolverSettings()
    prob = problem.compile()
    t0 = time.perf_counter()
    diag: dict = {"solver": settings.solver}
    try:
        with warnings.catch_warnings():
            # inaccurate solutions are judged by the independent re-check below
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=settings.solver, verbose=settings.verbose, **settings.solver_kwargs())
    except (cp.error.SolverError, ArithmeticError, ValueError) as exc:
        diag.update(error=str(exc), solve_time=time.perf_counter() - t0)
        log.debug("%s: solver error %s", problem.name, exc)
        return SdpSolution(NUMERICAL_FAILURE, diagnostics=diag)
    diag["solve_time"] = time.perf_counter() - t0
    diag["solver_status"] = prob.status
    stats = prob.solver_stats
    if stats is not None:
        diag["iterations"] = stats.num_iters
    if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SdpSolution(INFEASIBLE, diagnostics=diag)
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return SdpSolution(NUMERICAL_FAILURE, diagnostics=diag)
    residuals, ok = _verify(problem, settings)
    diag["residuals"] = residuals
    diag["max_residual"] = max(residuals.values(), default=0.0)
    if not ok:
        log.debug("%s: re-check failed, max residual %.3e", problem.name, diag["max_residual"])
        return SdpSolution(NUMERICAL_FAILURE, diagnostics=diag)
    values = {}
    for name, var in problem.variables.items():
        v = np.array(var.value, dtype=float)
        if var.ndim == 2 and var.is_symmetric():
            v = (v + v.T) / 2
        values[name] = v if v.ndim else float(v)
    obj = None if problem.objective is None else float(prob.value)
    return SdpSolution(OPTIMAL, values=values, objective=obj, diagnostics=diag)
