"""Matrix-inequality blocks for analysis and synthesis.

Every builder is affine in its decision variables (``delta`` and ``tau``
fixed) and accepts either numpy arrays or cvxpy expressions, so the same
code assembles the SDP constraints and evaluates them at a solution.
Each builder returns a matrix that must be negative semidefinite, except
:func:`build_theta`, which must be positive definite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from ._linalg import as_matrix, he, lambda_max, lambda_min
from .model import ClosedLoopMatrices, DimensionError, PlantModel

try:  # cvxpy is only needed when builders receive cvxpy expressions
    import cvxpy as cp
except ImportError:  # pragma: no cover
    cp = None

__all__ = [
    "DesignVariables",
    "Certificate",
    "build_theta",
    "build_lambda",
    "build_phi",
    "build_M1hat",
    "build_M2hat",
    "build_analysis_M1",
    "build_analysis_M1bar",
    "build_analysis_M2",
    "decay_rate_lmi",
    "speed_bound_lmi",
    "damping_sector_lmi",
]


def _is_expr(a) -> bool:
    return cp is not None and isinstance(a, cp.Expression)


def bmat(rows):
    """Block matrix from nested lists; cvxpy ``bmat`` if any block is an expression."""
    if any(_is_expr(b) for row in rows for b in row):
        return cp.bmat(rows)
    return np.block([[np.asarray(b, dtype=float) for b in row] for row in rows])


def _eye(n: int) -> np.ndarray:
    return np.eye(n)


def _zeros(r: int, c: int) -> np.ndarray:
    return np.zeros((r, c))


@dataclass
class DesignVariables:
    """Decision variables of the synthesis LMIs at a fixed ``delta``.

    Fields hold numpy arrays after a solve, or cvxpy variables while the
    problem is being assembled. ``F_i`` is the relaxed inverse of ``F``.
    """

    X: object
    Y: object
    K: object
    L: object
    M: object
    N: object
    J: object
    Z: object
    V: object
    P2: object
    Q: object
    O: object
    R: object
    F: object
    F_i: object
    gamma1: object
    gamma2: object
    delta: float

    SYMMETRIC = ("X", "Y", "P2", "Q", "O", "R", "F", "F_i")

    def values(self) -> "DesignVariables":
        """Numeric copy (reads ``.value`` from cvxpy variables)."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if _is_expr(v):
                v = v.value
                if v is None:
                    raise ValueError(f"variable {f.name} has no value")
            out[f.name] = float(v) if f.name in ("gamma1", "gamma2", "delta") else np.array(v, dtype=float)
        for name in self.SYMMETRIC:
            a = out[name]
            out[name] = (a + a.T) / 2
        return DesignVariables(**out)

    def check(self, tol: float = 1e-10) -> None:
        """Assert the numeric invariants: symmetry and positive scalars."""
        for name in self.SYMMETRIC:
            a = as_matrix(getattr(self, name), name)
            scale = max(1.0, float(np.max(np.abs(a))))
            if np.max(np.abs(a - a.T)) > tol * scale:
                raise ValueError(f"{name} is not symmetric")
        for name in ("gamma1", "gamma2", "delta"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be positive")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Certificate:
    """Quadratic Lyapunov data for the closed loop.

    ``V(x) = xbar' P1 xbar + exp(delta * tau) eta' P2 eta``; ``S, R, Q, O``
    weight the supply rates of the two subsystems and ``gamma1 + gamma2``
    must not exceed ``gamma**2``.
    """

    P1: np.ndarray
    P2: np.ndarray
    S: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    O: np.ndarray
    delta: float
    gamma1: float
    gamma2: float
    gamma: float
    T2: float

    def __post_init__(self):
        for name in ("P1", "P2", "S", "R", "Q", "O"):
            a = as_matrix(getattr(self, name), name)
            object.__setattr__(self, name, (a + a.T) / 2)
        nx, ne = self.P1.shape[0], self.P2.shape[0]
        for name, n in (("S", nx), ("R", nx), ("Q", ne), ("O", ne)):
            if getattr(self, name).shape != (n, n):
                raise DimensionError(f"{name} must be {n}x{n}")
        for name in ("delta", "gamma1", "gamma2", "gamma", "T2"):
            object.__setattr__(self, name, float(getattr(self, name)))

    # sandwich constants
    @property
    def c_v1_low(self) -> float:
        return lambda_min(self.P1)

    @property
    def c_v1_high(self) -> float:
        return lambda_max(self.P1)

    @property
    def c_v2_low(self) -> float:
        return lambda_min(self.P2)

    @property
    def c_v2_high(self) -> float:
        return lambda_max(self.P2) * math.exp(self.delta * self.T2)

    @property
    def k_v1(self) -> float:
        return -lambda_max(self.R - self.S)

    @property
    def k_v2(self) -> float:
        return -lambda_max(self.Q - self.O)

    @property
    def chi1(self) -> float:
        return min(self.c_v1_low, self.c_v2_low)

    @property
    def chi2(self) -> float:
        return max(self.c_v1_high, self.c_v2_high)

    @property
    def chi3(self) -> float:
        return min(self.k_v1, self.k_v2)

    @property
    def lambda_t(self) -> float:
        """Flow decay rate: ``V`` decreases at least like ``exp(-2 lambda_t t)``."""
        return self.chi3 / (2 * self.chi2)

    # supply-rate pieces
    def rho1(self, xbar):
        return float(xbar @ self.S @ xbar)

    def rho2(self, eta):
        return float(eta @ self.Q @ eta)

    def rho3(self, xbar, d, C_o):
        y = C_o @ xbar
        return float(-y @ y + self.gamma1 * d @ d)

    def sigma1(self, eta):
        return float(eta @ self.O @ eta)

    def sigma2(self, xbar):
        return float(xbar @ self.R @ xbar)

    def sigma3(self, d):
        return float(self.gamma2 * d @ d)

    def to_json_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "Certificate":
        missing = [f.name for f in fields(cls) if f.name not in data]
        if missing:
            raise DimensionError(f"Certificate: missing field(s) {', '.join(missing)}")
        return cls(**{f.name: data[f.name] for f in fields(cls)})


# ---------------------------------------------------------------------------
# synthesis blocks


def build_theta(X, Y):
    """``[[Y, I], [I, X]]``; must be positive definite."""
    n = X.shape[0]
    return bmat([[Y, _eye(n)], [_eye(n), X]])


def build_phi(Y, V):
    n = Y.shape[0]
    return bmat([[Y, _eye(n)], [V.T, _zeros(n, n)]])


def build_lambda(v: DesignVariables, plant: PlantModel):
    """Transformed closed-loop state matrix (congruent to ``P1 A_xx``)."""
    Ap, Bp, Cp = plant.A_p, plant.B_p, plant.C_p
    return bmat(
        [
            [Ap @ v.Y + Bp @ v.M, Ap + Bp @ v.N @ Cp],
            [v.K, v.X @ Ap + v.L @ Cp],
        ]
    )


def build_M1hat(v: DesignVariables, plant: PlantModel):
    """Synthesis counterpart of the ``xbar`` dissipation inequality.

    Block order ``(xbar~, eta, d, F-slot, y_o-slot)``.
    """
    n, ny, nd, no = plant.n_p, plant.n_y, plant.n_d, plant.n_yo
    Bp, Wp = plant.B_p, plant.W_p
    Lam = build_lambda(v, plant)
    Pi = -bmat([[Bp @ v.N], [v.L]])
    Xi = bmat([[Wp], [v.X @ Wp]])
    Phi = build_phi(v.Y, v.V)
    Co = np.hstack([plant.C_op, _zeros(no, n)])
    PhiT_CoT = Phi.T @ Co.T
    g1 = v.gamma1 * _eye(nd)
    return bmat(
        [
            [he(Lam), Pi, Xi, Phi.T, PhiT_CoT],
            [Pi.T, -v.Q, _zeros(ny, nd), _zeros(ny, 2 * n), _zeros(ny, no)],
            [Xi.T, _zeros(nd, ny), -g1, _zeros(nd, 2 * n), _zeros(nd, no)],
            [Phi, _zeros(2 * n, ny), _zeros(2 * n, nd), -v.F, _zeros(2 * n, no)],
            [PhiT_CoT.T, _zeros(no, ny), _zeros(no, nd), _zeros(no, 2 * n), -_eye(no)],
        ]
    )


def _check_tau(tau: float, T2: float | None) -> float:
    tau = float(tau)
    hi = math.inf if T2 is None else float(T2)
    if not (0.0 <= tau <= hi):
        raise ValueError(f"tau={tau} outside [0, {hi}]")
    return tau


def build_M2hat(tau: float, v: DesignVariables, plant: PlantModel, T2: float | None = None, weights=None):
    """Synthesis counterpart of the ``eta`` dissipation inequality at timer value ``tau``.

    Block order ``(eta, xbar, d)``. ``weights = (exp(delta tau), delta exp(delta tau))``
    may be supplied (e.g. as cvxpy parameters); by default they come from ``v.delta``.
    """
    tau = _check_tau(tau, T2)
    n, nd = plant.n_p, plant.n_d
    Ap, Cp = plant.A_p, plant.C_p
    W = Cp @ plant.W_p
    if weights is None:
        e = math.exp(v.delta * tau)
        de = v.delta * e
    else:
        e, de = weights
    M12 = bmat([[v.P2 @ Cp @ Ap - v.J @ Cp, -v.Z]])
    g2 = v.gamma2 * _eye(nd)
    return bmat(
        [
            [e * he(v.J) - de * v.P2 + v.O, e * M12, e * (v.P2 @ W)],
            [e * M12.T, -v.R, _zeros(2 * n, nd)],
            [e * (v.P2 @ W).T, _zeros(nd, 2 * n), -g2],
        ]
    )


# ---------------------------------------------------------------------------
# analysis blocks


def build_analysis_M1(P1, S, Q, gamma1: float, cl: ClosedLoopMatrices) -> np.ndarray:
    """``xbar`` dissipation matrix, block order ``(xbar, eta, d)``."""
    P1, S, Q = as_matrix(P1, "P1"), as_matrix(S, "S"), as_matrix(Q, "Q")
    if P1.shape != (cl.n_x, cl.n_x) or Q.shape != (cl.n_e, cl.n_e):
        raise DimensionError("P1/Q do not match the closed loop")
    ne, nd = cl.n_e, cl.n_d
    return np.block(
        [
            [he(P1 @ cl.A_xx) + S + cl.C_o.T @ cl.C_o, P1 @ cl.A_xe, P1 @ cl.W_x],
            [(P1 @ cl.A_xe).T, -Q, np.zeros((ne, nd))],
            [(P1 @ cl.W_x).T, np.zeros((nd, ne)), -gamma1 * np.eye(nd)],
        ]
    )


def build_analysis_M1bar(P1, F, Q, gamma1: float, cl: ClosedLoopMatrices) -> np.ndarray:
    """Schur-expanded form of :func:`build_analysis_M1` with ``S = F^{-1}``."""
    P1, F, Q = as_matrix(P1, "P1"), as_matrix(F, "F"), as_matrix(Q, "Q")
    nx, ne, nd, no = cl.n_x, cl.n_e, cl.n_d, cl.C_o.shape[0]
    Z = np.zeros
    return np.block(
        [
            [he(P1 @ cl.A_xx), P1 @ cl.A_xe, P1 @ cl.W_x, np.eye(nx), cl.C_o.T],
            [(P1 @ cl.A_xe).T, -Q, Z((ne, nd)), Z((ne, nx)), Z((ne, no))],
            [(P1 @ cl.W_x).T, Z((nd, ne)), -gamma1 * np.eye(nd), Z((nd, nx)), Z((nd, no))],
            [np.eye(nx), Z((nx, ne)), Z((nx, nd)), -F, Z((nx, no))],
            [cl.C_o, Z((no, ne)), Z((no, nd)), Z((no, nx)), -np.eye(no)],
        ]
    )


def build_analysis_M2(
    tau: float, P2, O, R, gamma2: float, delta: float, cl: ClosedLoopMatrices, T2: float | None = None
) -> np.ndarray:
    """``eta`` dissipation matrix at timer value ``tau``, block order ``(eta, xbar, d)``."""
    tau = _check_tau(tau, T2)
    P2, O, R = as_matrix(P2, "P2"), as_matrix(O, "O"), as_matrix(R, "R")
    if P2.shape != (cl.n_e, cl.n_e) or R.shape != (cl.n_x, cl.n_x):
        raise DimensionError("P2/R do not match the closed loop")
    nx, nd = cl.n_x, cl.n_d
    e = math.exp(delta * tau)
    return np.block(
        [
            [(he(P2 @ cl.A_ee) - delta * P2) * e + O, e * P2 @ cl.A_ex, e * P2 @ cl.W_e],
            [e * (P2 @ cl.A_ex).T, -R, np.zeros((nx, nd))],
            [e * (P2 @ cl.W_e).T, np.zeros((nd, nx)), -gamma2 * np.eye(nd)],
        ]
    )


# ---------------------------------------------------------------------------
# optional pole-region constraints on A_xx (all must be negative semidefinite)


def decay_rate_lmi(v: DesignVariables, plant: PlantModel, alpha: float):
    """Spectrum of ``A_xx`` left of ``-alpha``."""
    return he(build_lambda(v, plant)) + 2 * alpha * build_theta(v.X, v.Y)


def speed_bound_lmi(v: DesignVariables, plant: PlantModel, beta: float):
    """Spectrum of ``A_xx`` right of ``-beta`` (no overly fast modes)."""
    return -he(build_lambda(v, plant)) - 2 * beta * build_theta(v.X, v.Y)


def damping_sector_lmi(v: DesignVariables, plant: PlantModel, zeta: float):
    """Spectrum of ``A_xx`` inside the cone of damping ratio at least ``zeta``."""
    if not 0 < zeta < 1:
        raise ValueError("zeta must lie in (0, 1)")
    theta = math.acos(zeta)
    Lam = build_lambda(v, plant)
    s, c = math.sin(theta), math.cos(theta)
    return bmat([[s * he(Lam), c * (Lam - Lam.T)], [c * (Lam.T - Lam), s * he(Lam)]])
