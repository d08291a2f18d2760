"""Plant, controller and holder descriptions and the hybrid closed loop they form.

The closed loop is written in the coordinates ``xbar = (x_p, x_c)`` and
``eta = C_p x_p - yhat`` (the holder error), plus a countdown timer ``tau``.
Between transmissions::

    d/dt xbar = A_xx xbar + A_xe eta + W_x d
    d/dt eta  = A_ex xbar + A_ee eta + W_e d
    d/dt tau  = -1
    y_o       = C_o xbar

and at a transmission ``eta`` is reset to zero and ``tau`` to the next
inter-sample interval.

The module also holds the change of variables that turns the LMI solution
``(K, L, M, N, J, Z)`` into controller and holder matrices, and its inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any

import numpy as np

from ._linalg import SingularMatrixError, as_matrix, inv_checked, sym

__all__ = [
    "DimensionError",
    "SingularMatrixError",
    "PlantModel",
    "ControllerParams",
    "HolderParams",
    "TimingBounds",
    "ClosedLoopMatrices",
    "assemble_closed_loop",
    "zoh_holder",
    "factor_U",
    "build_P1",
    "reconstruct_controller",
    "invert_controller_map",
    "eta_from_yhat",
    "yhat_from_eta",
]


class DimensionError(ValueError):
    """Matrices handed to a constructor or operation do not conform."""


def _check_shape(name: str, a: np.ndarray, rows: int | None, cols: int | None) -> None:
    if (rows is not None and a.shape[0] != rows) or (cols is not None and a.shape[1] != cols):
        want = f"({rows if rows is not None else '*'}, {cols if cols is not None else '*'})"
        raise DimensionError(f"{name} has shape {a.shape}, expected {want}")


def _matrix_from_json(data: dict, key: str, owner: str) -> np.ndarray:
    if key not in data:
        raise DimensionError(f"{owner}: missing field '{key}'")
    try:
        return as_matrix(data[key], name=f"{owner}.{key}")
    except (TypeError, ValueError) as exc:
        raise DimensionError(f"{owner}.{key}: {exc}") from None


class _MatrixRecord:
    """Mixin: JSON round trip for frozen dataclasses of matrices."""

    _dims: tuple[str, ...] = ()

    def to_json_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {d: int(getattr(self, d)) for d in self._dims}
        for f in fields(self):  # type: ignore[arg-type]
            value = getattr(self, f.name)
            out[f.name] = value.tolist() if isinstance(value, np.ndarray) else value
        return out

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]):
        owner = cls.__name__
        kwargs = {}
        for f in fields(cls):  # type: ignore[arg-type]
            if f.type in ("float", float):
                if f.name not in data:
                    raise DimensionError(f"{owner}: missing field '{f.name}'")
                kwargs[f.name] = float(data[f.name])
            else:
                kwargs[f.name] = _matrix_from_json(data, f.name, owner)
        obj = cls(**kwargs)
        for d in cls._dims:
            if d in data and int(data[d]) != getattr(obj, d):
                raise DimensionError(
                    f"{owner}: declared {d}={data[d]} but matrices imply {getattr(obj, d)}"
                )
        return obj


@dataclass(frozen=True)
class PlantModel(_MatrixRecord):
    """LTI plant ``x_p' = A_p x_p + B_p u + W_p d``, ``y = C_p x_p``, ``y_o = C_op x_p``."""

    A_p: np.ndarray
    B_p: np.ndarray
    W_p: np.ndarray
    C_p: np.ndarray
    C_op: np.ndarray

    _dims = ("n_p", "n_u", "n_d", "n_y", "n_yo")

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, as_matrix(getattr(self, f.name), f.name))
        n = self.A_p.shape[0]
        _check_shape("A_p", self.A_p, n, n)
        _check_shape("B_p", self.B_p, n, None)
        _check_shape("W_p", self.W_p, n, None)
        _check_shape("C_p", self.C_p, None, n)
        _check_shape("C_op", self.C_op, None, n)
        if min(self.A_p.size, self.B_p.size, self.W_p.size, self.C_p.size, self.C_op.size) == 0:
            raise DimensionError("all plant dimensions must be at least 1")

    @property
    def n_p(self) -> int:
        return self.A_p.shape[0]

    @property
    def n_u(self) -> int:
        return self.B_p.shape[1]

    @property
    def n_d(self) -> int:
        return self.W_p.shape[1]

    @property
    def n_y(self) -> int:
        return self.C_p.shape[0]

    @property
    def n_yo(self) -> int:
        return self.C_op.shape[0]


@dataclass(frozen=True)
class ControllerParams(_MatrixRecord):
    """Dynamic controller ``x_c' = A_c x_c + B_c yhat``, ``u = C_c x_c + D_c yhat``."""

    A_c: np.ndarray
    B_c: np.ndarray
    C_c: np.ndarray
    D_c: np.ndarray

    _dims = ("n_c",)

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, as_matrix(getattr(self, f.name), f.name))
        n = self.A_c.shape[0]
        _check_shape("A_c", self.A_c, n, n)
        _check_shape("B_c", self.B_c, n, None)
        _check_shape("C_c", self.C_c, None, n)
        _check_shape("D_c", self.D_c, self.C_c.shape[0], self.B_c.shape[1])

    @property
    def n_c(self) -> int:
        return self.A_c.shape[0]

    def check_against(self, plant: PlantModel) -> None:
        _check_shape("B_c", self.B_c, None, plant.n_y)
        _check_shape("C_c", self.C_c, plant.n_u, None)

    @classmethod
    def zeros(cls, plant: PlantModel, n_c: int | None = None) -> "ControllerParams":
        n_c = plant.n_p if n_c is None else n_c
        return cls(
            np.zeros((n_c, n_c)),
            np.zeros((n_c, plant.n_y)),
            np.zeros((plant.n_u, n_c)),
            np.zeros((plant.n_u, plant.n_y)),
        )


@dataclass(frozen=True)
class HolderParams(_MatrixRecord):
    """Holding device ``yhat' = H yhat + E x_c`` between samples, ``yhat+ = y`` at samples."""

    H: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "H", as_matrix(self.H, "H"))
        object.__setattr__(self, "E", as_matrix(self.E, "E"))
        n_y = self.H.shape[0]
        _check_shape("H", self.H, n_y, n_y)
        _check_shape("E", self.E, n_y, None)

    def check_against(self, plant: PlantModel, ctrl: ControllerParams) -> None:
        _check_shape("H", self.H, plant.n_y, plant.n_y)
        _check_shape("E", self.E, plant.n_y, ctrl.n_c)


def zoh_holder(plant: PlantModel, ctrl: ControllerParams) -> HolderParams:
    """Zero-order hold: ``H = 0``, ``E = 0``."""
    return HolderParams(np.zeros((plant.n_y, plant.n_y)), np.zeros((plant.n_y, ctrl.n_c)))


@dataclass(frozen=True)
class TimingBounds:
    """Inter-transmission intervals lie in ``[T1, T2]``; ``T2`` is the MATI."""

    T1: float
    T2: float

    def __post_init__(self):
        if not (self.T1 > 0 and self.T2 >= self.T1):
            raise ValueError(f"need 0 < T1 <= T2, got T1={self.T1}, T2={self.T2}")


@dataclass(frozen=True)
class ClosedLoopMatrices(_MatrixRecord):
    """Flow-map blocks of the closed loop in ``(xbar, eta)`` coordinates.

    ``A_xx, A_xe, W_x`` drive ``xbar``; ``A_ex, A_ee, W_e`` drive ``eta``;
    ``C_o`` maps ``xbar`` to the regulated output.
    """

    A_xx: np.ndarray
    A_xe: np.ndarray
    W_x: np.ndarray
    A_ex: np.ndarray
    A_ee: np.ndarray
    W_e: np.ndarray
    C_o: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, as_matrix(getattr(self, f.name), f.name))
        nx, ne = self.A_xx.shape[0], self.A_ee.shape[0]
        _check_shape("A_xx", self.A_xx, nx, nx)
        _check_shape("A_xe", self.A_xe, nx, ne)
        _check_shape("W_x", self.W_x, nx, None)
        _check_shape("A_ex", self.A_ex, ne, nx)
        _check_shape("A_ee", self.A_ee, ne, ne)
        _check_shape("W_e", self.W_e, ne, self.W_x.shape[1])
        _check_shape("C_o", self.C_o, None, nx)

    @property
    def n_x(self) -> int:
        return self.A_xx.shape[0]

    @property
    def n_e(self) -> int:
        return self.A_ee.shape[0]

    @property
    def n_d(self) -> int:
        return self.W_x.shape[1]

    def flow_matrix(self) -> np.ndarray:
        """Stacked ``[[A_xx, A_xe], [A_ex, A_ee]]`` acting on ``(xbar, eta)``."""
        return np.block([[self.A_xx, self.A_xe], [self.A_ex, self.A_ee]])

    def input_matrix(self) -> np.ndarray:
        return np.vstack([self.W_x, self.W_e])


def assemble_closed_loop(
    plant: PlantModel, ctrl: ControllerParams, hold: HolderParams
) -> ClosedLoopMatrices:
    """Interconnect plant, controller and holder into :class:`ClosedLoopMatrices`."""
    ctrl.check_against(plant)
    hold.check_against(plant, ctrl)
    Ap, Bp, Wp, Cp = plant.A_p, plant.B_p, plant.W_p, plant.C_p
    Ac, Bc, Cc, Dc = ctrl.A_c, ctrl.B_c, ctrl.C_c, ctrl.D_c
    H, E = hold.H, hold.E
    CpBp = Cp @ Bp
    return ClosedLoopMatrices(
        A_xx=np.block([[Ap + Bp @ Dc @ Cp, Bp @ Cc], [Bc @ Cp, Ac]]),
        A_xe=-np.vstack([Bp @ Dc, Bc]),
        W_x=np.vstack([Wp, np.zeros((ctrl.n_c, plant.n_d))]),
        A_ex=np.hstack([Cp @ Ap + CpBp @ Dc @ Cp - H @ Cp, CpBp @ Cc - E]),
        # eta = C_p x_p - yhat, so the holder matrix enters with a plus sign.
        A_ee=H - CpBp @ Dc,
        W_e=Cp @ Wp,
        C_o=np.hstack([plant.C_op, np.zeros((plant.n_yo, ctrl.n_c))]),
    )


def eta_from_yhat(x_p: np.ndarray, yhat: np.ndarray, plant: PlantModel) -> np.ndarray:
    return plant.C_p @ np.asarray(x_p, dtype=float) - np.asarray(yhat, dtype=float)


def yhat_from_eta(x_p: np.ndarray, eta: np.ndarray, plant: PlantModel) -> np.ndarray:
    return plant.C_p @ np.asarray(x_p, dtype=float) - np.asarray(eta, dtype=float)


def factor_U(X, Y, V) -> np.ndarray:
    """Return ``U = (I - X Y) V^{-T}``, so that ``X Y + U V^T = I``."""
    X, Y, V = as_matrix(X, "X"), as_matrix(Y, "Y"), as_matrix(V, "V")
    n = X.shape[0]
    inv_checked(V, "V")
    G = np.eye(n) - X @ Y
    inv_checked(G, "I - XY")
    return np.linalg.solve(V, G.T).T


def build_P1(X, Y, U, V) -> np.ndarray:
    """Lyapunov matrix of ``xbar`` implied by ``(X, Y, U, V)``.

    ``[[X, U], [U^T, -V^{-1} (Y - Y X Y) V^{-T}]]``. Positive definiteness is
    not asserted here.
    """
    X, Y, U, V = (as_matrix(m, k) for m, k in ((X, "X"), (Y, "Y"), (U, "U"), (V, "V")))
    Vinv = inv_checked(V, "V")
    lower = -Vinv @ (Y - Y @ X @ Y) @ Vinv.T
    return sym(np.block([[X, U], [U.T, lower]]), name="P1")


def reconstruct_controller(K, L, M, N, J, Z, X, Y, U, V, P2, plant: PlantModel):
    """Map the linearizing variables back to controller and holder matrices.

    Returns ``(ControllerParams, HolderParams)``. The holder uses
    ``E = C_p B_p C_c + P2^{-1} Z`` and ``H = C_p B_p D_c + P2^{-1} J``.
    """
    K, L, M, N, J, Z, X, Y, U, V, P2 = (
        as_matrix(m, k)
        for m, k in zip(
            (K, L, M, N, J, Z, X, Y, U, V, P2),
            ("K", "L", "M", "N", "J", "Z", "X", "Y", "U", "V", "P2"),
        )
    )
    n, nu, ny = plant.n_p, plant.n_u, plant.n_y
    for name, a, shape in (
        ("K", K, (n, n)), ("L", L, (n, ny)), ("M", M, (nu, n)), ("N", N, (nu, ny)),
        ("J", J, (ny, ny)), ("Z", Z, (ny, n)), ("X", X, (n, n)), ("Y", Y, (n, n)),
        ("U", U, (n, n)), ("V", V, (n, n)), ("P2", P2, (ny, ny)),
    ):
        _check_shape(name, a, *shape)
    Uinv = inv_checked(U, "U")
    VinvT = inv_checked(V, "V").T
    P2inv = inv_checked(P2, "P2")
    Ap, Bp, Cp = plant.A_p, plant.B_p, plant.C_p

    left = np.block([[Uinv, -Uinv @ X @ Bp], [np.zeros((nu, n)), np.eye(nu)]])
    middle = np.block([[K - X @ Ap @ Y, L], [M, N]])
    right = np.block([[VinvT, np.zeros((n, ny))], [-Cp @ Y @ VinvT, np.eye(ny)]])
    G = left @ middle @ right
    ctrl = ControllerParams(G[:n, :n], G[:n, n:], G[n:, :n], G[n:, n:])

    CpBp = Cp @ Bp
    hold = HolderParams(H=CpBp @ ctrl.D_c + P2inv @ J, E=CpBp @ ctrl.C_c + P2inv @ Z)
    return ctrl, hold


def invert_controller_map(ctrl: ControllerParams, X, Y, U, V, plant: PlantModel):
    """Inverse of the controller half of :func:`reconstruct_controller`.

    Returns ``(K, L, M, N)``.
    """
    X, Y, U, V = (as_matrix(m, k) for m, k in ((X, "X"), (Y, "Y"), (U, "U"), (V, "V")))
    ctrl.check_against(plant)
    n, nu, ny = plant.n_p, plant.n_u, plant.n_y
    if ctrl.n_c != n:
        raise DimensionError(f"controller order {ctrl.n_c} differs from plant order {n}")
    inv_checked(U, "U")
    inv_checked(V, "V")
    Ap, Bp, Cp = plant.A_p, plant.B_p, plant.C_p
    G = np.block([[ctrl.A_c, ctrl.B_c], [ctrl.C_c, ctrl.D_c]])
    left = np.block([[U, X @ Bp], [np.zeros((nu, n)), np.eye(nu)]])
    right = np.block([[V.T, np.zeros((n, ny))], [Cp @ Y, np.eye(ny)]])
    T = left @ G @ right
    return T[:n, :n] + X @ Ap @ Y, T[:n, n:], T[n:, :n], T[n:, n:]
