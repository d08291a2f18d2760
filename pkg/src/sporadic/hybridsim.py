"""Simulation of the sampled closed loop as a hybrid system.

State ``(xbar, eta, tau)``: ``xbar`` stacks plant and controller states,
``eta = C_p x_p - yhat`` is the holding error and ``tau`` counts down to
the next sample. Flows integrate the linear dynamics with ``tau' = -1``;
at ``tau = 0`` the error resets (``eta+ = 0``) and ``tau`` restarts from
the next inter-sample interval supplied by a :class:`TransmissionPolicy`.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .model import ClosedLoopMatrices, PlantModel

__all__ = [
    "TransmissionPolicy",
    "FlowSegment",
    "JumpRecord",
    "HybridArc",
    "SimulationError",
    "simulate",
    "simulate_linear",
    "empirical_l2_ratio",
    "decay_estimate",
    "sweep_T2",
    "to_yhat",
]

Disturbance = Callable[[float], np.ndarray]


class SimulationError(RuntimeError):
    def __init__(self, message: str, t: float, state: np.ndarray):
        super().__init__(message)
        self.t = t
        self.state = state


@dataclass
class TransmissionPolicy:
    """Generator of inter-sample intervals in ``[T1, T2]``.

    ``constant`` always emits ``value`` (default ``T2``); ``random`` draws
    uniformly with ``seed``; ``sinusoidal`` emits
    ``T1 + (T2 - T1) (1 + sin(freq t_k + phase)) / 2`` at sample time ``t_k``.
    """

    kind: str
    T1: float
    T2: float
    value: float | None = None
    seed: int | None = None
    freq: float = 10.5
    phase: float = 0.0

    def __post_init__(self):
        if not 0 < self.T1 <= self.T2:
            raise ValueError("need 0 < T1 <= T2")
        if self.kind not in ("constant", "random", "sinusoidal"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "constant":
            v = self.T2 if self.value is None else float(self.value)
            if not self.T1 <= v <= self.T2:
                raise ValueError(f"constant interval {v} outside [{self.T1}, {self.T2}]")
            self.value = v

    def sampler(self) -> Callable[[float, int], float]:
        """Fresh interval generator ``(t_k, k) -> interval``; deterministic per seed."""
        if self.kind == "constant":
            return lambda t, k: self.value
        if self.kind == "random":
            rng = np.random.default_rng(self.seed)
            return lambda t, k: float(rng.uniform(self.T1, self.T2))
        lo, span = self.T1, self.T2 - self.T1
        return lambda t, k: lo + span * (1 + math.sin(self.freq * t + self.phase)) / 2


@dataclass
class FlowSegment:
    t0: float
    t1: float
    j: int
    t: np.ndarray  # sample times, endpoints included
    x: np.ndarray  # rows (xbar, eta, tau)
    _dense: Callable = field(repr=False, default=None)
    _n: int = 0

    def state(self, t) -> np.ndarray:
        """Dense-output state rows ``(xbar, eta, tau)`` at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.asarray(self._dense(t))[: self._n].T


@dataclass
class JumpRecord:
    t: float
    j: int  # jump counter before the jump
    before: np.ndarray
    after: np.ndarray
    interval: float


@dataclass
class HybridArc:
    n_x: int
    n_e: int
    C_o: np.ndarray
    segments: list[FlowSegment]
    jumps: list[JumpRecord]
    energy_y: float
    energy_d: float
    disturbance: Callable[[np.ndarray], np.ndarray] = field(repr=False, default=None)

    # concatenated samples (points at jump times appear once per j)
    @property
    def t(self) -> np.ndarray:
        return np.concatenate([s.t for s in self.segments])

    @property
    def j(self) -> np.ndarray:
        return np.concatenate([np.full(s.t.size, s.j) for s in self.segments])

    @property
    def states(self) -> np.ndarray:
        return np.vstack([s.x for s in self.segments])

    @property
    def xbar(self) -> np.ndarray:
        return self.states[:, : self.n_x]

    @property
    def eta(self) -> np.ndarray:
        return self.states[:, self.n_x : self.n_x + self.n_e]

    @property
    def tau(self) -> np.ndarray:
        return self.states[:, -1]

    @property
    def y_o(self) -> np.ndarray:
        return self.xbar @ self.C_o.T

    @property
    def d(self) -> np.ndarray:
        return self.disturbance(self.t)

    @property
    def distance(self) -> np.ndarray:
        """``|(xbar, eta)|`` at every sample."""
        return np.linalg.norm(self.states[:, :-1], axis=1)

    @property
    def t_end(self) -> float:
        return self.segments[-1].t1 if self.segments else 0.0

    def check_domain(self, T2: float | None = None, tol: float = 1e-9) -> None:
        """Raise AssertionError if the hybrid time domain or the resets are malformed."""
        prev_t, prev_j = -math.inf, None
        for s in self.segments:
            assert s.t0 <= s.t1 and np.all(np.diff(s.t) >= 0), "time not monotone in a segment"
            assert s.t0 >= prev_t - tol, "time decreases across segments"
            if prev_j is not None:
                assert s.j == prev_j + 1, "jump counter must increase by one"
            prev_t, prev_j = s.t1, s.j
            tau = s.x[:, -1]
            assert np.all(tau >= -tol), "tau negative"
            if T2 is not None:
                assert np.all(tau <= T2 + tol), "tau above T2"
        for jr in self.jumps:
            assert np.all(jr.after[self.n_x : self.n_x + self.n_e] == 0), "eta not reset to zero"
            assert abs(jr.after[-1] - jr.interval) == 0

    def to_csv(self, path_or_file, precision: int = 17) -> None:
        fmt = f"{{:.{precision}g}}"
        header = (["t", "j"] + [f"xbar{i + 1}" for i in range(self.n_x)] + [f"eta{i + 1}" for i in range(self.n_e)]
                  + ["tau"] + [f"yo{i + 1}" for i in range(self.C_o.shape[0])])
        d = np.atleast_2d(self.d)
        header += [f"d{i + 1}" for i in range(d.shape[1])]
        rows = np.column_stack([self.t, self.states, self.y_o, d])
        jj = self.j

        def write(f):
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for k, row in enumerate(rows):
                w.writerow([fmt.format(row[0]), str(int(jj[k]))] + [fmt.format(v) for v in row[1:]])

        if hasattr(path_or_file, "write"):
            write(path_or_file)
        else:
            with open(path_or_file, "w", newline="") as f:
                write(f)

    def summary(self) -> dict:
        dist = self.distance
        return {
            "t_end": self.t_end,
            "jumps": len(self.jumps),
            "initial_distance": float(dist[0]),
            "final_distance": float(dist[-1]),
            "max_distance": float(dist.max()),
            "energy_y": self.energy_y,
            "energy_d": self.energy_d,
        }


def _as_disturbance(d, n_d: int) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized ``t -> (len(t), n_d)``."""
    if d is None:
        return lambda t: np.zeros((np.size(t), n_d))

    def f(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.array([np.ravel(d(float(s))) for s in t]).reshape(t.size, n_d)

    return f


def simulate(
    cl: ClosedLoopMatrices,
    x0,
    policy: TransmissionPolicy,
    t_end: float,
    d: Disturbance | None = None,
    dt: float = 0.01,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    max_step: float = np.inf,
    method: str = "DOP853",
) -> HybridArc:
    """Integrate the hybrid closed loop from ``x0 = (xbar0, eta0, tau0)`` up to ``t_end``.

    ``d`` maps time to a disturbance vector (``None`` means zero).
    Samples are returned on a grid of spacing ``dt`` plus segment endpoints.
    """
    xbar0, eta0, tau0 = x0
    xbar0 = np.asarray(xbar0, dtype=float).ravel()
    eta0 = np.asarray(eta0, dtype=float).ravel()
    tau0 = float(tau0)
    nx, ne, nd = cl.n_x, cl.n_e, cl.n_d
    if xbar0.size != nx or eta0.size != ne:
        raise ValueError("initial state has wrong dimensions")
    if not 0 <= tau0 <= policy.T2:
        raise ValueError(f"tau0={tau0} outside [0, {policy.T2}]")
    if not t_end > 0:
        raise ValueError("t_end must be positive")

    A = cl.flow_matrix()
    W = cl.input_matrix()
    Co = cl.C_o
    dfun = _as_disturbance(d, nd)
    n = nx + ne + 1

    def rhs(t, z):
        s = z[:n]
        dv = np.ravel(d(t)) if d is not None else np.zeros(nd)
        dx = A @ s[:-1] + W @ dv
        y = Co @ s[:nx]
        return np.concatenate([dx, [-1.0, y @ y, dv @ dv]])

    def event(t, z):
        return z[n - 1]

    event.terminal = True
    event.direction = -1

    next_interval = policy.sampler()
    z = np.concatenate([xbar0, eta0, [tau0, 0.0, 0.0]])
    t, j = 0.0, 0
    segments: list[FlowSegment] = []
    jumps: list[JumpRecord] = []

    def jump(t, z, j):
        k = len(jumps)
        interval = float(next_interval(t, k))
        if not policy.T1 <= interval <= policy.T2:
            raise ValueError(f"policy emitted interval {interval} outside [{policy.T1}, {policy.T2}]")
        before = z[:n].copy()
        z = z.copy()
        z[nx : nx + ne] = 0.0
        z[n - 1] = interval
        jumps.append(JumpRecord(t, j, before, z[:n].copy(), interval))
        return z

    if tau0 == 0.0:
        z = jump(t, z, j)
        # a zero-length segment keeps the domain bookkeeping uniform
        segments.append(FlowSegment(t, t, j, np.array([t]), jumps[-1].before[None, :],
                                    _const_dense(jumps[-1].before), n))
        j += 1

    while t < t_end:
        sol = solve_ivp(rhs, (t, t_end), z, method=method, rtol=rtol, atol=atol, max_step=max_step,
                        events=event, dense_output=True)
        if sol.status == -1:
            raise SimulationError(f"integrator failed: {sol.message}", float(sol.t[-1]), sol.y[:n, -1])
        t1 = float(sol.t[-1])
        grid = np.arange(math.floor(t / dt) + 1, math.ceil(t1 / dt)) * dt
        grid = grid[(grid > t) & (grid < t1)]
        ts = np.concatenate([[t], grid, [t1]])
        xs = sol.sol(ts)[:n].T
        xs[-1] = sol.y[:n, -1]
        segments.append(FlowSegment(t, t1, j, ts, xs, sol.sol, n))
        z = sol.y[:, -1].copy()
        t = t1
        if sol.status == 1:  # timer expired
            z[n - 1] = 0.0
            segments[-1].x[-1, -1] = 0.0
            z = jump(t, z, j)
            j += 1
    return HybridArc(nx, ne, Co, segments, jumps, float(z[n]), float(z[n + 1]), dfun)


def _const_dense(x: np.ndarray):
    return lambda t: np.repeat(np.asarray(x)[:, None], np.size(t), axis=1)


def simulate_linear(A, W, C, x0, t_end: float, d: Disturbance | None = None, dt: float = 0.01,
                    rtol: float = 1e-10, atol: float = 1e-12, max_step: float = np.inf) -> HybridArc:
    """Flow-only baseline ``x' = A x + W d``, ``y = C x``, returned as a single-segment arc."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    nx = A.shape[0]
    W = np.asarray(W, dtype=float).reshape(nx, -1)
    C = np.asarray(C, dtype=float).reshape(-1, nx)
    cl = ClosedLoopMatrices(A_xx=A, A_xe=np.zeros((nx, 1)), W_x=W, A_ex=np.zeros((1, nx)),
                            A_ee=np.zeros((1, 1)), W_e=np.zeros((1, W.shape[1])), C_o=C)
    # a timer that never expires within the horizon
    pol = TransmissionPolicy("constant", t_end * 2, t_end * 2)
    return simulate(cl, (x0, np.zeros(1), t_end * 2), pol, t_end, d=d, dt=dt, rtol=rtol, atol=atol,
                    max_step=max_step)


def empirical_l2_ratio(arc: HybridArc, gamma: float, alpha: float = 0.0) -> dict:
    """Compare ``sqrt(int |y_o|^2)`` with ``alpha |x0| + gamma sqrt(int |d|^2)``."""
    if arc.t_end <= 0:
        raise ValueError("zero-length arc")
    lhs = math.sqrt(arc.energy_y)
    din = math.sqrt(arc.energy_d)
    x0 = float(arc.distance[0])
    bound = alpha * x0 + gamma * din
    return {
        "output_l2": lhs,
        "disturbance_l2": din,
        "initial_distance": x0,
        "bound": bound,
        "slack": bound - lhs,
        "ratio": lhs / din if din > 0 else math.nan,
        "passed": bool(lhs <= bound * (1 + 1e-12) + 1e-300),
    }


def decay_estimate(arc: HybridArc, tail: float = 0.5) -> tuple[float, float]:
    """Least-squares fit of ``log |x|`` against ``t + j`` over the last ``tail`` of hybrid time.

    Returns ``(kappa_hat, lambda_hat)`` with ``|x| ~ kappa_hat exp(-lambda_hat (t + j)) |x0|``.
    """
    s = arc.t + arc.j
    dist = arc.distance
    x0 = dist[0]
    if x0 == 0:
        raise ValueError("arc starts on the attractor")
    keep = dist > 0
    zero = np.flatnonzero(~keep)
    if zero.size:  # fit only before the trajectory reaches zero
        keep[zero[0]:] = False
    sel = keep & (s >= s[keep].max() * (1 - tail))
    if sel.sum() < 2:
        raise ValueError("not enough samples for a fit")
    slope, intercept = np.polyfit(s[sel], np.log(dist[sel] / x0), 1)
    return float(math.exp(intercept)), float(-slope)


def to_yhat(arc: HybridArc, plant: PlantModel) -> np.ndarray:
    """Holder output ``yhat = C_p x_p - eta`` at every sample."""
    xp = arc.xbar[:, : plant.n_p]
    return xp @ plant.C_p.T - arc.eta


def _sweep_point(args):
    from .codesign import design

    plant, T2, options = args
    res = design(plant, options.replace(T2=T2))
    if not res:
        return {"T2": T2, "feasible": False, "norm_E": math.nan, "norm_H": math.nan,
                "max_re_spec_H": math.nan, "delta": math.nan}
    H, E = res.holder.H, res.holder.E
    return {
        "T2": T2,
        "feasible": True,
        "norm_E": float(np.linalg.norm(E, 2)),
        "norm_H": float(np.linalg.norm(H, 2)),
        "max_re_spec_H": float(np.max(np.linalg.eigvals(H).real)),
        "delta": res.delta,
    }


def sweep_T2(plant: PlantModel, gamma: float, grid: Sequence[float], options, workers: int = 1) -> list[dict]:
    """Run the design for every ``T2`` in ``grid``; infeasible points are recorded, not raised."""
    grid = [float(T2) for T2 in grid]
    if not grid:
        raise ValueError("empty T2 grid")
    if any(T2 <= 0 for T2 in grid):
        raise ValueError("T2 values must be positive")
    base = options.replace(gamma=gamma, T1=None)
    jobs = [(plant, T2, base) for T2 in grid]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_sweep_point, jobs))
    return [_sweep_point(j) for j in jobs]


def summary_json(arc: HybridArc, extra: dict | None = None) -> str:
    out = arc.summary()
    if extra:
        out.update(extra)
    return json.dumps(out, indent=2)
