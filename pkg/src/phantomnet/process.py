"""Physical process behind the outstations.

The plant is a state vector inside per-variable bounds that must satisfy a
linear conservation law ``C @ x == d``. It drifts as a bounded random walk
projected back onto the law, and accepts setpoint commands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simplex import Infeasible, solve_lp

LAW_TOL = 1e-9
MAX_RETRIES = 20


class LawError(ValueError):
    pass


class UnknownIndex(IndexError):
    pass


@dataclass(frozen=True)
class ProcessLaw:
    n_real: int
    n_phantom: int = 0
    C: np.ndarray = None
    d: np.ndarray = None
    scaling: float = 1.0

    def __post_init__(self):
        n = self.n_real + self.n_phantom
        C = np.zeros((0, n)) if self.C is None else np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.size == 0:
            C = np.zeros((0, n))
        d = np.zeros(C.shape[0]) if self.d is None else np.atleast_1d(np.asarray(self.d, dtype=float))
        if C.shape[1] != n:
            raise LawError(f"law matrix has {C.shape[1]} columns, expected {n}")
        if d.shape != (C.shape[0],):
            raise LawError(f"law right-hand side has shape {d.shape}, expected ({C.shape[0]},)")
        if C.shape[0] and C.shape[0] >= n:
            raise LawError("law needs fewer rows than variables")
        if C.shape[0] and np.linalg.matrix_rank(C) < C.shape[0]:
            raise LawError("law rows are linearly dependent")
        if self.scaling <= 0:
            raise LawError("scaling must be positive")
        C.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.n_real + self.n_phantom

    @property
    def k(self) -> int:
        return self.C.shape[0]

    def residual(self, x: np.ndarray, d: np.ndarray | None = None) -> float:
        if not self.k:
            return 0.0
        rhs = self.d if d is None else d
        return float(np.max(np.abs(self.C @ x - rhs)))

    def project(self, v: np.ndarray, d: np.ndarray | None = None) -> np.ndarray:
        """Orthogonal projection of ``v`` onto ``{C v = d}``."""
        if not self.k:
            return np.array(v, dtype=float)
        rhs = self.d if d is None else d
        C = self.C
        return v - C.T @ np.linalg.solve(C @ C.T, C @ v - rhs)


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray
    safety_limit: np.ndarray = None

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).copy()
        hi = np.asarray(self.upper, dtype=float).copy()
        s = hi.copy() if self.safety_limit is None else np.asarray(self.safety_limit, dtype=float).copy()
        if not (lo.shape == hi.shape == s.shape) or lo.ndim != 1:
            raise ValueError("bounds vectors must be 1-D and equally long")
        if np.any(lo >= hi):
            raise ValueError(f"lower bound must be below upper bound at {np.flatnonzero(lo >= hi).tolist()}")
        if np.any(s < hi):
            raise ValueError(f"safety limit below upper bound at {np.flatnonzero(s < hi).tolist()}")
        if np.any(s <= lo):
            raise ValueError("safety limit must exceed lower bound")
        for a in (lo, hi, s):
            a.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "safety_limit", s)

    def __len__(self):
        return self.lower.size

    @property
    def midpoint(self) -> np.ndarray:
        return (self.lower + self.upper) / 2

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass
class ProcessState:
    x: np.ndarray
    t: float = 0.0

    def copy(self) -> "ProcessState":
        return ProcessState(self.x.copy(), self.t)


@dataclass(frozen=True)
class ControlCommand:
    target_index: int
    setpoint: float
    issuer: str = ""


def check_feasible(law: ProcessLaw, bounds: Bounds) -> np.ndarray:
    """Return a point satisfying the law inside the bounds, or raise LawError."""
    if len(bounds) != law.n:
        raise LawError(f"{len(bounds)} bounds for {law.n} variables")
    try:
        res = solve_lp(np.zeros(law.n), law.C, law.d, bounds=list(zip(bounds.lower, bounds.upper)))
    except Infeasible as exc:
        raise LawError("law has no solution inside the bounds") from exc
    return res.x


def initial_state(law: ProcessLaw, bounds: Bounds) -> ProcessState:
    """Start from the bounds' midpoint when it satisfies the law, else the nearest feasible vertex-ish point."""
    mid = bounds.midpoint
    x = law.project(mid)
    if not bounds.contains(x, 1e-12) or law.residual(x) > LAW_TOL:
        x = check_feasible(law, bounds)
        # blend toward the midpoint while staying feasible
        for w in (0.5, 0.25, 0.1):
            cand = law.project((1 - w) * x + w * mid)
            if bounds.contains(cand) and law.residual(cand) <= LAW_TOL:
                x = cand
                break
    return ProcessState(np.clip(x, bounds.lower, bounds.upper))


def step(state: ProcessState, law: ProcessLaw, bounds: Bounds, rng: np.random.Generator, sigma: float, dt: float = 0.0) -> ProcessState:
    """One random-walk step on the real variables, projected back onto the law.

    Phantom variables have no physical counterpart and do not drift.
    """
    if sigma == 0:
        return ProcessState(state.x.copy(), state.t + dt)
    scale = np.zeros(law.n)
    scale[: law.n_real] = sigma
    for _ in range(MAX_RETRIES):
        v = np.clip(state.x + scale * rng.standard_normal(law.n), bounds.lower, bounds.upper)
        v = law.project(v)
        if bounds.contains(v) and law.residual(v) <= LAW_TOL:
            return ProcessState(v, state.t + dt)
    return ProcessState(state.x.copy(), state.t + dt)


def apply_command(state: ProcessState, cmd: ControlCommand, law: ProcessLaw, bounds: Bounds) -> tuple[ProcessState, bool]:
    """Drive the target variable to the (clipped) setpoint and re-balance the others.

    The target is pinned; the remaining variables move by the smallest
    Euclidean amount that restores the law. Returns the unchanged state and
    ``False`` when no such re-balance stays inside the bounds.
    """
    i = cmd.target_index
    if not 0 <= i < law.n:
        raise UnknownIndex(f"state index {i} outside 0..{law.n - 1}")
    target = float(np.clip(cmd.setpoint, bounds.lower[i], bounds.upper[i]))
    if target == state.x[i]:
        return state.copy(), True
    v = state.x.copy()
    v[i] = target
    if law.k:
        others = np.arange(law.n) != i
        C_o = law.C[:, others]
        rhs = law.d - law.C[:, i] * target
        resid = C_o @ v[others] - rhs
        v[others] = v[others] - np.linalg.pinv(C_o) @ resid
    if not bounds.contains(v) or law.residual(v) > LAW_TOL:
        return state.copy(), False
    return ProcessState(v, state.t), True


def observe(state: ProcessState, indices, scaling: float, n_real: int | None = None) -> list[int]:
    """Quantize state variables to the signed 32-bit counts carried on the wire."""
    limit = state.x.size if n_real is None else n_real
    out = []
    for i in indices:
        if not 0 <= i < limit:
            raise UnknownIndex(f"state index {i} outside 0..{limit - 1}")
        out.append(int(round(state.x[i] / scaling)))
    return out
