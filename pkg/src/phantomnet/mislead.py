"""Phantom-state planning.

The adversary ranks state variables by how close they sit to their safety
limit and attacks the most attractive one. Planning picks a phantom state
``y`` inside the bounds and consistent with the law so that a phantom
variable wins that ranking by the widest possible margin.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .process import Bounds, ControlCommand, LawError, ProcessLaw
from .simplex import Infeasible, LPError, solve_lp

PLAN_TOL = 1e-7


class DegenerateLaw(LawError):
    pass


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class AdversaryModel:
    """Safety-margin attacker: attractiveness ``(v - l) / (s - l)`` per variable."""

    def attractiveness(self, v, bounds: Bounds) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return (v - bounds.lower) / (bounds.safety_limit - bounds.lower)


def decide(adversary: AdversaryModel, view, bounds: Bounds, issuer: str = "") -> ControlCommand:
    """Pick the most attractive variable (lowest index on ties) and push it to its safety limit."""
    a = adversary.attractiveness(view, bounds)
    i = int(np.argmax(a))
    return ControlCommand(i, float(bounds.safety_limit[i]), issuer)


@dataclass
class PhantomPlan:
    y: np.ndarray
    target: int
    margin: float
    feasible: bool
    created_at: float = 0.0
    d_hat: np.ndarray = field(default=None, repr=False)
    pivots: int = 0
    solve_seconds: float = 0.0
    margins: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "y": [float(v) for v in self.y],
            "target": self.target,
            "margin": self.margin if np.isfinite(self.margin) else str(self.margin),
            "feasible": self.feasible,
            "created_at": self.created_at,
            "pivots": self.pivots,
        }


def _padded(x_obs, law: ProcessLaw, bounds: Bounds) -> np.ndarray:
    x_obs = np.asarray(x_obs, dtype=float)
    if x_obs.size == law.n:
        return x_obs.copy()
    if x_obs.size != law.n_real:
        raise ValueError(f"observed state has {x_obs.size} entries, expected {law.n_real} or {law.n}")
    return np.concatenate([x_obs, bounds.midpoint[law.n_real :]])


def _margin(a: np.ndarray, p: int, rivals: np.ndarray) -> float:
    return float(a[p] - a[rivals].max()) if rivals.size else float("inf")


def _check_inputs(law, bounds, phantom_set):
    if len(bounds) != law.n:
        raise ValueError(f"{len(bounds)} bounds for {law.n} variables")
    P = sorted(set(int(p) for p in phantom_set))
    if not P:
        raise ValueError("phantom set is empty")
    if P[0] < 0 or P[-1] >= law.n:
        raise ValueError(f"phantom index outside 0..{law.n - 1}")
    if law.k and np.linalg.matrix_rank(law.C) < law.k:
        raise DegenerateLaw("law matrix is rank deficient")
    return P


def plan_phantom(x_obs, law: ProcessLaw, bounds: Bounds, phantom_set, adversary: AdversaryModel | None = None, now: float = 0.0) -> PhantomPlan:
    """Solve one LP per phantom index and keep the widest-margin plan.

    For target ``p`` the LP maximizes ``delta`` subject to
    ``a_p(y) - a_j(y) >= delta`` for every index outside the phantom set,
    ``a_p(y) >= a_q(y)`` for the other phantom indices, ``C y = C x_obs``
    and ``l <= y <= u``.
    """
    adversary = adversary or AdversaryModel()
    P = _check_inputs(law, bounds, phantom_set)
    started = time.perf_counter()
    x_full = _padded(x_obs, law, bounds)
    d_hat = law.C @ x_full
    n = law.n
    lo, hi = bounds.lower, bounds.upper
    r = bounds.safety_limit - bounds.lower
    rivals = np.array([j for j in range(n) if j not in P], dtype=int)
    box = list(zip(lo, hi))
    pivots = 0
    margins: dict[int, float] = {}

    best_y, best_p, best_delta = None, P[0], -np.inf
    if rivals.size == 0:
        obj = np.zeros(n)
        obj[P[0]] = 1.0 / r[P[0]]
        try:
            res = solve_lp(obj, law.C, d_hat, bounds=box)
            pivots += res.pivots
            best_y, best_delta = res.x, np.inf
        except LPError:
            pass
    else:
        for p in P:
            rows, rhs = [], []
            for j, delta_coef in [(j, 1.0) for j in rivals] + [(q, 0.0) for q in P if q != p]:
                row = np.zeros(n + 1)
                row[p] -= 1.0 / r[p]
                row[j] += 1.0 / r[j]
                row[n] = delta_coef
                rows.append(row)
                rhs.append(-lo[p] / r[p] + lo[j] / r[j])
            c = np.zeros(n + 1)
            c[n] = 1.0
            A_eq = np.hstack([law.C, np.zeros((law.k, 1))])
            try:
                res = solve_lp(c, A_eq, d_hat, np.array(rows), np.array(rhs), box + [(-1.0, 1.0)])
            except Infeasible:
                continue
            pivots += res.pivots
            margins[p] = float(res.x[n])
            if res.x[n] > best_delta:
                best_y, best_p, best_delta = res.x[:n], p, res.x[n]

    elapsed = time.perf_counter() - started
    if best_y is not None:
        y = np.clip(best_y, lo, hi)
        a = adversary.attractiveness(y, bounds)
        margin = _margin(a, best_p, rivals)
        if law.residual(y, d_hat) <= PLAN_TOL and margin > PLAN_TOL:
            target = int(np.argmax(a)) if rivals.size else best_p
            return PhantomPlan(y, target, margin, True, now, d_hat, pivots, elapsed, margins)

    a = adversary.attractiveness(x_full, bounds)
    return PhantomPlan(x_full, P[0], _margin(a, P[0], rivals), False, now, d_hat, pivots, elapsed, margins)


def brute_force_plan(x_obs, law: ProcessLaw, bounds: Bounds, phantom_set, adversary: AdversaryModel | None = None, grid_n: int = 21) -> PhantomPlan:
    """Exhaustive grid search over the box, keeping points within the grid's law tolerance."""
    adversary = adversary or AdversaryModel()
    if law.n > 4 or grid_n > 101:
        raise TooLarge("brute force is limited to 4 variables and 101 grid points per axis")
    P = _check_inputs(law, bounds, phantom_set)
    x_full = _padded(x_obs, law, bounds)
    d_hat = law.C @ x_full
    n = law.n
    axes = [np.linspace(bounds.lower[i], bounds.upper[i], grid_n) for i in range(n)]
    h = (bounds.upper - bounds.lower) / (grid_n - 1)
    law_tol = 0.5 * np.abs(law.C) @ h + 1e-12 if law.k else np.zeros(0)
    rivals = np.array([j for j in range(n) if j not in P], dtype=int)

    best = (-np.inf, None, P[0])
    margins: dict[int, float] = {}
    # chunk along the first axis to bound memory
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, n - 1) if n > 1 else np.zeros((1, 0))
    for v0 in axes[0]:
        Y = np.hstack([np.full((rest.shape[0], 1), v0), rest])
        if law.k:
            ok = np.all(np.abs(Y @ law.C.T - d_hat) <= law_tol, axis=1)
            Y = Y[ok]
        if not len(Y):
            continue
        A = adversary.attractiveness(Y, bounds)
        for p in P:
            others = [q for q in P if q != p]
            valid = np.all(A[:, [p]] >= A[:, others] - 1e-12, axis=1) if others else np.ones(len(Y), bool)
            if not valid.any():
                continue
            delta = A[:, p] - A[:, rivals].max(axis=1) if rivals.size else np.full(len(Y), np.inf)
            delta = np.where(valid, delta, -np.inf)
            k = int(np.argmax(delta))
            margins[p] = max(margins.get(p, -np.inf), float(delta[k]))
            if delta[k] > best[0]:
                best = (float(delta[k]), Y[k].copy(), p)

    delta, y, p = best
    if y is not None and delta > 0:
        target = int(np.argmax(adversary.attractiveness(y, bounds))) if rivals.size else p
        return PhantomPlan(y, target, delta, True, 0.0, d_hat, margins=margins)
    a = adversary.attractiveness(x_full, bounds)
    return PhantomPlan(x_full, P[0], _margin(a, P[0], rivals), False, 0.0, d_hat, margins=margins)
