"""Dense two-phase simplex for small linear programs (Bland's rule)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_VARIABLES = 64
_EPS = 1e-10
_FEAS_TOL = 1e-7


class LPError(ValueError):
    pass


class Infeasible(LPError):
    pass


class Unbounded(LPError):
    pass


class DimensionMismatch(LPError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    value: float
    pivots: int


def _as_rows(A, b, n, name):
    if A is None:
        if b is not None and np.size(b):
            raise DimensionMismatch(f"{name}: right-hand side without matrix")
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return np.zeros((0, n)), np.zeros(0)
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if A.shape[1] != n or A.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"{name}: matrix {A.shape} incompatible with {n} variables and {b.shape[0]} rows")
    return A, b


class _Tableau:
    def __init__(self, T: np.ndarray, basis: list[int]):
        self.T = T
        self.basis = basis
        self.pivots = 0

    def pivot(self, r: int, col: int) -> None:
        T = self.T
        T[r] /= T[r, col]
        factor = T[:, col].copy()
        factor[r] = 0.0
        T -= np.outer(factor, T[r])
        self.basis[r] = col
        self.pivots += 1

    def run(self, allowed: np.ndarray, max_iter: int = 50_000) -> None:
        """Maximize the objective row (stored as negated costs) with Bland's rule."""
        T = self.T
        m = T.shape[0] - 1
        for _ in range(max_iter):
            reduced = T[-1, :-1]
            candidates = np.flatnonzero((reduced < -_EPS) & allowed)
            if candidates.size == 0:
                return
            col = int(candidates[0])
            column = T[:m, col]
            rows = np.flatnonzero(column > _EPS)
            if rows.size == 0:
                raise Unbounded("objective unbounded")
            ratios = T[rows, -1] / column[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            r = int(min(ties, key=lambda i: self.basis[i]))
            self.pivot(r, col)
        raise LPError("iteration limit reached")


def solve_lp(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, bounds=None) -> LPResult:
    """Maximize ``c @ x`` subject to ``A_eq x = b_eq``, ``A_ub x <= b_ub`` and box bounds.

    ``bounds`` is a sequence of ``(low, high)`` pairs; ``None`` or an
    infinite value leaves that side open. Defaults to ``x >= 0``.

    Raises :class:`Infeasible`, :class:`Unbounded` or
    :class:`DimensionMismatch`.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    n = c.size
    if n > MAX_VARIABLES:
        raise DimensionMismatch(f"{n} variables exceeds the {MAX_VARIABLES}-variable limit")
    A_eq, b_eq = _as_rows(A_eq, b_eq, n, "equalities")
    A_ub, b_ub = _as_rows(A_ub, b_ub, n, "inequalities")
    if bounds is None:
        bounds = [(0.0, None)] * n
    if len(bounds) != n:
        raise DimensionMismatch(f"{len(bounds)} bounds for {n} variables")

    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds], dtype=float)
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds], dtype=float)
    if np.any(lo > hi):
        raise Infeasible("a lower bound exceeds its upper bound")

    # x = shift + M z with z >= 0; free variables split in two, upper-only ones negated
    cols = []
    shift = np.zeros(n)
    for j in range(n):
        if np.isfinite(lo[j]):
            shift[j] = lo[j]
            cols.append((j, 1.0))
        elif np.isfinite(hi[j]):
            shift[j] = hi[j]
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    nz = len(cols)
    M = np.zeros((n, nz))
    for k, (j, s) in enumerate(cols):
        M[j, k] = s

    box = [j for j in range(n) if np.isfinite(lo[j]) and np.isfinite(hi[j])]
    box_rows = np.zeros((len(box), n))
    for i, j in enumerate(box):
        box_rows[i, j] = 1.0
    ub_A = np.vstack([A_ub, box_rows]) if len(box) else A_ub
    ub_b = np.concatenate([b_ub, hi[box]]) if len(box) else b_ub

    le_A = ub_A @ M
    le_b = ub_b - ub_A @ shift
    eq_A = A_eq @ M
    eq_b = b_eq - A_eq @ shift

    m_le, m_eq = le_A.shape[0], eq_A.shape[0]
    m = m_le + m_eq
    # columns: z | slacks | artificials | rhs
    n_cols = nz + m_le + m
    T = np.zeros((m + 1, n_cols + 1))
    basis: list[int] = []
    art_rows = []
    for i in range(m):
        if i < m_le:
            a, b = le_A[i], le_b[i]
        else:
            a, b = eq_A[i - m_le], eq_b[i - m_le]
        sign = -1.0 if b < 0 else 1.0
        T[i, :nz] = sign * a
        T[i, -1] = sign * b
        if i < m_le:
            T[i, nz + i] = sign
            if sign > 0:
                basis.append(nz + i)
                continue
        T[i, nz + m_le + i] = 1.0
        basis.append(nz + m_le + i)
        art_rows.append(i)

    tab = _Tableau(T, basis)
    art_start = nz + m_le
    if art_rows:
        T[-1, :] = 0.0
        for i in art_rows:
            T[-1] -= T[i]
        T[-1, art_start:n_cols] = 0.0
        allowed = np.ones(n_cols, dtype=bool)
        tab.run(allowed)
        if -T[-1, -1] > _FEAS_TOL:
            raise Infeasible(f"phase one ended with infeasibility {-T[-1, -1]:.3g}")
        drop = []
        for r in range(m):
            if tab.basis[r] >= art_start:
                nonzero = np.flatnonzero(np.abs(T[r, :art_start]) > 1e-9)
                if nonzero.size:
                    tab.pivot(r, int(nonzero[0]))
                else:
                    drop.append(r)
        if drop:
            keep = [r for r in range(m) if r not in drop] + [m]
            tab.T = T = T[keep]
            tab.basis = [b for r, b in enumerate(tab.basis) if r not in drop]

    T[-1, :] = 0.0
    T[-1, :nz] = -(c @ M)
    for r, b in enumerate(tab.basis):
        if T[-1, b] != 0.0:
            T[-1] -= T[-1, b] * T[r]
    allowed = np.zeros(n_cols, dtype=bool)
    allowed[:art_start] = True
    tab.run(allowed)

    z = np.zeros(n_cols)
    for r, b in enumerate(tab.basis):
        z[b] = T[r, -1]
    x = shift + M @ z[:nz]
    _check_residuals(x, A_eq, b_eq, A_ub, b_ub, lo, hi)
    return LPResult(x, float(c @ x), tab.pivots)


def _check_residuals(x, A_eq, b_eq, A_ub, b_ub, lo, hi):
    scale = 1.0 + float(np.max(np.abs(x))) if x.size else 1.0
    if A_eq.size and np.max(np.abs(A_eq @ x - b_eq)) > _FEAS_TOL * scale:
        raise LPError("equality residual above tolerance")
    if A_ub.size and np.max(A_ub @ x - b_ub) > _FEAS_TOL * scale:
        raise LPError("inequality residual above tolerance")
    if np.any(x < lo - _FEAS_TOL * scale) or np.any(x > hi + _FEAS_TOL * scale):
        raise LPError("bound residual above tolerance")
