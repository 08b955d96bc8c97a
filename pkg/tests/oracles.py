"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import numpy as np

DNP_POLY = 0x13D65  # x^16+x^13+x^12+x^11+x^10+x^8+x^6+x^5+x^2+1


def _reflect(value: int, width: int) -> int:
    out = 0
    for _ in range(width):
        out = (out << 1) | (value & 1)
        value >>= 1
    return out


def crc_dnp_bitwise(data: bytes) -> int:
    """Polynomial long division, MSB first, over the bit-reversed message.

    DNP3 transmits LSB first, so every octet is reflected before division
    and the 16-bit remainder is reflected back, then complemented.
    """
    bits = []
    for byte in data:
        r = _reflect(byte, 8)
        bits.extend((r >> (7 - i)) & 1 for i in range(8))
    bits.extend([0] * 16)
    rem = 0
    for bit in bits:
        rem = (rem << 1) | bit
        if rem & 0x10000:
            rem ^= DNP_POLY
    return _reflect(rem & 0xFFFF, 16) ^ 0xFFFF


def dantzig_two_phase(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, bounds=None, tol=1e-9):
    """Compact two-phase tableau simplex, Dantzig's rule with a lexicographic fallback.

    Maximizes c.x. Finite lower bounds are required; finite upper bounds
    become extra <= rows. Returns (x, value) or raises RuntimeError with
    'infeasible' / 'unbounded'.
    """
    c = np.asarray(c, float)
    n = c.size
    bounds = bounds or [(0.0, None)] * n
    lo = np.array([b[0] for b in bounds], float)
    rows, rhs, kinds = [], [], []
    if A_ub is not None:
        for a, b in zip(np.atleast_2d(A_ub), np.atleast_1d(b_ub)):
            rows.append(np.asarray(a, float)); rhs.append(b - a @ lo); kinds.append("le")
    for j, (_, hi) in enumerate(bounds):
        if hi is not None and np.isfinite(hi):
            e = np.zeros(n); e[j] = 1
            rows.append(e); rhs.append(hi - lo[j]); kinds.append("le")
    if A_eq is not None:
        for a, b in zip(np.atleast_2d(A_eq), np.atleast_1d(b_eq)):
            rows.append(np.asarray(a, float)); rhs.append(b - a @ lo); kinds.append("eq")
    m = len(rows)
    n_slack = sum(k == "le" for k in kinds)
    total = n + n_slack + m  # one artificial per row, always
    T = np.zeros((m + 1, total + 1))
    basis = []
    s = 0
    for i, (a, b, k) in enumerate(zip(rows, rhs, kinds)):
        sign = -1.0 if b < 0 else 1.0
        T[i, :n] = sign * a
        if k == "le":
            T[i, n + s] = sign
            s += 1
        T[i, n + n_slack + i] = 1.0
        T[i, -1] = sign * b
        basis.append(n + n_slack + i)

    def pivot(r, col):
        T[r] /= T[r, col]
        for i in range(T.shape[0]):
            if i != r and T[i, col] != 0:
                T[i] -= T[i, col] * T[r]
        basis[r] = col

    def optimize(allowed):
        for _ in range(10_000):
            reduced = T[-1, :-1].copy()
            reduced[~allowed] = 0
            col = int(np.argmin(reduced))
            if reduced[col] >= -tol:
                return
            ratios = [(T[i, -1] / T[i, col], basis[i], i) for i in range(m) if T[i, col] > tol]
            if not ratios:
                raise RuntimeError("unbounded")
            _, _, r = min(ratios)
            pivot(r, col)
        raise RuntimeError("cycling")

    # phase 1: minimize sum of artificials -> maximize -sum
    T[-1, :] = 0
    T[-1, n + n_slack : total] = 1.0
    for i in range(m):
        T[-1] -= T[i]
    optimize(np.ones(total, bool))
    if -T[-1, -1] > 1e-7:
        raise RuntimeError("infeasible")
    for i in range(m):
        if basis[i] >= n + n_slack:
            cand = [j for j in range(n + n_slack) if abs(T[i, j]) > tol]
            if cand:
                pivot(i, cand[0])
    allowed = np.zeros(total, bool)
    allowed[: n + n_slack] = True
    T[-1, :] = 0
    T[-1, :n] = -c
    for i in range(m):
        if basis[i] < total:
            T[-1] -= T[-1, basis[i]] * T[i]
    optimize(allowed)
    z = np.zeros(total)
    for i in range(m):
        z[basis[i]] = T[i, -1]
    x = z[:n] + lo
    return x, float(c @ x)


def mean_ci99(samples):
    """Normal-approximation 99% interval computed with the statistics module."""
    import math
    import statistics

    n = len(samples)
    mu = statistics.fmean(samples)
    if n < 2:
        return mu, mu, mu
    zq = statistics.NormalDist().inv_cdf(0.995)
    half = zq * statistics.stdev(samples) / math.sqrt(n)
    return mu, mu - half, mu + half
