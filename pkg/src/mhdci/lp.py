"""Dense two-phase simplex with Bland's rule.

Problems here are tiny (tens of rows, a few hundred columns), so a plain
dense tableau is the simplest thing that is also fully deterministic:
Bland's smallest-index rule fixes every pivot, which in turn makes all
hull-geometry outputs reproducible bit-for-bit.

Standard form: minimize c.x subject to A x = b, x >= 0.
"""

from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-11
PIVOT_TOL = 1e-9


class Infeasible(Exception):
    def __init__(self, violation, dual=None):
        self.violation = violation
        self.dual = dual
        super().__init__(f"LP infeasible (phase-1 objective {violation:.3e})")


class Unbounded(Exception):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    basis: np.ndarray
    iterations: int


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    piv_row = T[row]
    col_vals = T[:, col].copy()
    col_vals[row] = 0.0
    T -= np.outer(col_vals, piv_row)
    # re-orthogonalize the pivot column exactly
    T[:, col] = 0.0
    T[row, col] = 1.0
    basis[row] = col


def _bland_min(T, ncols, basis):
    """One phase of simplex with Bland's rule on the tableau T.

    T layout: rows 0..m-1 are constraints with the rhs in the last column,
    row m is the (reduced) cost row.  Returns the iteration count.
    """
    m = T.shape[0] - 1
    iters = 0
    while True:
        costs = T[m, :ncols]
        enter = -1
        for j in range(ncols):
            if costs[j] < -FEAS_TOL:
                enter = j
                break
        if enter < 0:
            return iters
        ratios_col = T[:m, enter]
        best = None
        for i in range(m):
            if ratios_col[i] > PIVOT_TOL:
                r = T[i, -1] / ratios_col[i]
                key = (r, basis[i])
                if best is None or key < best[0]:
                    best = (key, i)
        if best is None:
            raise Unbounded()
        _pivot(T, basis, best[1], enter)
        iters += 1


def solve_lp(A, b, c=None, maximize_col=None):
    """Solve min c.x (or max x[maximize_col]) s.t. A x = b, x >= 0.

    Exactly one of c / maximize_col is used; maximize_col=j maximizes the
    j-th variable, the common case for margin computations.  Raises
    Infeasible (with the phase-1 gap and dual prices) when no feasible
    point exists.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    m, ncols = A.shape
    A = A.copy()
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0

    # phase 1: artificial basis
    T = np.zeros((m + 1, ncols + m + 1))
    T[:m, :ncols] = A
    T[:m, ncols : ncols + m] = np.eye(m)
    T[:m, -1] = b
    basis = np.arange(ncols, ncols + m)
    T[m, :ncols] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    it1 = _bland_min(T, ncols + m, basis)
    gap = -T[m, -1]
    if gap > FEAS_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
        # dual prices of the phase-1 problem certify the separation
        dual = T[m, ncols : ncols + m] - 0.0
        raise Infeasible(gap, dual=dual)

    # drive remaining artificials out of the basis (degenerate rows)
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= ncols:
            row = T[i, :ncols]
            j = -1
            for jj in range(ncols):
                if abs(row[jj]) > PIVOT_TOL:
                    j = jj
                    break
            if j >= 0:
                _pivot(T, basis, i, j)
            else:
                keep[i] = False  # redundant constraint row

    rows = np.concatenate([np.where(keep)[0], [m]])
    T = T[rows][:, list(range(ncols)) + [-1]]
    basis = basis[keep]
    m2 = len(basis)

    # phase 2
    if maximize_col is not None:
        c = np.zeros(ncols)
        c[maximize_col] = -1.0
    else:
        c = np.asarray(c, dtype=float)
    T[m2, :ncols] = c
    T[m2, -1] = 0.0
    for i in range(m2):
        if abs(c[basis[i]]) > 0.0:
            T[m2] -= c[basis[i]] * T[i]
    it2 = _bland_min(T, ncols, basis)

    x = np.zeros(ncols)
    x[basis] = T[:m2, -1]
    obj = float(c @ x)
    return LPResult(x=x, objective=obj, basis=basis, iterations=it1 + it2)


def feasible_combination(columns, target, extra_cols=None, maximize_col=None):
    """Find theta >= 0 with columns @ theta = target and sum(theta) = 1.

    `columns` is (dim, K).  Optional extra columns (e.g. a ray variable)
    are appended after the K combination weights; only the combination
    weights enter the sum-to-one row.  Returns the LPResult over the full
    variable vector.
    """
    dim, K = columns.shape
    n_extra = 0 if extra_cols is None else extra_cols.shape[1]
    A = np.zeros((dim + 1, K + n_extra))
    A[:dim, :K] = columns
    if n_extra:
        A[:dim, K:] = extra_cols
    A[dim, :K] = 1.0
    b = np.concatenate([target, [1.0]])
    if maximize_col is None:
        return solve_lp(A, b, c=np.zeros(K + n_extra))
    return solve_lp(A, b, maximize_col=maximize_col)
