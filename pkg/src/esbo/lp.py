"""Dense linear programming solver with dual-value extraction.

Solves  min c.x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  lo <= x <= hi
by a two-phase primal simplex on the slack-augmented standard form, using
Bland's rule throughout (deterministic lowest-index pivoting, no cycling).
Intended for small dense problems: market-clearing LPs with a few dozen
variables.

Dual conventions of the returned solution:

* ``duals_eq[i]``  = d(objective)/d(b_eq[i])          (free sign)
* ``duals_ub[j]``  = -d(objective)/d(b_ub[j])  >= 0   (Lagrange multiplier)
* ``reduced_costs`` = c + A_ub^T duals_ub - A_eq^T duals_eq; positive entries
  pair with active lower bounds, negative with active upper bounds.

Strong duality then reads::

    objective = b_eq . duals_eq - b_ub . duals_ub
                + sum_{r_j > 0} r_j * lo_j + sum_{r_j < 0} r_j * hi_j
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_PIVOT_TOL = 1e-11


class LpError(Exception):
    """Base class for solver failures."""


class LpNumericalError(LpError):
    """The solver terminated but could not meet the requested tolerances."""


@dataclass
class LinearProgram:
    """min c.x subject to A_eq x = b_eq, A_ub x <= b_ub, lo <= x <= hi."""

    c: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    a_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    lo: np.ndarray | None = None  # default -inf
    hi: np.ndarray | None = None  # default +inf

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = self.c.shape[0]
        if self.a_eq is None:
            self.a_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.a_eq = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
            self.b_eq = np.atleast_1d(np.asarray(self.b_eq, dtype=float))
        if self.a_ub is None:
            self.a_ub = np.zeros((0, n))
            self.b_ub = np.zeros(0)
        else:
            self.a_ub = np.atleast_2d(np.asarray(self.a_ub, dtype=float))
            self.b_ub = np.atleast_1d(np.asarray(self.b_ub, dtype=float))
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float).copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).copy()

        if self.a_eq.shape != (self.b_eq.shape[0], n):
            raise ValueError(f"a_eq shape {self.a_eq.shape} inconsistent with c ({n}) / b_eq")
        if self.a_ub.shape != (self.b_ub.shape[0], n):
            raise ValueError(f"a_ub shape {self.a_ub.shape} inconsistent with c ({n}) / b_ub")
        if self.lo.shape != (n,) or self.hi.shape != (n,):
            raise ValueError("lo/hi must have the same length as c")
        if np.any(self.lo > self.hi):
            raise ValueError("lo must be <= hi element-wise")
        for name, arr in (("c", self.c), ("a_eq", self.a_eq), ("b_eq", self.b_eq),
                          ("a_ub", self.a_ub), ("b_ub", self.b_ub)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    duals_eq: np.ndarray
    duals_ub: np.ndarray
    reduced_costs: np.ndarray
    status: str  # "optimal" | "infeasible" | "unbounded"
    iterations: int = 0

    def bound_term(self, lp: LinearProgram) -> float:
        """Contribution of the active variable bounds to the dual objective."""
        r = self.reduced_costs
        term = 0.0
        for j in range(lp.n_vars):
            if r[j] > 0 and np.isfinite(lp.lo[j]):
                term += r[j] * lp.lo[j]
            elif r[j] < 0 and np.isfinite(lp.hi[j]):
                term += r[j] * lp.hi[j]
        return term


def _standardize(lp: LinearProgram):
    """Rewrite onto nonnegative variables: x = T u + t0, extra rows for hi-lo."""
    n = lp.n_vars
    cols = []        # (j, sign) pairs describing T columns
    t0 = np.zeros(n)
    extra_rows = []  # (col_index, rhs) for u_col <= rhs
    for j in range(n):
        lo_f, hi_f = np.isfinite(lp.lo[j]), np.isfinite(lp.hi[j])
        if lo_f:
            t0[j] = lp.lo[j]
            cols.append((j, 1.0))
            if hi_f:
                extra_rows.append((len(cols) - 1, lp.hi[j] - lp.lo[j]))
        elif hi_f:
            t0[j] = lp.hi[j]
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    n_u = len(cols)
    T = np.zeros((n, n_u))
    for k, (j, s) in enumerate(cols):
        T[j, k] = s

    a_eq_u = lp.a_eq @ T
    b_eq_u = lp.b_eq - lp.a_eq @ t0
    a_ub_u = lp.a_ub @ T
    b_ub_u = lp.b_ub - lp.a_ub @ t0
    if extra_rows:
        bounds_a = np.zeros((len(extra_rows), n_u))
        bounds_b = np.empty(len(extra_rows))
        for i, (k, rhs) in enumerate(extra_rows):
            bounds_a[i, k] = 1.0
            bounds_b[i] = rhs
        a_ub_u = np.vstack([a_ub_u, bounds_a])
        b_ub_u = np.concatenate([b_ub_u, bounds_b])
    c_u = T.T @ lp.c
    c0 = float(lp.c @ t0)
    return T, t0, c_u, c0, a_eq_u, b_eq_u, a_ub_u, b_ub_u


def _bland_simplex(tableau, r, basis, allowed, max_iter):
    """Primal simplex iterations with Bland's rule; mutates tableau/r/basis.

    Returns ("optimal", iters) or ("unbounded", iters).
    """
    m = tableau.shape[0]
    for it in range(max_iter):
        enter = -1
        for j in allowed:
            if r[j] < -_PIVOT_TOL:
                enter = j
                break
        if enter < 0:
            return "optimal", it
        ratios_best = np.inf
        leave = -1
        for i in range(m):
            a = tableau[i, enter]
            if a > _PIVOT_TOL:
                ratio = tableau[i, -1] / a
                if ratio < ratios_best - _PIVOT_TOL or (
                    abs(ratio - ratios_best) <= _PIVOT_TOL
                    and (leave < 0 or basis[i] < basis[leave])
                ):
                    ratios_best = ratio
                    leave = i
        if leave < 0:
            return "unbounded", it
        _pivot(tableau, r, basis, leave, enter)
    raise LpNumericalError(f"simplex did not converge in {max_iter} iterations")


def _pivot(tableau, r, basis, row, col):
    tableau[row] /= tableau[row, col]
    piv = tableau[row]
    for i in range(tableau.shape[0]):
        if i != row and tableau[i, col] != 0.0:
            tableau[i] -= tableau[i, col] * piv
    if r[col] != 0.0:
        r -= r[col] * piv[:-1]
    basis[row] = col


def solve_lp(lp: LinearProgram, tol: float = 1e-9) -> LpSolution:
    """Solve the program; see module docstring for the dual conventions."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    T, t0, c_u, c0, a_eq_u, b_eq_u, a_ub_u, b_ub_u = _standardize(lp)
    n_u = c_u.shape[0]
    m_eq = b_eq_u.shape[0]
    m_ub = b_ub_u.shape[0]
    m = m_eq + m_ub

    # standard form rows: [eq; ub+slack], flip rows with negative rhs
    n_s = n_u + m_ub
    A = np.zeros((m, n_s))
    A[:m_eq, :n_u] = a_eq_u
    A[m_eq:, :n_u] = a_ub_u
    A[m_eq:, n_u:] = np.eye(m_ub)
    b = np.concatenate([b_eq_u, b_ub_u])
    sign = np.ones(m)
    neg = b < 0
    A[neg] *= -1.0
    b[neg] = -b[neg]
    sign[neg] = -1.0
    c_s = np.concatenate([c_u, np.zeros(m_ub)])

    # initial basis: unflipped slack columns where possible, artificials elsewhere
    need_art = [i for i in range(m) if i < m_eq or sign[i] < 0]
    n_art = len(need_art)
    n_t = n_s + n_art
    tableau = np.zeros((m, n_t + 1))
    tableau[:, :n_s] = A
    tableau[:, -1] = b
    basis = [0] * m
    art_of_row = {}
    need_art_set = set(need_art)
    k = 0
    for i in range(m):
        if i in need_art_set:
            tableau[i, n_s + k] = 1.0
            basis[i] = n_s + k
            art_of_row[i] = n_s + k
            k += 1
        else:
            basis[i] = n_u + (i - m_eq)

    max_iter = 2000 + 200 * (m + n_t)
    iters = 0

    if n_art:
        c1 = np.zeros(n_t)
        c1[n_s:] = 1.0
        r1 = c1.copy()
        obj1 = 0.0
        for i, bc in enumerate(basis):
            if c1[bc]:
                r1[:] -= c1[bc] * tableau[i, :-1]
                obj1 += tableau[i, -1]
        allowed = list(range(n_s))
        status, it1 = _bland_simplex(tableau, r1, basis, allowed, max_iter)
        iters += it1
        art_value = sum(tableau[i, -1] for i in range(m) if basis[i] >= n_s)
        if art_value > max(tol, 1e-8):
            return LpSolution(
                x=np.full(lp.n_vars, np.nan), objective=np.nan,
                duals_eq=np.zeros(lp.b_eq.shape[0]), duals_ub=np.zeros(lp.b_ub.shape[0]),
                reduced_costs=np.zeros(lp.n_vars), status="infeasible", iterations=iters,
            )
        # drive artificials out of the basis where a real pivot exists
        for i in range(m):
            if basis[i] >= n_s:
                for j in range(n_s):
                    if abs(tableau[i, j]) > _PIVOT_TOL:
                        _pivot(tableau, r1, basis, i, j)
                        break

    # phase 2
    r2 = np.concatenate([c_s, np.zeros(n_art)])
    for i, bc in enumerate(basis):
        if bc < n_s and c_s[bc]:
            r2 -= c_s[bc] * tableau[i, :-1]
    allowed = list(range(n_s))
    status, it2 = _bland_simplex(tableau, r2, basis, allowed, max_iter)
    iters += it2
    if status == "unbounded":
        return LpSolution(
            x=np.full(lp.n_vars, np.nan), objective=-np.inf,
            duals_eq=np.zeros(lp.b_eq.shape[0]), duals_ub=np.zeros(lp.b_ub.shape[0]),
            reduced_costs=np.zeros(lp.n_vars), status="unbounded", iterations=iters,
        )

    # recompute primal/dual values from the final basis against the original
    # standard-form data: avoids drift accumulated by tableau pivoting
    A_full = np.zeros((m, n_t))
    A_full[:, :n_s] = A
    for i, col in art_of_row.items():
        A_full[i, col] = 1.0
    B = A_full[:, basis]
    try:
        x_b = np.linalg.solve(B, b)
        cb = np.array([c_s[j] if j < n_s else 0.0 for j in basis])
        y = np.linalg.solve(B.T, cb)
    except np.linalg.LinAlgError as exc:
        raise LpNumericalError(f"singular final basis: {exc}") from exc

    x_std = np.zeros(n_s)
    for i, j in enumerate(basis):
        if j < n_s:
            x_std[j] = x_b[i]
    x = T @ x_std[:n_u] + t0
    objective = float(lp.c @ x)

    y_orig = y * sign
    duals_eq = y_orig[:m_eq].copy()
    n_orig_ub = lp.b_ub.shape[0]
    duals_ub = -y_orig[m_eq:m_eq + n_orig_ub].copy()
    scale = 1.0 + abs(objective) + (np.max(np.abs(b)) if m else 0.0)
    if np.any(duals_ub < -tol * scale):
        raise LpNumericalError(f"negative inequality dual: {duals_ub.min()}")
    duals_ub = np.maximum(duals_ub, 0.0)
    reduced = lp.c + lp.a_ub.T @ duals_ub - lp.a_eq.T @ duals_eq

    sol = LpSolution(
        x=x, objective=objective, duals_eq=duals_eq, duals_ub=duals_ub,
        reduced_costs=reduced, status="optimal", iterations=iters,
    )
    _check_optimal(lp, sol, tol, scale)
    return sol


def _check_optimal(lp: LinearProgram, sol: LpSolution, tol: float, scale: float):
    x = sol.x
    if lp.b_eq.shape[0] and np.max(np.abs(lp.a_eq @ x - lp.b_eq)) > tol * scale:
        raise LpNumericalError("equality residual above tolerance")
    slack = lp.b_ub - lp.a_ub @ x if lp.b_ub.shape[0] else np.zeros(0)
    if slack.shape[0] and slack.min() < -tol * scale:
        raise LpNumericalError("inequality violated above tolerance")
    if np.any(x < lp.lo - tol * scale) or np.any(x > lp.hi + tol * scale):
        raise LpNumericalError("variable bound violated above tolerance")
    if slack.shape[0] and np.max(np.abs(sol.duals_ub * slack)) > tol * scale * 10:
        raise LpNumericalError("complementary slackness violated")
    dual_obj = float(lp.b_eq @ sol.duals_eq) - float(lp.b_ub @ sol.duals_ub) + sol.bound_term(lp)
    if abs(sol.objective - dual_obj) > tol * scale * 10:
        raise LpNumericalError(
            f"strong duality gap {sol.objective - dual_obj:.3e} above tolerance"
        )
