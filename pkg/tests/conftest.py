"""Shared fixtures and independent reference implementations for the tests."""

import itertools

import numpy as np
import pytest

from esbo.lp import LinearProgram
from esbo.storage import StorageParams


@pytest.fixture
def params() -> StorageParams:
    """Reference storage asset: 1 p.u.h capacity, 0.6 p.u. power, 90% efficiencies."""
    return StorageParams()


def vertex_enumeration_minimum(lp: LinearProgram) -> float:
    """Brute-force LP oracle: evaluate the objective on every basic feasible point.

    Enumerates all choices of n active constraints (equalities always active)
    among inequality rows and finite bounds; independent of the simplex path.
    """
    n = lp.n_vars
    rows, rhs = [], []
    eq_count = lp.b_eq.shape[0]
    for i in range(eq_count):
        rows.append(lp.a_eq[i])
        rhs.append(lp.b_eq[i])
    for i in range(lp.b_ub.shape[0]):
        rows.append(lp.a_ub[i])
        rhs.append(lp.b_ub[i])
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(lp.lo[j]):
            rows.append(-e)
            rhs.append(-lp.lo[j])
        if np.isfinite(lp.hi[j]):
            rows.append(e)
            rhs.append(lp.hi[j])
    rows = np.asarray(rows)
    rhs = np.asarray(rhs)
    eq_idx = list(range(eq_count))
    ineq_idx = list(range(eq_count, rows.shape[0]))

    best = np.inf
    for combo in itertools.combinations(ineq_idx, n - eq_count):
        idx = eq_idx + list(combo)
        a = rows[idx]
        try:
            x = np.linalg.solve(a, rhs[idx])
        except np.linalg.LinAlgError:
            continue
        if (rows @ x - rhs).max() < 1e-8:
            best = min(best, float(lp.c @ x))
    return best


def random_feasible_lp(rng, n, m_ub, m_eq, degenerate=False) -> LinearProgram:
    """Bounded LP guaranteed feasible at a random interior/vertex point."""
    x0 = rng.uniform(-2, 2, n)
    a_ub = rng.normal(size=(m_ub, n))
    margin = rng.uniform(0.0 if degenerate else 0.1, 2.0, m_ub)
    b_ub = a_ub @ x0 + margin
    lo = x0 - rng.uniform(0.0 if degenerate else 0.5, 3.0, n)
    hi = x0 + rng.uniform(0.0 if degenerate else 0.5, 3.0, n)
    a_eq = rng.normal(size=(m_eq, n)) if m_eq else None
    b_eq = a_eq @ x0 if m_eq else None
    return LinearProgram(c=rng.normal(size=n), a_eq=a_eq, b_eq=b_eq,
                         a_ub=a_ub, b_ub=b_ub, lo=lo, hi=hi)


def naive_cnn_forward(net, q) -> float:
    """Direct O(n^2) re-implementation of the surrogate forward pass.

    Channels-first quadruple loop straight from the convolution definition;
    shares no code with the production path.
    """
    x = np.asarray(q, dtype=float) / net.normalization.input_scale
    h = x[None, :]  # (channels, length)
    for i, layer in enumerate(net.layers):
        s = layer.spec
        l_in = h.shape[1]
        l_out = (l_in + 2 * s.padding - s.kernel) // s.stride + 1
        z = np.zeros((s.out_channels, l_out))
        for co in range(s.out_channels):
            for lo in range(l_out):
                acc = layer.bias[co]
                for ci in range(s.in_channels):
                    for k in range(s.kernel):
                        li = lo * s.stride + k - s.padding
                        if 0 <= li < l_in:
                            acc += layer.weight[co, ci, k] * h[ci, li]
                z[co, lo] = acc
        if i < len(net.layers) - 1:
            z = np.maximum(z, 0.0) + np.log1p(np.exp(-net.beta * np.abs(z))) / net.beta
        h = z
    return float(net.normalization.target_mean + net.normalization.target_std * h[0, 0])
