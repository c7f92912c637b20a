"""Independent reference implementations used by the tests."""
import itertools

import numpy as np


def second_difference(n: int) -> np.ndarray:
    d = np.zeros((max(n - 2, 0), n))
    for i in range(n - 2):
        d[i, i:i + 3] = (1.0, -2.0, 1.0)
    return d


def exhaustive_box_qp(alpha, xi: float, eps: float) -> np.ndarray:
    """Minimise ||D b||^2 + eps ||b - a||^2 s.t. |b - a| <= xi by face enumeration.

    Every variable is either at its lower bound, its upper bound or free
    (3^n faces). On each face the equality-constrained minimiser is one
    linear solve; the best feasible one is the global optimum of this
    convex problem.
    """
    a = np.asarray(alpha, dtype=np.float64)
    n = len(a)
    d = second_difference(n)
    hess = 2.0 * (d.T @ d + eps * np.eye(n))
    lin = -2.0 * eps * a
    lo, hi = a - xi, a + xi
    states = np.array(list(itertools.product((0, 1, 2), repeat=n)))  # 0 free, 1 low, 2 high
    fixed = states > 0
    value = np.where(states == 1, lo, hi)
    # rows of fixed variables become "x_i = bound"
    mats = np.where(fixed[:, :, None], np.eye(n)[None], hess[None])
    rhs = np.where(fixed, value, -lin[None])
    sol = np.linalg.solve(mats, rhs[..., None])[..., 0]
    feasible = np.all((sol >= lo - 1e-12) & (sol <= hi + 1e-12), axis=1)
    obj = 0.5 * np.einsum("ki,ij,kj->k", sol, hess, sol) + sol @ lin
    obj[~feasible] = np.inf
    return sol[int(np.argmin(obj))]


def qp_value(beta, alpha, eps: float) -> float:
    beta, alpha = np.asarray(beta, float), np.asarray(alpha, float)
    d = second_difference(len(beta))
    return float(np.sum((d @ beta) ** 2) + eps * np.sum((beta - alpha) ** 2))
