"""One-class SVM fitted with a pairwise (SMO-style) working-set solver.

The dual solved here is the standard one-class formulation:

    minimize   1/2 sum_ij alpha_i alpha_j K(z_i, z_j)
    subject to 0 <= alpha_i <= 1/(nu * n),  sum_i alpha_i = 1

with an RBF kernel. Each iteration picks the maximal violating pair
(libsvm's selection rule), solves the two-variable subproblem in closed
form, clips to the box, and updates the cached gradient G = K alpha in
O(n). Convergence is declared when the KKT violation max_{a>0} G -
min_{a<C} G drops to the tolerance.

Scores are reported in anomaly orientation, larger = more anomalous, as
the two-sided deviation |rho - g(z)| of the kernel response g(z) =
sum_i alpha_i K(z_i, z) from the fitted boundary level rho. Far-away
queries (g -> 0) score rho, the classic one-class limit. The second side
matters for embeddings that concentrate on a thin shell: a query sharing
only the ubiquitous skeleton of every training query projects INSIDE the
shell and draws a kernel response far above anything the training set
produces; one-sided rho - g would rank such a query as the strongest
inlier even though the training distribution never generates responses
that high. Hub-shaped out-of-scope queries are exactly this case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NoConvergence

_BOUND_EPS = 1e-12


@dataclass
class OcsvmModel:
    support_vectors: np.ndarray  # (m, k)
    alphas: np.ndarray           # (m,), each in (0, 1/(nu*n)]
    rho: float
    gamma: float
    nu: float
    kernel: str = "rbf"


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||a - b||^2) for every pair of rows."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.clip(sq, 0.0, None, out=sq)
    return np.exp(-gamma * sq)


def auto_gamma(Z: np.ndarray) -> float:
    """1 / (k * component variance), the scale-free default."""
    Z = np.asarray(Z, dtype=np.float64)
    var = float(Z.var())
    k = Z.shape[1]
    if var <= 0.0 or k == 0:
        return 1.0
    return 1.0 / (k * var)


def dual_objective(alpha: np.ndarray, K: np.ndarray) -> float:
    return 0.5 * float(alpha @ K @ alpha)


def ocsvm_fit(Z, nu: float = 0.05, gamma: float | None = None,
              tol: float = 1e-4, max_updates: int = 100_000) -> OcsvmModel:
    """Fit the one-class dual to KKT tolerance *tol*.

    Initialization follows the usual scheme: the first floor(nu*n) points
    start at the box ceiling C = 1/(nu*n), one point takes the remainder,
    the rest start at zero, which satisfies both constraints exactly.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise ValueError("need at least 2 vectors to fit the one-class SVM")
    if not 0.0 < nu < 1.0:
        raise ValueError("nu must lie in (0, 1)")
    n = Z.shape[0]
    if gamma is None:
        gamma = auto_gamma(Z)
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")

    K = rbf_kernel(Z, Z, gamma)
    C = 1.0 / (nu * n)

    alpha = np.zeros(n)
    full = int(np.floor(nu * n))
    alpha[:full] = C
    if full < n:
        alpha[full] = 1.0 - full * C
    G = K @ alpha

    violation = np.inf
    for update in range(max_updates):
        up = alpha < C - _BOUND_EPS
        low = alpha > _BOUND_EPS
        up_idx = np.flatnonzero(up)
        low_idx = np.flatnonzero(low)
        i = up_idx[np.argmin(G[up_idx])]
        j = low_idx[np.argmax(G[low_idx])]
        violation = G[j] - G[i]
        if violation <= tol:
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta < _BOUND_EPS:
            eta = _BOUND_EPS
        t = violation / eta
        t = min(t, C - alpha[i], alpha[j])
        alpha[i] += t
        alpha[j] -= t
        G += t * (K[:, i] - K[:, j])
    else:
        raise NoConvergence(float(violation), max_updates)

    rho = _compute_rho(alpha, G, C)

    sv = alpha > _BOUND_EPS
    return OcsvmModel(
        support_vectors=Z[sv].copy(),
        alphas=alpha[sv].copy(),
        rho=rho,
        gamma=float(gamma),
        nu=float(nu),
    )


def _compute_rho(alpha: np.ndarray, G: np.ndarray, C: float) -> float:
    # KKT: G = rho on free vectors, G <= rho at the ceiling, G >= rho at zero.
    free = (alpha > _BOUND_EPS) & (alpha < C - _BOUND_EPS)
    if free.any():
        return float(G[free].mean())
    at_ceiling = alpha >= C - _BOUND_EPS
    at_zero = alpha <= _BOUND_EPS
    bounds = []
    if at_ceiling.any():
        bounds.append(float(G[at_ceiling].max()))
    if at_zero.any():
        bounds.append(float(G[at_zero].min()))
    return sum(bounds) / len(bounds)


def ocsvm_score(m: OcsvmModel, z: np.ndarray) -> float:
    """|rho - sum_i alpha_i K(sv_i, z)|; higher = more anomalous."""
    return float(ocsvm_score_batch(m, np.asarray(z, dtype=np.float64)[None, :])[0])


def ocsvm_score_batch(m: OcsvmModel, Z: np.ndarray) -> np.ndarray:
    K = rbf_kernel(np.asarray(Z, dtype=np.float64), m.support_vectors, m.gamma)
    return np.abs(m.rho - K @ m.alphas)


def ocsvm_decision(m: OcsvmModel, z: np.ndarray) -> float:
    """Signed decision value g(z) - rho: >= 0 inside the boundary."""
    return float(ocsvm_decision_batch(m, np.asarray(z, dtype=np.float64)[None, :])[0])


def ocsvm_decision_batch(m: OcsvmModel, Z: np.ndarray) -> np.ndarray:
    K = rbf_kernel(np.asarray(Z, dtype=np.float64), m.support_vectors, m.gamma)
    return K @ m.alphas - m.rho
