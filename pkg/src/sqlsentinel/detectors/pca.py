"""PCA with reconstruction-error scoring.

The model keeps the smallest number of principal directions whose
cumulative explained variance reaches the target ratio (default 0.98).
Anomaly score is the squared norm of the component of a centered vector
that falls outside the retained subspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateData

_VARIANCE_EPS = 1e-15


@dataclass
class PcaModel:
    mean: np.ndarray                 # (d,)
    components: np.ndarray           # (k, d), orthonormal rows
    explained_variance_ratio: float  # achieved cumulative ratio in (0, 1]
    k: int


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, np.ndarray):
        M = np.asarray(X, dtype=np.float64)
    else:
        M = np.stack([np.asarray(getattr(x, "values", x), dtype=np.float64) for x in X])
    if M.ndim != 2:
        raise ValueError("expected a 2-D data matrix")
    return M


def pca_fit(X, target_ratio: float = 0.98) -> PcaModel:
    """Fit principal directions via eigendecomposition of the covariance.

    k is the minimal number of leading eigenvalues whose ratio sum reaches
    *target_ratio*. Eigenvector signs are fixed so the entry of largest
    magnitude in each component is positive, which keeps fits reproducible
    across BLAS builds.
    """
    M = _as_matrix(X)
    n, d = M.shape
    if n < 2:
        raise ValueError("need at least 2 vectors to fit PCA")
    mean = M.mean(axis=0)
    centered = M - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = eigvals[::-1]
    eigvecs = eigvecs[:, ::-1]
    eigvals = np.clip(eigvals, 0.0, None)
    total = float(eigvals.sum())
    if total <= _VARIANCE_EPS:
        raise DegenerateData("training data has zero total variance")
    ratios = eigvals / total
    cumulative = np.cumsum(ratios)
    k = int(np.searchsorted(cumulative, target_ratio - 1e-12) + 1)
    k = min(k, d)
    components = eigvecs[:, :k].T.copy()
    flip = np.abs(components).argmax(axis=1)
    signs = np.sign(components[np.arange(k), flip])
    signs[signs == 0] = 1.0
    components *= signs[:, None]
    return PcaModel(mean=mean, components=components,
                    explained_variance_ratio=float(cumulative[k - 1]), k=k)


def pca_score(m: PcaModel, x) -> float:
    """Squared reconstruction error of *x* against the retained subspace."""
    return float(pca_score_batch(m, np.asarray(getattr(x, "values", x))[None, :])[0])


def pca_score_batch(m: PcaModel, X: np.ndarray) -> np.ndarray:
    centered = np.asarray(X, dtype=np.float64) - m.mean
    reduced = centered @ m.components.T
    residual = centered - reduced @ m.components
    return np.einsum("ij,ij->i", residual, residual)


def pca_reduce(m: PcaModel, x) -> np.ndarray:
    """Coordinates of the centered vector in the component basis (length k)."""
    return pca_reduce_batch(m, np.asarray(getattr(x, "values", x))[None, :])[0]


def pca_reduce_batch(m: PcaModel, X: np.ndarray) -> np.ndarray:
    centered = np.asarray(X, dtype=np.float64) - m.mean
    return centered @ m.components.T
