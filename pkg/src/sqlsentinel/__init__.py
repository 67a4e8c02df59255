"""Two-tier SQL anomaly detection.

Tier 1 (unsupervised) flags out-of-scope queries whose embeddings fall
far from the learned normal region, via an ensemble of PCA, autoencoder
and one-class SVM scores. Tier 2 (supervised) flags in-scope queries
whose claimed user disagrees with a per-role probabilistic classifier or
whose confidence falls below the user's learned probability threshold.
"""

__version__ = "0.1.0"

from .errors import SqlSentinelError  # noqa: F401
