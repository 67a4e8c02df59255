"""The three outlier detectors: PCA, autoencoder, one-class SVM."""

from .pca import PcaModel, pca_fit, pca_reduce, pca_reduce_batch, pca_score, pca_score_batch
from .autoencoder import (
    AutoencoderModel,
    ae_fit,
    ae_score,
    ae_score_batch,
    reconstruction_loss_and_grads,
)
from .ocsvm import (
    OcsvmModel,
    ocsvm_decision,
    ocsvm_decision_batch,
    ocsvm_fit,
    ocsvm_score,
    ocsvm_score_batch,
    rbf_kernel,
)
from .serialize import detector_from_dict, detector_to_dict

__all__ = [
    "PcaModel", "pca_fit", "pca_score", "pca_reduce", "pca_score_batch", "pca_reduce_batch",
    "AutoencoderModel", "ae_fit", "ae_score", "ae_score_batch", "reconstruction_loss_and_grads",
    "OcsvmModel", "ocsvm_fit", "ocsvm_score", "ocsvm_score_batch",
    "ocsvm_decision", "ocsvm_decision_batch", "rbf_kernel",
    "detector_to_dict", "detector_from_dict",
]
