"""Versioned JSON documents for fitted detectors.

One document per detector, tagged with a "kind" field. Floats survive the
round trip exactly (JSON's shortest-repr encoding is lossless for IEEE
doubles), so deserialized models score bit-identically.
"""

from __future__ import annotations

import numpy as np

from .autoencoder import AutoencoderModel
from .ocsvm import OcsvmModel
from .pca import PcaModel

DETECTOR_DOC_VERSION = 1


def _arr(a: np.ndarray):
    return np.asarray(a, dtype=np.float64).tolist()


def detector_to_dict(model) -> dict:
    if isinstance(model, PcaModel):
        return {
            "kind": "pca",
            "version": DETECTOR_DOC_VERSION,
            "mean": _arr(model.mean),
            "components": _arr(model.components),
            "explained_variance_ratio": float(model.explained_variance_ratio),
            "k": int(model.k),
        }
    if isinstance(model, AutoencoderModel):
        return {
            "kind": "autoencoder",
            "version": DETECTOR_DOC_VERSION,
            "encoder_weights": _arr(model.encoder_weights),
            "encoder_bias": _arr(model.encoder_bias),
            "decoder_weights": _arr(model.decoder_weights),
            "decoder_bias": _arr(model.decoder_bias),
            "activation": model.activation,
        }
    if isinstance(model, OcsvmModel):
        return {
            "kind": "ocsvm",
            "version": DETECTOR_DOC_VERSION,
            "support_vectors": _arr(model.support_vectors),
            "alphas": _arr(model.alphas),
            "rho": float(model.rho),
            "gamma": float(model.gamma),
            "nu": float(model.nu),
            "kernel": model.kernel,
        }
    raise TypeError(f"not a detector model: {type(model).__name__}")


def detector_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "pca":
        return PcaModel(
            mean=np.asarray(doc["mean"], dtype=np.float64),
            components=np.asarray(doc["components"], dtype=np.float64),
            explained_variance_ratio=float(doc["explained_variance_ratio"]),
            k=int(doc["k"]),
        )
    if kind == "autoencoder":
        return AutoencoderModel(
            encoder_weights=np.asarray(doc["encoder_weights"], dtype=np.float64),
            encoder_bias=np.asarray(doc["encoder_bias"], dtype=np.float64),
            decoder_weights=np.asarray(doc["decoder_weights"], dtype=np.float64),
            decoder_bias=np.asarray(doc["decoder_bias"], dtype=np.float64),
            activation=doc.get("activation", "tanh"),
        )
    if kind == "ocsvm":
        return OcsvmModel(
            support_vectors=np.asarray(doc["support_vectors"], dtype=np.float64),
            alphas=np.asarray(doc["alphas"], dtype=np.float64),
            rho=float(doc["rho"]),
            gamma=float(doc["gamma"]),
            nu=float(doc["nu"]),
            kernel=doc.get("kernel", "rbf"),
        )
    raise ValueError(f"unknown detector kind {kind!r}")
