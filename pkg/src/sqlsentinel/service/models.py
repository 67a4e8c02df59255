"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class CorpusRecordModel(BaseModel):
    query: str
    user: Optional[str] = None
    seq: int = 0
    normalized: Optional[str] = None
    fingerprint: Optional[str] = None
    truth: Optional[str] = None


class ConfigModel(BaseModel):
    """Mirrors the config-file document: sections of plain key/values."""

    encoder: dict[str, Any] = Field(default_factory=dict)
    train: dict[str, Any] = Field(default_factory=dict)
    ensemble: dict[str, Any] = Field(default_factory=dict)
    supervised: dict[str, Any] = Field(default_factory=dict)


class NormalizeRequest(BaseModel):
    records: list[CorpusRecordModel]
    dedup: bool = True


class NormalizeResponse(BaseModel):
    records: list[CorpusRecordModel]
    read: int
    kept: int
    duplicates_removed: int
    manifest: dict


class GenerateRequest(BaseModel):
    seed: int = 0
    normal_per_role: int = 100
    heldout_per_role: int = 20
    attack_count: int = 30
    attack_kinds: list[str] = Field(default_factory=lambda: ["data_leak", "sabotage", "sqli"])
    masquerade_victim: Optional[str] = None
    masquerade_source: Optional[str] = None
    masquerade_count: int = 0
    mode: str = "short"
    target_mean_tokens: int = 200
    max_tokens: int = 1900


class GenerateResponse(BaseModel):
    learning: list[CorpusRecordModel]
    detection: list[CorpusRecordModel]
    manifest: dict


class LearnRequest(BaseModel):
    records: list[CorpusRecordModel]
    config: ConfigModel = Field(default_factory=ConfigModel)
    external_embeddings: Optional[list[str]] = None


class LearnResponse(BaseModel):
    bundle: dict
    probability_matrix_csv: str
    warnings: list[str]
    manifest: dict


class DetectRequest(BaseModel):
    records: list[CorpusRecordModel]
    bundle: dict
    slack_unsup: Optional[float] = None
    slack_sup: Optional[float] = None
    external_embeddings: Optional[list[str]] = None


class DetectResponse(BaseModel):
    verdicts: list[dict]
    score_csv: str
    histogram_csv: str
    summary: dict
    manifest: dict


class EvaluateRequest(BaseModel):
    records: list[CorpusRecordModel]
    config: ConfigModel = Field(default_factory=ConfigModel)
    seed: Optional[int] = None


class MetricsModel(BaseModel):
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    tp: int
    fp: int
    fn: int
    tn: int


class EvaluateResponse(BaseModel):
    runs: list[MetricsModel]
    mean: MetricsModel
    csv: str
    manifest: dict


class HealthResponse(BaseModel):
    status: str
    version: str
