"""HTTP service wrapping the detection pipeline.

The service is stateless: model bundles travel inside requests and
responses, and clients own all files. Package errors map to HTTP 400 with
a structured detail ({"error": ..., "record_index": ...} where a specific
record is at fault), which the CLI translates back to line numbers.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..errors import SqlSentinelError
from ..normalizer import CorpusRecord, normalize
from ..pipeline import (
    PipelineConfig,
    pipeline_config_from_dict,
    run_detect,
    run_evaluate,
    run_generate,
    run_learn,
    run_normalize,
)
from .models import (
    ConfigModel,
    CorpusRecordModel,
    DetectRequest,
    DetectResponse,
    EvaluateRequest,
    EvaluateResponse,
    GenerateRequest,
    GenerateResponse,
    HealthResponse,
    LearnRequest,
    LearnResponse,
    MetricsModel,
    NormalizeRequest,
    NormalizeResponse,
)

logger = logging.getLogger("sqlsentinel.service")

app = FastAPI(title="sqlsentinel", version=__version__)


def _to_records(models: list[CorpusRecordModel]) -> list[CorpusRecord]:
    records = []
    for index, m in enumerate(models):
        if not m.query.strip():
            raise HTTPException(
                status_code=400,
                detail={"error": "field 'query' is empty", "record_index": index})
        records.append(CorpusRecord(query=m.query, user=m.user, seq=m.seq,
                                    truth=m.truth))
    return records


def _to_models(records) -> list[CorpusRecordModel]:
    return [CorpusRecordModel(**rec.to_json_obj()) for rec in records]


def _config(model: ConfigModel) -> PipelineConfig:
    try:
        return pipeline_config_from_dict(model.model_dump())
    except (ValueError, TypeError) as exc:
        raise HTTPException(status_code=400, detail={"error": f"bad config: {exc}"})


def _check_queries(records: list[CorpusRecord]) -> None:
    # Normalize up front so a malformed query fails with its record index
    # instead of surfacing halfway through a fit.
    for index, rec in enumerate(records):
        try:
            normalize(rec.to_raw())
        except SqlSentinelError as exc:
            raise HTTPException(status_code=400,
                                detail={"error": str(exc), "record_index": index})


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/v1/normalize", response_model=NormalizeResponse)
def normalize_endpoint(req: NormalizeRequest) -> NormalizeResponse:
    records = _to_records(req.records)
    _check_queries(records)
    result = run_normalize(records, apply_dedup=req.dedup)
    return NormalizeResponse(
        records=_to_models(result.records),
        read=result.read,
        kept=result.kept,
        duplicates_removed=result.duplicates_removed,
        manifest=result.manifest,
    )


@app.post("/v1/generate", response_model=GenerateResponse)
def generate_endpoint(req: GenerateRequest) -> GenerateResponse:
    masquerade = None
    if req.masquerade_count > 0:
        if not req.masquerade_victim or not req.masquerade_source:
            raise HTTPException(status_code=400, detail={
                "error": "masquerade_count > 0 requires masquerade_victim and masquerade_source"})
        masquerade = (req.masquerade_victim, req.masquerade_source, req.masquerade_count)
    try:
        result = run_generate(
            seed=req.seed,
            normal_per_role=req.normal_per_role,
            heldout_per_role=req.heldout_per_role,
            attack_count=req.attack_count,
            attack_kinds=req.attack_kinds,
            masquerade=masquerade,
            mode=req.mode,
            target_mean_tokens=req.target_mean_tokens,
            max_tokens=req.max_tokens,
        )
    except (SqlSentinelError, ValueError) as exc:
        raise HTTPException(status_code=400, detail={"error": str(exc)})
    return GenerateResponse(
        learning=_to_models(result.learning),
        detection=_to_models(result.detection),
        manifest=result.manifest,
    )


@app.post("/v1/learn", response_model=LearnResponse)
def learn_endpoint(req: LearnRequest) -> LearnResponse:
    records = _to_records(req.records)
    _check_queries(records)
    config = _config(req.config)
    try:
        result = run_learn(records, config, external_lines=req.external_embeddings)
    except (SqlSentinelError, ValueError) as exc:
        raise HTTPException(status_code=400, detail={"error": str(exc)})
    return LearnResponse(
        bundle=result.bundle(),
        probability_matrix_csv=result.matrix_csv,
        warnings=result.warnings,
        manifest=result.manifest,
    )


@app.post("/v1/detect", response_model=DetectResponse)
def detect_endpoint(req: DetectRequest) -> DetectResponse:
    records = _to_records(req.records)
    _check_queries(records)
    try:
        result = run_detect(records, req.bundle,
                            slack_unsup=req.slack_unsup, slack_sup=req.slack_sup,
                            external_lines=req.external_embeddings)
    except (SqlSentinelError, ValueError) as exc:
        raise HTTPException(status_code=400, detail={"error": str(exc)})
    return DetectResponse(
        verdicts=result.verdicts,
        score_csv=result.score_csv,
        histogram_csv=result.histogram_csv,
        summary=result.summary,
        manifest=result.manifest,
    )


@app.post("/v1/evaluate", response_model=EvaluateResponse)
def evaluate_endpoint(req: EvaluateRequest) -> EvaluateResponse:
    records = _to_records(req.records)
    _check_queries(records)
    config = _config(req.config)
    try:
        result = run_evaluate(records, config, base_seed=req.seed)
    except (SqlSentinelError, ValueError) as exc:
        raise HTTPException(status_code=400, detail={"error": str(exc)})

    def metrics(m):
        return MetricsModel(precision=m.precision, recall=m.recall, f1=m.f1,
                            tp=m.true_positives, fp=m.false_positives,
                            fn=m.false_negatives, tn=m.true_negatives)

    return EvaluateResponse(
        runs=[metrics(r) for r in result.runs],
        mean=metrics(result.mean),
        csv=result.csv,
        manifest=result.manifest,
    )
