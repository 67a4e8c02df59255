import numpy as np
import pytest

from sqlsentinel.errors import ExhaustedTemplates, InsufficientSource
from sqlsentinel.normalizer import normalize
from sqlsentinel.workload import (
    GeneratedCorpus,
    generate_long,
    generate_normal,
    inject_attacks,
    inject_internal_masquerade,
    query_within_grants,
    referenced_objects,
    role_population,
)


def _norm_texts(records):
    return [normalize(r.to_raw()).text for r in records]


def test_schema_counts(schema):
    assert len(schema.tables) == 9
    assert len(schema.views) == 6
    assert len(schema.all_columns()) == 50
    assert schema.sensitive_columns == {"sensitive_c1", "sensitive_c2", "sensitive_c3"}


def test_schema_overlap_invariant(schema):
    shared = [obj for obj in schema.objects()
              if sum(obj in acc for acc in schema.role_access.values()) >= 2]
    assert any(obj in schema.tables for obj in shared)


def test_sensitive_access_invariant(schema):
    assert schema.sensitive_columns <= schema.granted_columns("finance")
    for role in ("hr", "dba"):
        assert len(schema.granted_columns(role) & schema.sensitive_columns) <= 1


def test_generate_normal_unique_and_in_grant(schema):
    for role in schema.roles:
        records = generate_normal(schema, role, 100, seed=1)
        assert len(records) == 100
        texts = _norm_texts(records)
        assert len(set(texts)) == 100
        assert all(query_within_grants(schema, role, t) for t in texts)
        assert all(r.user == role and r.truth == "normal" for r in records)


def test_generate_normal_mean_token_length(schema):
    # Token-count oracle over generated output: mean in [10, 14].
    records = generate_normal(schema, "hr", 100, seed=1)
    lengths = [len(t.split()) for t in _norm_texts(records)]
    assert 10 <= np.mean(lengths) <= 14


def test_generate_normal_single_query(schema):
    records = generate_normal(schema, "hr", 1, seed=5)
    assert len(records) == 1


def test_generate_normal_exhaustion(schema):
    total = sum(len(f) for f in role_population(schema, "hr"))
    with pytest.raises(ExhaustedTemplates):
        generate_normal(schema, "hr", total + 1, seed=0)


def test_generate_normal_deterministic(schema):
    a = generate_normal(schema, "finance", 50, seed=9)
    b = generate_normal(schema, "finance", 50, seed=9)
    assert [r.to_json_obj() for r in a] == [r.to_json_obj() for r in b]
    c = generate_normal(schema, "finance", 50, seed=10)
    assert [r.to_json_obj() for r in c] != [r.to_json_obj() for r in a]


def test_raw_literal_fraction_normalizes_back(schema):
    records = generate_normal(schema, "hr", 200, seed=2)
    raw_variants = [r for r in records if "?" not in r.query or r.query != r.query.lower()]
    assert raw_variants, "expected some raw-literal variants"
    for rec in records:
        # whatever surface form was emitted, it must be in-grant post-normalization
        assert query_within_grants(schema, "hr", normalize(rec.to_raw()).text)


def test_generate_long_statistics(schema):
    records = generate_long(schema, "finance", 100, seed=3)
    lengths = [len(t.split()) for t in _norm_texts(records)]
    assert 180 <= np.mean(lengths) <= 220
    assert max(lengths) <= 1900
    assert len(set(_norm_texts(records))) == 100
    assert all(query_within_grants(schema, "finance", t) for t in _norm_texts(records))


def test_generate_long_degenerates_to_short_mode(schema):
    records = generate_long(schema, "hr", 30, target_mean_tokens=12, seed=4)
    lengths = [len(t.split()) for t in _norm_texts(records)]
    assert np.mean(lengths) <= 16


def test_inject_attacks_sabotage_includes_drop_table_t3(schema):
    records = inject_attacks(schema, {"sabotage"}, 2, seed=0)
    assert "drop table t3" in _norm_texts(records)
    assert all(r.truth == "attack:sabotage" for r in records)


def test_inject_attacks_zero_count(schema):
    assert inject_attacks(schema, {"sqli"}, 0, seed=0) == []


def test_inject_attacks_requires_kinds(schema):
    with pytest.raises(ValueError):
        inject_attacks(schema, set(), 5, seed=0)


def test_sqli_records_end_with_tautology(schema):
    records = inject_attacks(schema, {"sqli"}, 12, seed=1)
    for text in _norm_texts(records):
        assert text.endswith("or ? = ?")


def test_data_leak_records_fail_grant_check_for_claimant(schema):
    records = inject_attacks(schema, {"data_leak"}, 12, seed=2)
    for rec in records:
        text = normalize(rec.to_raw()).text
        assert rec.user != "finance"
        assert not query_within_grants(schema, rec.user, text)


def test_attack_kinds_round_robin(schema):
    records = inject_attacks(schema, {"data_leak", "sabotage", "sqli"}, 30, seed=3)
    counts = {}
    for rec in records:
        counts[rec.truth] = counts.get(rec.truth, 0) + 1
    assert counts == {"attack:data_leak": 10, "attack:sabotage": 10, "attack:sqli": 10}


def test_masquerade_relabels_source_queries(schema):
    base = GeneratedCorpus(records=generate_normal(schema, "hr", 10, seed=5))
    out = inject_internal_masquerade(base, schema, "hr", "finance", 10, seed=6)
    injected = out.records[10:]
    assert len(injected) == 10
    for rec in injected:
        assert rec.user == "hr"
        assert rec.truth == "masquerade:finance"
        text = normalize(rec.to_raw()).text
        # in-scope for the database: inside the SOURCE role's grants
        assert query_within_grants(schema, "finance", text)


def test_masquerade_zero_count_is_noop(schema):
    base = GeneratedCorpus(records=generate_normal(schema, "hr", 5, seed=7))
    out = inject_internal_masquerade(base, schema, "hr", "finance", 0, seed=8)
    assert out.records == base.records


def test_masquerade_validates_roles(schema):
    base = GeneratedCorpus(records=[])
    with pytest.raises(ValueError):
        inject_internal_masquerade(base, schema, "hr", "hr", 5, seed=0)
    with pytest.raises(ValueError):
        inject_internal_masquerade(base, schema, "hr", "ghost", 5, seed=0)


def test_masquerade_insufficient_source(schema):
    base = GeneratedCorpus(records=[])
    with pytest.raises(InsufficientSource):
        inject_internal_masquerade(base, schema, "hr", "finance", 10 ** 6, seed=0)


def test_referenced_objects_parser(schema):
    cases = {
        "select * from t2 , t3 where t2_emp = t3_emp": {"t2", "t3"},
        "insert into t2 ( t2_id ) values ( ? )": {"t2"},
        "update t7 set t7_job = ? where t7_id = ?": {"t7"},
        "drop table t3": {"t3"},
        "select a from v1 where b in ( select c from t9 )": {"v1", "t9"},
    }
    for text, expected in cases.items():
        assert referenced_objects(schema, text.split(" ")) == expected


def test_grant_check_rejects_foreign_objects(schema):
    assert not query_within_grants(schema, "hr", "select * from t5 where t5_id = ?")
    assert not query_within_grants(schema, "hr", "select sensitive_c1 from t1")
    assert query_within_grants(schema, "finance", "select sensitive_c1 from t1")
    assert not query_within_grants(schema, "ghost", "select * from t1")
