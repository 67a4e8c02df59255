import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqlsentinel.errors import CorpusFormatError, UnterminatedLiteral
from sqlsentinel.normalizer import (
    CorpusRecord,
    NormalizedQuery,
    RawQuery,
    dedup,
    fnv1a64,
    normalize,
    normalize_records,
    read_corpus,
    tokenize,
    tokenize_for_encoder,
    write_corpus,
)


GOLDEN_CASES = [
    ("SELECT * FROM employees WHERE depid = 5",
     "select * from employees where depid = ?"),
    ("select * from t1", "select * from t1"),
    ("UPDATE T1 SET COL1 = 'x' WHERE COL2 = 7",
     "update t1 set col1 = ? where col2 = ?"),
    ("select sensitive_c1, sensitive_c2 from T1",
     "select sensitive_c1 , sensitive_c2 from t1"),
    ("DROP TABLE T3", "drop table t3"),
    ("SELECT * FROM T1 WHERE COL1 = ? OR ? = ?",
     "select * from t1 where col1 = ? or ? = ?"),
    ("SELECT * FROM T1 WHERE COL1 = ? AND COL2 = ? OR ? = ?",
     "select * from t1 where col1 = ? and col2 = ? or ? = ?"),
]


@pytest.mark.parametrize("raw,expected", GOLDEN_CASES)
def test_golden_normalization(raw, expected):
    assert normalize(RawQuery(raw)).text == expected


@pytest.mark.parametrize("raw,expected", [
    ("select a from t where x in (1,2,3)", "select a from t where x in ( ? , ? , ? )"),
    ("where x = -5.2e3", "where x = ?"),
    ("select a - 5 from t", "select a - ? from t"),
    ("select x from t where y = .5", "select x from t where y = ?"),
    ("select 0x1A from t", "select ? from t"),
    ("select x from t limit -1", "select x from t limit ?"),
    ("select \"Name\" from t", 'select "name" from t'),
    ("select \"2024\" from t", 'select "2024" from t'),
    ("select 'it''s' from t", "select ? from t"),
    ("select 'a\\'b' from t", "select ? from t"),
    ("select x -- trailing comment\nfrom t", "select x from t"),
    ("select /* block */ x from t", "select x from t"),
    ("select a>=5, b<>'z' from t", "select a >= ? , b <> ? from t"),
    ("insert into t values(1, 'a')", "insert into t values ( ? , ? )"),
])
def test_lexer_cases(raw, expected):
    assert normalize(RawQuery(raw)).text == expected


def test_unterminated_string_rejected():
    with pytest.raises(UnterminatedLiteral):
        tokenize("select 'oops from t")
    with pytest.raises(UnterminatedLiteral):
        tokenize('select "oops from t')


def test_empty_raw_query_rejected():
    with pytest.raises(ValueError):
        RawQuery("   ")


def test_tokens_rejoin_to_text():
    for raw, _ in GOLDEN_CASES:
        nq = normalize(RawQuery(raw))
        assert " ".join(nq.tokens) == nq.text


def test_fingerprint_is_pure_function_of_text():
    a = normalize(RawQuery("SELECT * FROM t1 WHERE a = 5", user_label="hr"))
    b = normalize(RawQuery("select * from T1 where A = 99", user_label="fin"))
    assert a.text == b.text
    assert a.fingerprint == b.fingerprint == fnv1a64(a.text)


def test_tokenize_for_encoder_identity():
    nq = normalize(RawQuery("select * from t1"))
    assert tokenize_for_encoder(nq) == ["select", "*", "from", "t1"]
    nq = normalize(RawQuery("DROP TABLE T3"))
    assert tokenize_for_encoder(nq) == ["drop", "table", "t3"]


def test_sqli_pattern_token_count():
    # select,*,from,t1,where,col1,=,?,or,?,=,? -> 12 tokens
    assert len(tokenize("select * from t1 where col1 = ? or ? = ?")) == 12


# ---------------------------------------------------------------------------
# dedup
# ---------------------------------------------------------------------------


def _nq(text, user, seq):
    raw = normalize(RawQuery(text, user_label=user, sequence_id=seq))
    return raw


def test_dedup_exact_duplicate_single_user():
    corpus = [_nq("select * from t1", "hr", 0), _nq("select * from t1", "hr", 1)]
    kept = dedup(corpus)
    assert len(kept) == 1
    assert kept[0].sequence_id == 0


def test_dedup_same_text_two_users_retained_per_user():
    corpus = [_nq("select * from t1", "hr", 0), _nq("select * from t1", "fin", 1)]
    assert len(dedup(corpus)) == 2


def test_dedup_keeps_lowest_sequence_id_and_order():
    corpus = [
        _nq("select a from t1", "hr", 5),
        _nq("select b from t1", "hr", 1),
        _nq("select a from t1", "hr", 2),
    ]
    kept = dedup(corpus)
    # (hr, "select a from t1") first occurs at seq 2, which beats seq 5
    assert [q.sequence_id for q in kept] == [1, 2]


def test_dedup_100_queries_7_duplicates():
    # Oracle: brute-force set comparison over (user, normalized text).
    corpus = []
    seq = 0
    for i in range(93):
        corpus.append(_nq(f"select c{i} from t1 where c{i} = ?", "hr", seq))
        seq += 1
    for i in range(7):  # re-issue 7 earlier queries with new literals
        corpus.append(_nq(f"select c{i} from t1 where c{i} = 123", "hr", seq))
        seq += 1
    assert len(corpus) == 100
    oracle = {(q.user_label, q.text) for q in corpus}
    kept = dedup(corpus)
    assert len(kept) == len(oracle) == 93


def test_dedup_idempotent():
    corpus = [_nq("select * from t1", "hr", 0), _nq("select * from t1", "hr", 1),
              _nq("select * from t2", "hr", 2)]
    once = dedup(corpus)
    assert dedup(once) == once


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------

_sql_identifier = st.from_regex(r"[a-zA-Z_][a-zA-Z0-9_]{0,8}", fullmatch=True)
_literal = st.one_of(
    st.integers(-9999, 9999).map(str),
    st.floats(-1e4, 1e4, allow_nan=False).map(lambda f: f"{f:.3f}"),
    st.from_regex(r"[a-zA-Z0-9 ]{0,10}", fullmatch=True).map(lambda s: "'" + s + "'"),
)


@st.composite
def _random_query(draw):
    table = draw(_sql_identifier)
    cols = draw(st.lists(_sql_identifier, min_size=1, max_size=4))
    preds = draw(st.lists(st.tuples(_sql_identifier, _literal), min_size=0, max_size=3))
    text = "SELECT " + ", ".join(cols) + " FROM " + table
    if preds:
        text += " WHERE " + " AND ".join(f"{c} = {v}" for c, v in preds)
    return text


@given(_random_query())
@settings(max_examples=300, deadline=None)
def test_normalize_idempotent(query):
    first = normalize(RawQuery(query))
    second = normalize(RawQuery(first.text))
    assert second.text == first.text
    assert second.tokens == first.tokens


@given(_random_query())
@settings(max_examples=300, deadline=None)
def test_token_join_reconstruction(query):
    nq = normalize(RawQuery(query))
    assert " ".join(nq.tokens) == nq.text
    assert nq.text == nq.text.strip()
    assert "  " not in nq.text
    assert nq.text == nq.text.lower()


@given(st.lists(st.tuples(_sql_identifier, _literal, _literal), min_size=1, max_size=3))
@settings(max_examples=200, deadline=None)
def test_literal_erasure(preds):
    base = "SELECT * FROM t WHERE " + " AND ".join(f"{c} = {a}" for c, a, _ in preds)
    alt = "SELECT * FROM t WHERE " + " AND ".join(f"{c} = {b}" for c, _, b in preds)
    assert normalize(RawQuery(base)).text == normalize(RawQuery(alt)).text


# ---------------------------------------------------------------------------
# corpus file round trip
# ---------------------------------------------------------------------------


def test_corpus_roundtrip(tmp_path):
    records = [
        CorpusRecord(query="SELECT * FROM t1 WHERE a = 5", user="hr", seq=0),
        CorpusRecord(query="select * from t2", user=None, seq=1, truth="normal"),
    ]
    kept, removed = normalize_records(records)
    assert removed == 0
    path = tmp_path / "corpus.jsonl"
    write_corpus(path, kept)
    back = read_corpus(path)
    assert [r.to_json_obj() for r in back] == [r.to_json_obj() for r in kept]
    assert back[0].normalized == "select * from t1 where a = ?"
    assert back[0].fingerprint == f"{fnv1a64('select * from t1 where a = ?'):016x}"


def test_read_corpus_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"query": "select 1", "seq": 0}\nnot json\n', encoding="utf-8")
    with pytest.raises(CorpusFormatError) as err:
        read_corpus(path)
    assert err.value.line_number == 2


def test_read_corpus_rejects_missing_query(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"user": "hr", "seq": 0}) + "\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError) as err:
        read_corpus(path)
    assert "query" in str(err.value)
