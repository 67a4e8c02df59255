"""SQL query normalization: lexing, literal masking, and per-user dedup.

Raw queries arrive in arbitrary case and spacing, with concrete literal
values. The scanner below reduces each query to a canonical template:

* every string/numeric literal becomes a single ``?`` token,
* keywords and identifiers are lowercased but never masked,
* comments are stripped,
* tokens are joined with exactly one space.

Two raw queries that differ only in literal values therefore normalize to
the same text, and the canonical text doubles as a stable dedup key via a
64-bit FNV-1a fingerprint.

The scanner is a hand-rolled single pass, not a grammar parser: masking and
spacing need token boundaries only, which keeps it dialect-tolerant. What
counts as a literal:

* single-quoted strings, with ``''`` doubling and backslash escapes
  consumed as part of the literal;
* numbers, including decimals, scientific notation and ``0x`` hex, with a
  leading sign when the sign cannot be a binary operator;
* double-quoted and backtick-quoted names are identifiers, never literals,
  even when their content looks numeric (``"2024"`` stays ``"2024"``).

Pre-existing ``?`` markers pass through untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import CorpusFormatError, UnterminatedLiteral

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 encoding of *text*."""
    h = FNV64_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV64_PRIME) & _U64
    return h


def fingerprint_hex(fp: int) -> str:
    return f"{fp:016x}"


@dataclass(frozen=True)
class RawQuery:
    """One ingested query before normalization."""

    text: str
    user_label: Optional[str] = None
    sequence_id: int = 0

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("query text is empty")


@dataclass(frozen=True)
class NormalizedQuery:
    """Canonical literal-masked form of a query plus its token sequence."""

    text: str
    tokens: tuple[str, ...]
    user_label: Optional[str] = None
    fingerprint: int = 0
    sequence_id: int = 0

    @property
    def fingerprint_hex(self) -> str:
        return fingerprint_hex(self.fingerprint)


# Keywords after which a bare +/- is a numeric sign, not a binary operator
# (e.g. "where x = -5", "limit -1", "values (-2)"). Identifiers, ")", "?"
# and literals put the scanner in "binary operator" context instead.
_SIGN_CONTEXT_KEYWORDS = frozenset({
    "select", "from", "where", "and", "or", "not", "in", "values", "set",
    "by", "having", "on", "when", "then", "else", "case", "like", "between",
    "limit", "offset", "union", "all", "distinct", "as", "is", "return",
    "returning", "using",
})

# Multi-character operators, longest first so the scanner is greedy.
_MULTI_CHAR_OPS = ("<=", ">=", "<>", "!=", "||", "::", ":=")

_WORD_START = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_WORD_CHARS = _WORD_START | frozenset("0123456789$")
_DIGITS = frozenset("0123456789")
_HEX_DIGITS = _DIGITS | frozenset("abcdefABCDEF")

# Raw token kinds tracked only for sign-context decisions.
_K_WORD, _K_QUOTED_IDENT, _K_LITERAL, _K_PARAM, _K_OP = range(5)


def _scan_string_literal(text: str, i: int) -> int:
    """Return the index one past a single-quoted literal starting at *i*."""
    start = i
    i += 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\\" and i + 1 < n:
            i += 2
            continue
        if ch == "'":
            if i + 1 < n and text[i + 1] == "'":  # '' doubling
                i += 2
                continue
            return i + 1
        i += 1
    raise UnterminatedLiteral(text, start)


def _scan_quoted_identifier(text: str, i: int, quote: str) -> int:
    """Return the index one past a quoted identifier starting at *i*."""
    start = i
    i += 1
    n = len(text)
    while i < n:
        if text[i] == quote:
            if i + 1 < n and text[i + 1] == quote:
                i += 2
                continue
            return i + 1
        i += 1
    raise UnterminatedLiteral(text, start)


def _scan_number(text: str, i: int) -> int:
    """Return the index one past a numeric literal starting at *i*.

    Accepts 12, 12.5, .5, 5., 1e10, 1.5E-3 and 0x1A. The caller guarantees
    the character at *i* is a digit or a dot followed by a digit.
    """
    n = len(text)
    if text[i] == "0" and i + 1 < n and text[i + 1] in "xX":
        i += 2
        while i < n and text[i] in _HEX_DIGITS:
            i += 1
        return i
    while i < n and text[i] in _DIGITS:
        i += 1
    if i < n and text[i] == ".":
        i += 1
        while i < n and text[i] in _DIGITS:
            i += 1
    if i < n and text[i] in "eE":
        j = i + 1
        if j < n and text[j] in "+-":
            j += 1
        if j < n and text[j] in _DIGITS:
            i = j
            while i < n and text[i] in _DIGITS:
                i += 1
    return i


def tokenize(text: str) -> list[str]:
    """Lex *text* into canonical tokens with literals masked to ``?``.

    Raises UnterminatedLiteral on an unbalanced quote; the query is
    rejected rather than silently truncated.
    """
    tokens: list[str] = []
    prev_kind: Optional[int] = None
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]

        if ch.isspace():
            i += 1
            continue

        # Comments are stripped entirely.
        if ch == "-" and text.startswith("--", i):
            nl = text.find("\n", i)
            i = n if nl < 0 else nl + 1
            continue
        if ch == "/" and text.startswith("/*", i):
            end = text.find("*/", i + 2)
            i = n if end < 0 else end + 2
            continue

        if ch == "'":
            i = _scan_string_literal(text, i)
            tokens.append("?")
            prev_kind = _K_LITERAL
            continue

        if ch in ('"', "`"):
            end = _scan_quoted_identifier(text, i, ch)
            tokens.append(text[i:end].lower())
            prev_kind = _K_QUOTED_IDENT
            i = end
            continue

        if ch in _WORD_START:
            j = i + 1
            while j < n and text[j] in _WORD_CHARS:
                j += 1
            tokens.append(text[i:j].lower())
            prev_kind = _K_WORD
            i = j
            continue

        if ch in _DIGITS or (ch == "." and i + 1 < n and text[i + 1] in _DIGITS
                             and prev_kind not in (_K_WORD, _K_QUOTED_IDENT)):
            i = _scan_number(text, i)
            tokens.append("?")
            prev_kind = _K_LITERAL
            continue

        if ch in "+-":
            nxt = text[i + 1] if i + 1 < n else ""
            nxt2 = text[i + 2] if i + 2 < n else ""
            starts_number = nxt in _DIGITS or (nxt == "." and nxt2 in _DIGITS)
            sign_position = (
                prev_kind is None
                or prev_kind == _K_OP
                or (prev_kind == _K_WORD and tokens[-1] in _SIGN_CONTEXT_KEYWORDS)
            )
            if starts_number and sign_position:
                i = _scan_number(text, i + 1)
                tokens.append("?")
                prev_kind = _K_LITERAL
                continue
            tokens.append(ch)
            prev_kind = _K_OP
            i += 1
            continue

        if ch == "?":
            tokens.append("?")
            prev_kind = _K_PARAM
            i += 1
            continue

        matched_multi = False
        for op in _MULTI_CHAR_OPS:
            if text.startswith(op, i):
                tokens.append(op)
                prev_kind = _K_OP
                i += len(op)
                matched_multi = True
                break
        if matched_multi:
            continue

        # Any remaining single character is its own token. ")" leaves
        # sign context off so "(a) - 1" keeps the binary minus.
        tokens.append(ch)
        prev_kind = _K_PARAM if ch == ")" else _K_OP
        i += 1

    return tokens


def normalize(raw: RawQuery) -> NormalizedQuery:
    """Normalize one raw query into its canonical masked form."""
    tokens = tuple(tokenize(raw.text))
    text = " ".join(tokens)
    return NormalizedQuery(
        text=text,
        tokens=tokens,
        user_label=raw.user_label,
        fingerprint=fnv1a64(text),
        sequence_id=raw.sequence_id,
    )


def dedup(corpus: Iterable[NormalizedQuery]) -> list[NormalizedQuery]:
    """Drop repeated queries per user, keeping each first occurrence.

    The dedup key is (user_label, fingerprint): the same normalized text
    issued by two different users is kept once for each of them. "First"
    means lowest sequence_id; input order is preserved in the output.
    """
    items = list(corpus)
    best: dict[tuple[Optional[str], int], int] = {}
    for idx, nq in enumerate(items):
        key = (nq.user_label, nq.fingerprint)
        prev = best.get(key)
        if prev is None or items[prev].sequence_id > nq.sequence_id:
            best[key] = idx
    keep = set(best.values())
    return [nq for idx, nq in enumerate(items) if idx in keep]


def tokenize_for_encoder(nq: NormalizedQuery) -> list[str]:
    """Token sequence handed to the embedding layer.

    Returns the normalizer's own tokens unchanged; external encoders may
    swap in subword tokenization behind this seam without touching the
    normalization contract.
    """
    return list(nq.tokens)


# ---------------------------------------------------------------------------
# Corpus file format: JSON-lines, one record per line.
#   in:  {"query": str, "user": str|null, "seq": int}
#   out: same fields plus "normalized": str and "fingerprint": hex str
# Generated corpora additionally carry a "truth" field, which round-trips
# through these helpers untouched.
# ---------------------------------------------------------------------------


@dataclass
class CorpusRecord:
    query: str
    user: Optional[str] = None
    seq: int = 0
    normalized: Optional[str] = None
    fingerprint: Optional[str] = None
    truth: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_raw(self) -> RawQuery:
        return RawQuery(text=self.query, user_label=self.user, sequence_id=self.seq)

    def to_json_obj(self) -> dict:
        obj = {"query": self.query, "user": self.user, "seq": self.seq}
        if self.normalized is not None:
            obj["normalized"] = self.normalized
            obj["fingerprint"] = self.fingerprint
        if self.truth is not None:
            obj["truth"] = self.truth
        obj.update(self.extra)
        return obj


def parse_corpus_record(obj: dict, line_number: int = 0) -> CorpusRecord:
    if not isinstance(obj, dict):
        raise CorpusFormatError(line_number, "record is not a JSON object")
    if "query" not in obj or not isinstance(obj["query"], str):
        raise CorpusFormatError(line_number, "missing string field 'query'")
    if not obj["query"].strip():
        raise CorpusFormatError(line_number, "field 'query' is empty")
    user = obj.get("user")
    if user is not None and not isinstance(user, str):
        raise CorpusFormatError(line_number, "field 'user' must be string or null")
    seq = obj.get("seq", line_number)
    if not isinstance(seq, int) or seq < 0:
        raise CorpusFormatError(line_number, "field 'seq' must be a non-negative integer")
    known = {"query", "user", "seq", "normalized", "fingerprint", "truth"}
    return CorpusRecord(
        query=obj["query"],
        user=user,
        seq=seq,
        normalized=obj.get("normalized"),
        fingerprint=obj.get("fingerprint"),
        truth=obj.get("truth"),
        extra={k: v for k, v in obj.items() if k not in known},
    )


def read_corpus_with_lines(path) -> list[tuple[int, CorpusRecord]]:
    """Read a JSON-lines corpus file, pairing each record with its 1-based
    line number. Parse errors carry the offending line number."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(line_number, f"invalid JSON ({exc.msg})") from exc
            records.append((line_number, parse_corpus_record(obj, line_number)))
    return records


def read_corpus(path) -> list[CorpusRecord]:
    return [rec for _, rec in read_corpus_with_lines(path)]


def write_corpus(path, records: Iterable[CorpusRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_obj(), sort_keys=True) + "\n")


def normalize_records(records: Iterable[CorpusRecord], apply_dedup: bool = True):
    """Normalize corpus records and optionally dedup them per user.

    Returns (kept_records, duplicates_removed). Each kept record gains its
    "normalized" and "fingerprint" fields.
    """
    normalized: list[tuple[CorpusRecord, NormalizedQuery]] = []
    for rec in records:
        nq = normalize(rec.to_raw())
        rec.normalized = nq.text
        rec.fingerprint = nq.fingerprint_hex
        normalized.append((rec, nq))
    if not apply_dedup:
        return [rec for rec, _ in normalized], 0
    kept_queries = dedup([nq for _, nq in normalized])
    kept_ids = {id(nq) for nq in kept_queries}
    kept = [rec for rec, nq in normalized if id(nq) in kept_ids]
    return kept, len(normalized) - len(kept)
