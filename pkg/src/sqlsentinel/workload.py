"""Synthetic role-scoped SQL workloads with labeled attack injection.

The built-in schema (data/schema.json) fixes 9 tables, 6 views and 50
attributes, with HR/Finance/DBA grant regions that overlap on shared
tables. Sensitive columns belong to Finance; HR is granted exactly one of
them and DBA none.

Normal corpora are emitted pre-parameterized (predicates already hold
``?``), because that is the representation the rest of the pipeline
consumes; a 10% fraction is emitted as raw-literal variants (concrete
numbers/strings, mixed-case keywords) to exercise the normalizer end to
end. Attack records carry ground-truth labels:

    "normal"
    "attack:data_leak" | "attack:sabotage" | "attack:sqli"
    "masquerade:<source-role>"

Everything is a pure function of (schema, parameters, seed): the same
seed reproduces a byte-identical corpus file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .errors import ExhaustedTemplates, InsufficientSource
from .normalizer import CorpusRecord

TRUTH_NORMAL = "normal"
ATTACK_KINDS = ("data_leak", "sabotage", "sqli")

RAW_LITERAL_FRACTION = 0.10

_STRING_POOL = ("alpha", "beta", "gamma", "delta", "omega", "north", "south", "q3", "q4")


@dataclass
class SchemaSpec:
    version: int
    tables: dict[str, list[str]]
    views: dict[str, list[str]]
    sensitive_columns: set[str]
    role_access: dict[str, dict[str, list[str]]]
    writable: dict[str, list[str]]
    join_pairs: dict[str, list[list[str]]]

    @property
    def roles(self) -> list[str]:
        return sorted(self.role_access)

    def objects(self) -> dict[str, list[str]]:
        return {**self.tables, **self.views}

    def all_columns(self) -> set[str]:
        cols: set[str] = set()
        for obj_cols in self.objects().values():
            cols.update(obj_cols)
        return cols

    def granted_columns(self, role: str) -> set[str]:
        cols: set[str] = set()
        for obj_cols in self.role_access[role].values():
            cols.update(obj_cols)
        return cols


def load_schema(path=None) -> SchemaSpec:
    if path is None:
        text = resources.files("sqlsentinel.data").joinpath("schema.json").read_text("utf-8")
        doc = json.loads(text)
    else:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    return SchemaSpec(
        version=int(doc["version"]),
        tables=doc["tables"],
        views=doc["views"],
        sensitive_columns=set(doc["sensitive_columns"]),
        role_access=doc["role_access"],
        writable=doc["writable"],
        join_pairs=doc.get("join_pairs", {}),
    )


@dataclass
class GeneratedCorpus:
    records: list[CorpusRecord] = field(default_factory=list)
    generation_seed: int = 0

    def next_seq(self) -> int:
        return max((r.seq for r in self.records), default=-1) + 1


# ---------------------------------------------------------------------------
# Grant-set membership
# ---------------------------------------------------------------------------

_OBJECT_INTRO = {"from", "into", "update", "join", "table", "view"}


def referenced_objects(schema: SchemaSpec, tokens: Sequence[str]) -> set[str]:
    known = set(schema.objects())
    refs: set[str] = set()
    i = 0
    while i < len(tokens):
        if tokens[i] in _OBJECT_INTRO:
            j = i + 1
            while j < len(tokens):
                if tokens[j] in known:
                    refs.add(tokens[j])
                    # comma-separated object list: "from t2 , t3"
                    if j + 1 < len(tokens) and tokens[j + 1] == ",":
                        j += 2
                        continue
                break
            i = j
        i += 1
    return refs


def referenced_columns(schema: SchemaSpec, tokens: Sequence[str]) -> set[str]:
    known = schema.all_columns()
    return {tok for tok in tokens if tok in known}


def query_within_grants(schema: SchemaSpec, role: str, normalized_text: str) -> bool:
    """True when every referenced object and column is granted to *role*."""
    if role not in schema.role_access:
        return False
    tokens = normalized_text.split(" ")
    grants = schema.role_access[role]
    objs = referenced_objects(schema, tokens)
    if not objs or any(obj not in grants for obj in objs):
        return False
    allowed_cols = schema.granted_columns(role)
    return referenced_columns(schema, tokens) <= allowed_cols


# ---------------------------------------------------------------------------
# Normal workloads
# ---------------------------------------------------------------------------


def _pick_cols(rng, cols: Sequence[str], k: int) -> list[str]:
    # Geometric preference for leading columns: real workloads hammer a few
    # hot attributes per table instead of sampling them uniformly.
    k = min(k, len(cols))
    weights = np.power(0.55, np.arange(len(cols)))
    weights /= weights.sum()
    idx = rng.choice(len(cols), size=k, replace=False, p=weights)
    return [cols[int(i)] for i in sorted(idx)]


def _col_list_tokens(cols: Sequence[str]) -> list[str]:
    out: list[str] = []
    for i, c in enumerate(cols):
        if i:
            out.append(",")
        out.append(c)
    return out


def _predicate(rng, cols: Sequence[str]) -> list[str]:
    c = _pick_cols(rng, cols, 1)[0]
    shape = int(rng.integers(10))
    if shape < 5:
        return [c, "=", "?"]
    if shape < 7:
        return [c, "like", "?"]
    if shape < 9:
        n_items = int(rng.integers(2, 4))
        return [c, "in", "(", *_col_list_tokens(["?"] * n_items), ")"]
    return [c, "between", "?", "and", "?"]


def _object_templates(obj: str, cols: Sequence[str]) -> list[list[list[str]]]:
    """The finite menu of read-template FAMILIES an application issues
    against one object. A family is a group of queries issued together:
    an IN-list template appears with every arity its callers use, so each
    sampled corpus carries those near-duplicate variants, and a held-out
    sample recombines the same shapes the learning set saw."""
    hot = list(cols[:3])
    select_lists: list[list[str]] = [["*"], [hot[0]], ["count", "(", "*", ")"]]
    if len(hot) >= 2:
        select_lists += [[hot[1]], _col_list_tokens(hot[:2])]
    predicate_families: list[list[list[str]]] = [
        [[hot[0], "=", "?"]],
        [[hot[0], "like", "?"]],
        [[hot[0], "in", "(", *_col_list_tokens(["?"] * arity), ")"] for arity in (2, 3)],
    ]
    if len(hot) >= 2:
        predicate_families += [
            [[hot[1], "=", "?"]],
            [[hot[1], "like", "?"]],
            [[hot[1], ">", "?"]],
            [[hot[1], "in", "(", *_col_list_tokens(["?"] * arity), ")"] for arity in (2, 3)],
        ]
    if len(hot) >= 3:
        predicate_families.append([[hot[2], "=", "?"]])
    # One optional suffix: either a second conjunct or an order-by, not both.
    suffixes: list[list[str]] = [[], ["order", "by", hot[0]], ["order", "by", hot[0], "desc"]]
    if len(hot) >= 2:
        suffixes.append(["and", hot[1], "=", "?"])
    out = []
    for sl in select_lists:
        for family in predicate_families:
            for suffix in suffixes:
                if suffix and suffix[0] == "and" and suffix[1] == family[0][0]:
                    continue
                out.append([
                    ["select", *sl, "from", obj, "where", *pred, *suffix]
                    for pred in family
                ])
    return out


def _write_templates(obj: str, cols: Sequence[str]) -> list[list[str]]:
    hot = list(cols[:4])
    out = []
    if len(hot) >= 2:
        out.append(["insert", "into", obj, "(", *_col_list_tokens(hot[:2]), ")",
                    "values", "(", "?", ",", "?", ")"])
        out.append(["update", obj, "set", hot[1], "=", "?", "where", hot[0], "=", "?"])
    if len(hot) >= 3:
        out.append(["insert", "into", obj, "(", *_col_list_tokens(hot[:3]), ")",
                    "values", "(", "?", ",", "?", ",", "?", ")"])
        out.append(["update", obj, "set", hot[2], "=", "?", "where", hot[0], "=", "?"])
    if len(hot) >= 4:
        out.append(["update", obj, "set", hot[3], "=", "?", "where", hot[0], "=", "?"])
    return out


def _join_templates(role: str, schema: SchemaSpec) -> list[list[str]]:
    grants = schema.role_access[role]
    out = []
    for a, b, ka, kb in schema.join_pairs.get(role, []):
        cols_a = [c for c in grants[a] if c != ka][:2]
        cols_b = [c for c in grants[b] if c != kb][:2]
        base = ["from", a, ",", b, "where", ka, "=", kb]
        for ca in cols_a:
            for cb in cols_b:
                out.append(["select", ca, ",", cb, *base])
                out.append(["select", ca, ",", cb, *base, "and", ca, "=", "?"])
        out.append(["select", "count", "(", "*", ")", *base])
    return out


def role_population(schema: SchemaSpec, role: str) -> list[list[list[str]]]:
    """Every query-template family the role's workload can produce.

    Shared tables contribute a thinner menu than the role's home tables
    (only their leading select shapes), which skews traffic toward
    exclusive objects the same way _object_weights does for long mode.
    """
    grants = schema.role_access[role]
    population: list[list[list[str]]] = []
    for obj in sorted(grants):
        owners = sum(obj in acc for acc in schema.role_access.values())
        families = _object_templates(obj, grants[obj])
        if owners > 1:
            families = families[: len(families) // 3]
        population.extend(families)
    for obj in schema.writable.get(role, []):
        if obj in grants:
            population.extend([t] for t in _write_templates(obj, grants[obj]))
    population.extend([t] for t in _join_templates(role, schema))
    return population


def role_template_count(schema: SchemaSpec, role: str) -> int:
    return sum(len(family) for family in role_population(schema, role))


def _raw_variant(rng, tokens: Sequence[str]) -> str:
    """Replace ? markers with concrete literals and roughen the casing."""
    out = []
    for tok in tokens:
        if tok == "?":
            if rng.integers(2):
                out.append(str(int(rng.integers(1, 5000))))
            else:
                out.append(f"'{_STRING_POOL[int(rng.integers(len(_STRING_POOL)))]}'")
        elif rng.integers(2) and tok.isalpha():
            out.append(tok.upper())
        else:
            out.append(tok)
    return " ".join(out)


def _object_weights(schema: SchemaSpec, role: str) -> tuple[list[str], np.ndarray]:
    """Role-exclusive objects dominate; tables shared with other roles get
    less traffic, mirroring how teams mostly hit their home tables."""
    objs = sorted(schema.role_access[role])
    weights = []
    for obj in objs:
        owners = sum(obj in grants for grants in schema.role_access.values())
        weights.append(1.0 if owners == 1 else 0.4)
    w = np.asarray(weights)
    return objs, w / w.sum()


def _pick_object(rng, objs: list[str], weights: np.ndarray) -> str:
    return objs[int(rng.choice(len(objs), p=weights))]


def _emit(rng, tokens: list[str], user: Optional[str], seq: int, truth: str) -> CorpusRecord:
    masked = " ".join(tokens)
    if rng.random() < RAW_LITERAL_FRACTION:
        query = _raw_variant(rng, tokens)
    else:
        query = masked
    return CorpusRecord(query=query, user=user, seq=seq, truth=truth)


def generate_normal(schema: SchemaSpec, role: str, count: int, seed: int,
                    start_seq: int = 0) -> list[CorpusRecord]:
    """Emit *count* unique (post-normalization) in-grant queries for *role*.

    Queries are sampled without replacement from the role's finite template
    population, so uniqueness is structural and the corpus mean token
    length lands at 12 +- 2 by the population's design.
    """
    if role not in schema.role_access:
        raise ValueError(f"unknown role {role!r}")
    if count < 1:
        raise ValueError("count must be >= 1")
    population = [t for family in role_population(schema, role) for t in family]
    if count > len(population):
        raise ExhaustedTemplates(
            f"role {role!r} has {len(population)} unique templates, "
            f"cannot emit {count}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(population))[:count]
    return [
        _emit(rng, population[int(idx)], role, start_seq + pos, TRUTH_NORMAL)
        for pos, idx in enumerate(order)
    ]


def generate_long(schema: SchemaSpec, role: str, count: int,
                  target_mean_tokens: int = 200, max_tokens: int = 1900,
                  seed: int = 0, start_seq: int = 0) -> list[CorpusRecord]:
    """Long multi-join/nested queries; corpus mean within 10% of target."""
    if role not in schema.role_access:
        raise ValueError(f"unknown role {role!r}")
    if count < 1:
        raise ValueError("count must be >= 1")
    if target_mean_tokens <= 16:
        return generate_normal(schema, role, count, seed, start_seq)
    rng = np.random.default_rng(seed)
    grants = schema.role_access[role]
    read_objs, obj_weights = _object_weights(schema, role)

    # Pre-draw per-query targets, then rescale so their mean is exact.
    targets = rng.gamma(shape=4.0, scale=target_mean_tokens / 4.0, size=count)
    targets = np.clip(targets * (target_mean_tokens / targets.mean()), 24, max_tokens - 8)

    records: list[CorpusRecord] = []
    seen: set[str] = set()
    attempts = 0
    max_attempts = max(1000, count * 200)
    while len(records) < count:
        attempts += 1
        if attempts > max_attempts:
            raise ExhaustedTemplates(
                f"could not reach {count} unique long queries for role {role!r}")
        target = float(targets[len(records)])
        obj = _pick_object(rng, read_objs, obj_weights)
        cols = grants[obj]
        tokens = ["select", *_col_list_tokens(_pick_cols(rng, cols, int(rng.integers(1, 4)))),
                  "from", obj, "where", *_predicate(rng, cols)]
        while len(tokens) < target - 8 and len(tokens) < max_tokens - 24:
            block = int(rng.integers(3))
            if block == 0:
                n_items = int(rng.integers(4, 12))
                extra = ["and", _pick_cols(rng, cols, 1)[0], "in",
                         "(", *_col_list_tokens(["?"] * n_items), ")"]
            elif block == 1:
                sub_obj = _pick_object(rng, read_objs, obj_weights)
                sub_cols = grants[sub_obj]
                extra = ["and", _pick_cols(rng, cols, 1)[0], "in",
                         "(", "select", _pick_cols(rng, sub_cols, 1)[0],
                         "from", sub_obj, "where", *_predicate(rng, sub_cols), ")"]
            else:
                extra = ["and", "(", *_predicate(rng, cols), "and",
                         *_predicate(rng, cols), ")"]
            if len(tokens) + len(extra) > max_tokens:
                break
            tokens += extra
        masked = " ".join(tokens)
        if masked in seen:
            continue
        seen.add(masked)
        records.append(_emit(rng, tokens, role, start_seq + len(records), TRUTH_NORMAL))
    return records


# ---------------------------------------------------------------------------
# Attacks
# ---------------------------------------------------------------------------


def _data_leak_pool(schema: SchemaSpec, rng) -> list[list[str]]:
    # Bulk exfiltration shapes: multi-sensitive pulls, unbounded scans and
    # id-paged dumps rather than routine predicated lookups.
    return [
        ["select", "sensitive_c1", ",", "sensitive_c2", "from", "t1"],
        ["select", "sensitive_c2", "from", "t1"],
        ["select", "t1_id", ",", "sensitive_c1", ",", "sensitive_c2", "from", "t1",
         "order", "by", "t1_id"],
        ["select", "sensitive_c3", "from", "t4"],
        ["select", "sensitive_c1", ",", "sensitive_c2", ",", "t1_dep", "from", "t1",
         "where", "t1_id", ">", "?", "order", "by", "t1_id"],
        ["select", "distinct", "sensitive_c3", ",", "t4_owner", "from", "t4"],
    ]


def _sabotage_pool(schema: SchemaSpec, rng) -> list[list[str]]:
    return [
        ["drop", "table", "t3"],
        ["update", "t1", "set", "col1", "=", "?", "where", "col2", "=", "?"],
        ["drop", "table", "t5"],
        ["truncate", "table", "t2"],
        ["update", "t2", "set", "t2_status", "=", "?"],
        ["delete", "from", "t5"],
        ["drop", "view", "v3"],
        ["drop", "table", "t8"],
    ]


def _sqli_pool(schema: SchemaSpec, rng) -> list[list[str]]:
    # Every pattern ends with the tautology suffix "or ? = ?". Injection
    # campaigns vary their payloads, so beyond the two classic tautology
    # probes the pool carries union-based exfiltration payloads.
    return [
        ["select", "*", "from", "t2", "where", "t2_name", "like", "?", "union", "select",
         "*", "from", "t1", "where", "?", "=", "?", "or", "?", "=", "?"],
        ["select", "*", "from", "t5", "where", "t5_acct", "=", "?", "union", "select",
         "sensitive_c1", ",", "sensitive_c2", "from", "t1", "where", "?", "=", "?",
         "or", "?", "=", "?"],
        ["select", "t9_detail", "from", "t9", "where", "t9_actor", "=", "?", "union",
         "select", "t8_grantee", "from", "t8", "where", "?", "=", "?", "or", "?", "=", "?"],
        ["select", "*", "from", "t1", "where", "col1", "=", "?", "or", "?", "=", "?"],
        ["select", "*", "from", "t1", "where", "col1", "=", "?", "and", "col2", "=", "?",
         "or", "?", "=", "?"],
        ["select", "t2_name", "from", "t2", "where", "t2_id", "=", "?", "union", "select",
         "t8_priv", "from", "t8", "where", "?", "=", "?", "or", "?", "=", "?"],
        ["select", "*", "from", "t4", "where", "t4_owner", "like", "?", "union", "select",
         "*", "from", "t4", "where", "sensitive_c3", ">", "?", "or", "?", "=", "?"],
        ["select", "t5_acct", "from", "t5", "where", "t5_id", "=", "?", "union", "select",
         "t9_actor", "from", "t9", "where", "?", "=", "?", "or", "?", "=", "?"],
    ]


def _leak_claimant(schema: SchemaSpec, rng, masked: str) -> str:
    candidates = [r for r in schema.roles
                  if r != "finance" and not query_within_grants(schema, r, masked)]
    if not candidates:
        candidates = [r for r in schema.roles if r != "finance"]
    return candidates[int(rng.integers(len(candidates)))]


def inject_attacks(schema: SchemaSpec, kinds, count: int, seed: int,
                   start_seq: int = 0) -> list[CorpusRecord]:
    """Emit *count* attack records cycling over the requested kinds."""
    kinds = [k for k in ATTACK_KINDS if k in set(kinds)]
    if not kinds:
        raise ValueError("kinds must name at least one attack kind")
    rng = np.random.default_rng(seed)
    pools = {
        "data_leak": _data_leak_pool(schema, rng),
        "sabotage": _sabotage_pool(schema, rng),
        "sqli": _sqli_pool(schema, rng),
    }
    roles = schema.roles
    records: list[CorpusRecord] = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        pool = pools[kind]
        tokens = list(pool[(i // len(kinds)) % len(pool)])
        masked = " ".join(tokens)
        if kind == "data_leak":
            user = _leak_claimant(schema, rng, masked)
        else:
            user = roles[int(rng.integers(len(roles)))]
        records.append(_emit(rng, tokens, user, start_seq + i, f"attack:{kind}"))
    return records


def inject_internal_masquerade(corpus: GeneratedCorpus, schema: SchemaSpec,
                               victim: str, attacker_source: str,
                               count: int, seed: int) -> GeneratedCorpus:
    """Append source-role-shaped queries relabeled as the victim.

    The injected queries are drawn from the attacker's normal distribution
    (in-scope for the database) but claim the victim's identity, which is
    exactly what tier 2 exists to catch.
    """
    if victim == attacker_source:
        raise ValueError("victim and attacker_source must differ")
    for role in (victim, attacker_source):
        if role not in schema.role_access:
            raise ValueError(f"unknown role {role!r}")
    if count == 0:
        return corpus
    try:
        drawn = generate_normal(schema, attacker_source, count,
                                seed=seed, start_seq=corpus.next_seq())
    except ExhaustedTemplates as exc:
        raise InsufficientSource(str(exc)) from exc
    for rec in drawn:
        rec.user = victim
        rec.truth = f"masquerade:{attacker_source}"
    return GeneratedCorpus(records=corpus.records + drawn,
                           generation_seed=corpus.generation_seed)
