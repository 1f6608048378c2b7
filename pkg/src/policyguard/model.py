"""Policy models: datatypes, described variables and asserted rules."""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

from .errors import FormatError, ModelError, SmtSyntaxError, SortConflict, SortError, UnknownSymbol
from .logic import (
    BOOL,
    ConstDecl,
    DatatypeDecl,
    Env,
    Sort,
    Term,
    Var,
    constructors_used,
    datatype_sort,
    is_identifier,
    iter_subterms,
    parse_term,
    print_term,
    rename,
)
from .logic.terms import BUILTIN_SORTS


@dataclass(frozen=True)
class VariableSpec:
    name: str
    sort: Sort
    description: str
    # descriptions of variables that were unified into this one
    provenance: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not is_identifier(self.name):
            raise ModelError(f"invalid variable name {self.name!r}")
        if not self.description or not self.description.strip():
            raise ModelError(f"variable {self.name} needs a description")
        object.__setattr__(self, "provenance", tuple(self.provenance))


@dataclass(frozen=True)
class Rule:
    id: str
    term: Term
    provenance: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ModelError("rule id must be nonempty")
        if self.term.sort != BOOL:
            raise ModelError(f"rule {self.id} is not Bool-sorted")

    @property
    def smtlib(self) -> str:
        return print_term(self.term)


@dataclass(frozen=True)
class PolicyModel:
    datatypes: tuple[DatatypeDecl, ...] = ()
    variables: tuple[VariableSpec, ...] = ()
    rules: tuple[Rule, ...] = ()
    metadata: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "datatypes", tuple(self.datatypes))
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "rules", tuple(self.rules))
        env = self.env()  # raises on duplicate names
        ids: set[str] = set()
        texts: set[str] = set()
        for r in self.rules:
            if r.id in ids:
                raise ModelError(f"duplicate rule id {r.id!r}")
            ids.add(r.id)
            text = r.smtlib
            if text in texts:
                raise ModelError(f"rule {r.id} duplicates an earlier rule: {text}")
            texts.add(text)
            _check_term_against(r.term, env, f"rule {r.id}")

    # -- views

    def env(self) -> Env:
        try:
            return Env([*self.datatypes, *(ConstDecl(v.name, v.sort) for v in self.variables)])
        except ValueError as exc:
            raise ModelError(str(exc)) from None

    def declarations(self) -> list:
        return [*self.datatypes, *(ConstDecl(v.name, v.sort) for v in self.variables)]

    def variable(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def rule(self, rule_id: str) -> Rule:
        for r in self.rules:
            if r.id == rule_id:
                return r
        raise KeyError(rule_id)

    def parse(self, text: str) -> Term:
        return parse_term(text, self.env())

    def declarations_only(self) -> "PolicyModel":
        return replace(self, rules=())

    def with_rules(self, rules: Iterable[Rule]) -> "PolicyModel":
        return replace(self, rules=tuple(rules))

    def counts(self) -> dict[str, int]:
        return {"datatypes": len(self.datatypes), "variables": len(self.variables), "rules": len(self.rules)}

    # -- persistence

    def to_json(self) -> dict:
        out: dict[str, Any] = {
            "datatypes": [{"name": d.name, "constructors": list(d.constructors)} for d in self.datatypes],
            "variables": [],
            "rules": [],
        }
        for v in self.variables:
            item: dict[str, Any] = {"name": v.name, "sort": sort_to_json(v.sort), "description": v.description}
            if v.provenance:
                item["provenance"] = list(v.provenance)
            out["variables"].append(item)
        for r in self.rules:
            item = {"id": r.id, "smtlib": r.smtlib}
            if r.provenance is not None:
                item["provenance"] = r.provenance
            out["rules"].append(item)
        if self.metadata:
            out["metadata"] = self.metadata
        return out

    @classmethod
    def from_json(cls, data: Any) -> "PolicyModel":
        return _model_from_json(cls, data)


class PolicyUnit(PolicyModel):
    """The formalization of a single text span, before composition."""


def _check_term_against(term: Term, env: Env, where: str) -> None:
    for t in iter_subterms(term):
        if isinstance(t, Var):
            declared = env.variables.get(t.name)
            if declared is None:
                raise ModelError(f"{where} uses undeclared variable {t.name!r}")
            if declared != t.sort:
                raise ModelError(f"{where} uses {t.name} as {t.sort}, declared {declared}")
    for c in constructors_used(term):
        if c not in env.constructors:
            raise ModelError(f"{where} uses undeclared constructor {c!r}")


# ------------------------------------------------------------------- JSON


def sort_to_json(s: Sort) -> Any:
    return {"datatype": s.name} if s.is_datatype else s.name


def sort_from_json(data: Any, pointer: str = "") -> Sort:
    if isinstance(data, str) and data in BUILTIN_SORTS:
        return BUILTIN_SORTS[data]
    if isinstance(data, dict) and set(data) == {"datatype"} and isinstance(data["datatype"], str):
        return datatype_sort(data["datatype"])
    raise FormatError(f"invalid sort {data!r}", pointer)


def _expect(cond: bool, message: str, pointer: str) -> None:
    if not cond:
        raise FormatError(message, pointer)


def _model_from_json(cls, data: Any) -> PolicyModel:
    _expect(isinstance(data, dict), "policy model must be a JSON object", "")
    for key in ("datatypes", "variables", "rules"):
        _expect(isinstance(data.get(key), list), f"missing array {key!r}", f"/{key}")
    unknown = set(data) - {"datatypes", "variables", "rules", "metadata"}
    _expect(not unknown, f"unexpected keys {sorted(unknown)}", "")

    datatypes = []
    for i, d in enumerate(data["datatypes"]):
        p = f"/datatypes/{i}"
        _expect(isinstance(d, dict) and isinstance(d.get("name"), str), "datatype needs a name", p)
        ctors = d.get("constructors")
        _expect(isinstance(ctors, list) and all(isinstance(c, str) for c in ctors), "constructors must be strings", p + "/constructors")
        try:
            datatypes.append(DatatypeDecl(d["name"], tuple(ctors)))
        except ValueError as exc:
            raise FormatError(str(exc), p) from None

    variables = []
    for i, v in enumerate(data["variables"]):
        p = f"/variables/{i}"
        _expect(isinstance(v, dict), "variable must be an object", p)
        _expect(isinstance(v.get("name"), str), "variable needs a name", p + "/name")
        _expect(isinstance(v.get("description"), str), "variable needs a description", p + "/description")
        prov = v.get("provenance", [])
        _expect(isinstance(prov, list) and all(isinstance(x, str) for x in prov), "provenance must be strings", p + "/provenance")
        try:
            variables.append(VariableSpec(v["name"], sort_from_json(v.get("sort"), p + "/sort"), v["description"], tuple(prov)))
        except ModelError as exc:
            raise FormatError(str(exc), p) from None

    try:
        env = Env([*datatypes, *(ConstDecl(v.name, v.sort) for v in variables)])
    except ValueError as exc:
        raise FormatError(str(exc), "/variables") from None

    rules = []
    for i, r in enumerate(data["rules"]):
        p = f"/rules/{i}"
        _expect(isinstance(r, dict), "rule must be an object", p)
        _expect(isinstance(r.get("id"), str) and r["id"], "rule needs an id", p + "/id")
        _expect(isinstance(r.get("smtlib"), str), "rule needs smtlib text", p + "/smtlib")
        prov = r.get("provenance")
        _expect(prov is None or isinstance(prov, str), "provenance must be a string", p + "/provenance")
        try:
            term = parse_term(r["smtlib"], env)
        except UnknownSymbol as exc:
            raise FormatError(f"undeclared name {exc.name!r} in rule {r['id']}", p + "/smtlib") from None
        except (SmtSyntaxError, SortError) as exc:
            raise FormatError(str(exc), p + "/smtlib") from None
        if term.sort != BOOL:
            raise FormatError(f"rule {r['id']} is not Bool-sorted", p + "/smtlib")
        rules.append(Rule(r["id"], term, prov))

    metadata = data.get("metadata", {})
    _expect(isinstance(metadata, dict), "metadata must be an object", "/metadata")
    try:
        return cls(tuple(datatypes), tuple(variables), tuple(rules), dict(metadata))
    except ModelError as exc:
        raise FormatError(str(exc), "") from None


def save(model: PolicyModel, destination: str | os.PathLike) -> None:
    text = json.dumps(model.to_json(), indent=2, ensure_ascii=False) + "\n"
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def load(source: str | os.PathLike) -> PolicyModel:
    try:
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}", "") from None
    return PolicyModel.from_json(data)


# ------------------------------------------------------------ embeddings


class EmbeddingProvider(Protocol):
    def similarity(self, a: VariableSpec, b: VariableSpec) -> float: ...


_CAMEL = re.compile(r"[A-Z]+(?![a-z])|[A-Z]?[a-z]+|[0-9]+")
_WORD = re.compile(r"[a-z0-9]+")


def variable_tokens(v: VariableSpec) -> frozenset[str]:
    name_tokens = {t.lower() for part in v.name.split("_") for t in _CAMEL.findall(part)}
    return frozenset(name_tokens | set(_WORD.findall(v.description.lower())))


class LexicalEmbedder:
    """Offline similarity: Jaccard overlap of name and description tokens."""

    def similarity(self, a: VariableSpec, b: VariableSpec) -> float:
        ta, tb = variable_tokens(a), variable_tokens(b)
        if not ta and not tb:
            return 1.0
        return len(ta & tb) / len(ta | tb)


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(u, v))
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(y * y for y in v))
    if nu == 0 or nv == 0:
        return 0.0
    return dot / (nu * nv)


class HttpEmbedder:
    """Cosine similarity over vectors from an OpenAI-compatible embeddings endpoint."""

    def __init__(self, endpoint: str, model: str, api_key_env: str = "OPENAI_API_KEY", client=None):
        import httpx

        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self._client = client or httpx.Client(timeout=60)
        self._cache: dict[str, list[float]] = {}

    def _text(self, v: VariableSpec) -> str:
        return f"{v.name}: {v.description}"

    def _embed(self, text: str) -> list[float]:
        if text not in self._cache:
            headers = {}
            key = os.environ.get(self.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
            resp = self._client.post(self.endpoint, json={"model": self.model, "input": text}, headers=headers)
            resp.raise_for_status()
            self._cache[text] = resp.json()["data"][0]["embedding"]
        return self._cache[text]

    def similarity(self, a: VariableSpec, b: VariableSpec) -> float:
        return cosine(self._embed(self._text(a)), self._embed(self._text(b)))


# ------------------------------------------------------------ composition


def compose(
    units: Sequence[PolicyModel],
    embedder: EmbeddingProvider | None = None,
    cluster_threshold: float = 0.8,
) -> PolicyModel:
    """Merge per-span units into one model (see :func:`compose_with_map`)."""
    return compose_with_map(units, embedder, cluster_threshold)[0]


def compose_with_map(
    units: Sequence[PolicyModel],
    embedder: EmbeddingProvider | None = None,
    cluster_threshold: float = 0.8,
) -> tuple[PolicyModel, list[dict[str, str]]]:
    """Compose units and return the per-unit variable renaming that was applied.

    Variables from different units whose similarity reaches the threshold are
    clustered (single link, strongest pairs first); two variables of the same
    unit are never put in one cluster.  A cluster takes the lexicographically
    smallest member name and the longest member description.  Distinct
    clusters that would share a name get numeric suffixes in order of first
    appearance.  Datatypes with the same name are merged (constructor union).
    Rules are rewritten under the renaming and syntactic duplicates dropped.
    """
    if not 0 < cluster_threshold <= 1:
        raise ValueError("cluster_threshold must lie in (0, 1]")
    embedder = embedder or LexicalEmbedder()

    datatypes: dict[str, list[str]] = {}
    ctor_owner: dict[str, str] = {}
    for unit in units:
        for d in unit.datatypes:
            ctors = datatypes.setdefault(d.name, [])
            for c in d.constructors:
                owner = ctor_owner.setdefault(c, d.name)
                if owner != d.name:
                    raise ModelError(f"constructor {c!r} belongs to both {owner} and {d.name}")
                if c not in ctors:
                    ctors.append(c)

    items: list[tuple[int, VariableSpec]] = [(u, v) for u, unit in enumerate(units) for v in unit.variables]
    parent = list(range(len(items)))
    members_units: list[set[int]] = [{u} for u, _ in items]

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    edges = _similar_pairs(items, embedder, cluster_threshold)
    for _, i, j in sorted(edges):
        ri, rj = find(i), find(j)
        if ri == rj or members_units[ri] & members_units[rj]:
            continue
        if rj < ri:
            ri, rj = rj, ri
        parent[rj] = ri
        members_units[ri] |= members_units[rj]

    clusters: dict[int, list[int]] = {}
    for i in range(len(items)):
        clusters.setdefault(find(i), []).append(i)

    canonical: dict[int, VariableSpec] = {}
    for root, idxs in clusters.items():
        specs = [items[i][1] for i in idxs]
        sorts = {s.sort for s in specs}
        if len(sorts) > 1:
            raise SortConflict([s.name for s in specs], [str(s.sort) for s in specs])
        name = min(s.name for s in specs)
        best = min(specs, key=lambda s: (-len(s.description), s.description))
        others = sorted({f"{s.name}: {s.description}" for s in specs if s is not best})
        provenance = tuple(dict.fromkeys([*best.provenance, *others]))
        canonical[root] = VariableSpec(name, best.sort, best.description, provenance)

    # clusters that end up sharing a name are suffixed
    by_name: dict[str, list[int]] = {}
    for root in sorted(clusters, key=lambda r: min(clusters[r])):
        by_name.setdefault(canonical[root].name, []).append(root)
    reserved = set(datatypes) | set(ctor_owner)
    taken = {n for n, roots in by_name.items() if len(roots) == 1 and n not in reserved}
    final_name: dict[int, str] = {}
    for name, roots in by_name.items():
        if len(roots) == 1 and name not in reserved:
            final_name[roots[0]] = name
            continue
        k = 1
        for root in roots:
            while f"{name}_{k}" in taken or f"{name}_{k}" in reserved:
                k += 1
            final_name[root] = f"{name}_{k}"
            taken.add(final_name[root])
            k += 1

    maps: list[dict[str, str]] = [dict() for _ in units]
    for i, (u, v) in enumerate(items):
        maps[u][v.name] = final_name[find(i)]

    variables = []
    for root in sorted(clusters, key=lambda r: min(clusters[r])):
        spec = canonical[root]
        variables.append(replace(spec, name=final_name[root]))

    rules: list[Rule] = []
    seen_text: set[str] = set()
    used_ids: set[str] = set()
    for u, unit in enumerate(units):
        for r in unit.rules:
            term = rename(r.term, maps[u])
            text = print_term(term)
            if text in seen_text:
                continue
            seen_text.add(text)
            rid = r.id
            k = 1
            while rid in used_ids:
                rid = f"{r.id}_{k}"
                k += 1
            used_ids.add(rid)
            rules.append(Rule(rid, term, r.provenance))

    model = PolicyModel(
        tuple(DatatypeDecl(n, tuple(c)) for n, c in datatypes.items()),
        tuple(variables),
        tuple(rules),
    )
    return model, maps


def _similar_pairs(items, embedder, threshold) -> list[tuple[float, int, int]]:
    edges = []
    if isinstance(embedder, LexicalEmbedder):
        # Jaccard > 0 needs a shared token, so only compare candidates from the index
        tokens = [variable_tokens(v) for _, v in items]
        index: dict[str, list[int]] = {}
        for i, ts in enumerate(tokens):
            for t in ts:
                index.setdefault(t, []).append(i)
        candidates: set[tuple[int, int]] = set()
        for bucket in index.values():
            for a in range(len(bucket)):
                for b in range(a + 1, len(bucket)):
                    candidates.add((bucket[a], bucket[b]))
        pairs = sorted(candidates)
    else:
        pairs = [(i, j) for i in range(len(items)) for j in range(i + 1, len(items))]
    for i, j in pairs:
        if items[i][0] == items[j][0]:
            continue
        s = embedder.similarity(items[i][1], items[j][1])
        if s >= threshold:
            edges.append((-s, i, j))
    return edges
