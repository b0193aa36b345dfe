"""Typed knowledge-graph store and the construction transforms.

Build order used by the pipeline::

    registry = EntityRegistry()
    triples = ingest_metadata(meta, registry)
    triples += ingest_image_features(labels, registry)
    triples = split_relations(triples, registry.product_domain())
    triples = merge_duplicate_edges(triples)
    triples += add_purchases(train_sessions, registry) + add_cooccur(train_sessions, registry)
    graph = finalize(triples, registry)
"""

from __future__ import annotations

import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

ITEM_KINDS = ("product", "movie")
ECOMMERCE_KINDS = ("user", "product", "brand", "category", "image_feature", "title_feature", "related_product")
MOVIE_KINDS = ("movie", "genre", "director", "actor", "tag", "region")
ENTITY_KINDS = ECOMMERCE_KINDS + MOVIE_KINDS

_P2P = {("product", "product")}
_P2R = {("product", "related_product")}
SCHEMA: dict[str, set[tuple[str, str]]] = {
    "purchase": {("user", "product"), ("user", "movie")},
    "produced_by": {("product", "brand"), ("movie", "region")},
    "belong_to": {("product", "category"), ("movie", "genre")},
    "image_sim": {("product", "image_feature")},
    "title_sim": {("product", "title_feature")},
    "also_bought": _P2P,
    "also_viewed": _P2P,
    "viewed_bought": _P2P,
    "bought_together": _P2P,
    "also_bought_diff": _P2R,
    "also_viewed_diff": _P2R,
    "bought_viewed_diff": _P2R,
    "bought_together_diff": _P2R,
    "co_occur": _P2P | {("movie", "movie")},
    "directed_by": {("movie", "director")},
    "acted_by": {("movie", "actor")},
    "described_as": {("movie", "tag")},
}
INVERSE_SUFFIX = "_inverse"
DIFF_FAMILIES = ("also_viewed", "also_bought", "bought_together")

STOPWORDS = frozenset(
    """a an and are as at be but by for from has have in is it its of on or s that the this to
    was were will with x w new set pack pcs oz ml fl size""".split()
)


class GraphError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Relation:
    name: str
    inverse: bool = False

    def __str__(self) -> str:
        return self.name + INVERSE_SUFFIX if self.inverse else self.name

    @property
    def twin(self) -> "Relation":
        return Relation(self.name, not self.inverse)

    @classmethod
    def parse(cls, text: str) -> "Relation":
        if text.endswith(INVERSE_SUFFIX):
            return cls(text[: -len(INVERSE_SUFFIX)], True)
        return cls(text, False)


class Triple(NamedTuple):
    head: int
    rel: str
    tail: int


class EntityRegistry:
    """Dense entity ids keyed by ``kind:name``; ids are assigned in registration order."""

    def __init__(self):
        self.kinds: list[str] = []
        self.names: list[str] = []
        self._index: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.kinds)

    def add(self, kind: str, name: str) -> int:
        if kind not in ENTITY_KINDS:
            raise GraphError(f"unknown entity kind {kind!r}")
        key = f"{kind}:{name}"
        idx = self._index.get(key)
        if idx is None:
            idx = len(self.kinds)
            self._index[key] = idx
            self.kinds.append(kind)
            self.names.append(name)
        return idx

    def get(self, kind: str, name: str) -> int | None:
        return self._index.get(f"{kind}:{name}")

    def lookup(self, kind: str, name: str) -> int:
        idx = self.get(kind, name)
        if idx is None:
            raise KeyError(f"{kind}:{name}")
        return idx

    def item(self, name: str) -> int:
        """Index of an interaction item, whichever item kind it was registered under."""
        for kind in ITEM_KINDS:
            idx = self.get(kind, name)
            if idx is not None:
                return idx
        raise KeyError(name)

    def key(self, idx: int) -> str:
        return f"{self.kinds[idx]}:{self.names[idx]}"

    def product_domain(self) -> set[int]:
        return {i for i, k in enumerate(self.kinds) if k in ITEM_KINDS}


def _as_list(value) -> list:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        out = []
        for v in value:
            out.extend(_as_list(v))
        return out
    return [value]


def title_features(record: dict) -> list[str]:
    if "title_tokens" in record:
        tokens = [str(t).lower() for t in _as_list(record["title_tokens"])]
    elif "title" in record:
        tokens = re.findall(r"[a-z0-9]+", str(record["title"]).lower())
    else:
        return []
    seen, out = set(), []
    for tok in tokens:
        tok = tok.strip()
        if tok and tok not in STOPWORDS and not tok.isdigit() and tok not in seen:
            seen.add(tok)
            out.append(tok)
    return out


def _record_id(record: dict, lineno: int) -> str:
    for field_name in ("item_id", "asin", "id"):
        if field_name in record:
            return str(record[field_name])
    raise GraphError(f"metadata line {lineno}: no item id field")


def _related(record: dict, name: str) -> list[str]:
    values = _as_list(record.get(name))
    related = record.get("related")
    if isinstance(related, dict):
        values += _as_list(related.get(name))
    return [str(v) for v in values]


def read_metadata(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise GraphError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return records


def ingest_metadata(meta, registry: EntityRegistry, domain: str = "ecommerce") -> list[Triple]:
    """Attribute and co-purchase triples from JSON-lines metadata.

    ``meta`` is a path or an already-parsed list of records. also_* tails that are not
    products of this corpus are registered as ``related_product``; relation names stay raw
    until :func:`split_relations`.
    """
    records = read_metadata(meta) if isinstance(meta, (str, Path)) else list(meta)
    item_kind = "movie" if domain == "movie" else "product"
    ids = []
    seen = set()
    for lineno, rec in enumerate(records, start=1):
        item = _record_id(rec, lineno)
        if item in seen:
            raise GraphError(f"duplicate product id {item!r} in metadata")
        seen.add(item)
        ids.append(item)
        registry.add(item_kind, item)

    triples: list[Triple] = []
    for item, rec in zip(ids, records):
        head = registry.lookup(item_kind, item)
        if domain == "movie":
            for field_name, rel, kind in (
                ("genres", "belong_to", "genre"),
                ("directors", "directed_by", "director"),
                ("actors", "acted_by", "actor"),
                ("tags", "described_as", "tag"),
                ("regions", "produced_by", "region"),
            ):
                for value in _as_list(rec.get(field_name)):
                    triples.append(Triple(head, rel, registry.add(kind, str(value).strip())))
            continue

        brand = rec.get("brand")
        if isinstance(brand, str) and brand.strip():
            triples.append(Triple(head, "produced_by", registry.add("brand", brand.strip())))
        for cat in _as_list(rec.get("categories")):
            if str(cat).strip():
                triples.append(Triple(head, "belong_to", registry.add("category", str(cat).strip())))
        for tok in title_features(rec):
            triples.append(Triple(head, "title_sim", registry.add("title_feature", tok)))
        for rel in DIFF_FAMILIES:
            for other in _related(rec, rel):
                tail = registry.get("product", other)
                if tail is None:
                    tail = registry.add("related_product", other)
                triples.append(Triple(head, rel, tail))
    return triples


def ingest_image_features(labels, registry: EntityRegistry, min_conf: float = 0.5, top_k: int = 5) -> list[Triple]:
    """image_sim triples from precomputed (item, label, confidence) rows.

    Per item, labels strictly above ``min_conf`` are kept, best ``top_k`` first.
    Rows for items that are not registered products are ignored.
    """
    per_item: dict[str, dict[str, float]] = defaultdict(dict)
    with open(labels, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 3:
                raise GraphError(f"{labels}:{lineno}: expected item, label, confidence")
            item, label, conf = cols[0].strip(), cols[1].strip(), cols[2].strip()
            try:
                c = float(conf)
            except ValueError:
                raise GraphError(f"{labels}:{lineno}: bad confidence {conf!r}") from None
            if not 0.0 <= c <= 1.0:
                raise GraphError(f"{labels}:{lineno}: confidence {c} outside [0, 1]")
            labels_for_item = per_item[item]
            labels_for_item[label] = max(c, labels_for_item.get(label, -1.0))

    triples = []
    for item, scored in per_item.items():
        head = registry.get("product", item)
        if head is None:
            continue
        kept = sorted(((-c, lab) for lab, c in scored.items() if c > min_conf))[:top_k]
        for _, lab in kept:
            triples.append(Triple(head, "image_sim", registry.add("image_feature", lab)))
    return triples


def split_relations(triples: list[Triple], product_domain: set[int]) -> list[Triple]:
    """Rename co-purchase/co-view triples whose tail leaves the product domain to ``*_diff``."""
    out = []
    for t in triples:
        if t.rel in DIFF_FAMILIES and t.tail not in product_domain:
            out.append(Triple(t.head, t.rel + "_diff", t.tail))
        else:
            out.append(t)
    return out


_MERGE_FAMILIES = {
    "also_viewed": ("viewed_bought", "viewed"),
    "also_bought": ("viewed_bought", "bought"),
    "also_viewed_diff": ("bought_viewed_diff", "viewed"),
    "also_bought_diff": ("bought_viewed_diff", "bought"),
}


def _merge_key(t: Triple) -> tuple[str, int, int]:
    merged = _MERGE_FAMILIES[t.rel][0]
    if merged == "viewed_bought":
        return merged, min(t.head, t.tail), max(t.head, t.tail)
    return merged, t.head, t.tail


def _overlaps(triples: list[Triple]) -> tuple[dict, set]:
    marks: dict[tuple[str, int, int], set[str]] = defaultdict(set)
    for t in triples:
        if t.rel in _MERGE_FAMILIES:
            marks[_merge_key(t)].add(_MERGE_FAMILIES[t.rel][1])
    return marks, {k for k, v in marks.items() if len(v) == 2}


def merge_duplicate_edges(triples: list[Triple]) -> list[Triple]:
    """Collapse pairs linked by both also_viewed and also_bought into one viewed_bought edge.

    Product pairs are matched unordered and stored with the lower index as head; the
    ``_diff`` pair (product -> related_product) becomes bought_viewed_diff.
    """
    _, overlap = _overlaps(triples)
    out, emitted = [], set()
    for t in triples:
        if t.rel in _MERGE_FAMILIES:
            key = _merge_key(t)
            if key in overlap:
                if key not in emitted:
                    emitted.add(key)
                    out.append(Triple(key[1], key[0], key[2]))
                continue
        out.append(t)
    return out


def merge_report(triples: list[Triple]) -> dict:
    """Overlap statistics of the co-view/co-purchase families before merging."""
    marks, overlap = _overlaps(triples)
    report = {}
    for merged in ("viewed_bought", "bought_viewed_diff"):
        viewed = [k for k, v in marks.items() if k[0] == merged and "viewed" in v]
        bought = [k for k, v in marks.items() if k[0] == merged and "bought" in v]
        both = [k for k in overlap if k[0] == merged]
        report[merged] = {
            "pairs_viewed": len(viewed),
            "pairs_bought": len(bought),
            "pairs_both": len(both),
            "viewed_also_bought_pct": 100.0 * len(both) / len(viewed) if viewed else 0.0,
            "bought_also_viewed_pct": 100.0 * len(both) / len(bought) if bought else 0.0,
        }
    report["edges_removed"] = len(triples) - len(merge_duplicate_edges(triples))
    return report


def add_purchases(sessions, registry: EntityRegistry) -> list[Triple]:
    """user -purchase-> item for every item in the given (training) sessions."""
    out, seen = [], set()
    for s in sessions:
        user = registry.add("user", s.user)
        for item in s.items:
            t = Triple(user, "purchase", registry.item(item))
            if t not in seen:
                seen.add(t)
                out.append(t)
    return out


def add_cooccur(sessions, registry: EntityRegistry) -> list[Triple]:
    """co_occur edges between adjacent items of the given (training) sessions."""
    out, seen = [], set()
    for s in sessions:
        ids = [registry.item(i) for i in s.items]
        for a, b in zip(ids, ids[1:]):
            if a == b:
                continue
            t = Triple(a, "co_occur", b)
            if t not in seen:
                seen.add(t)
                out.append(t)
    return out


class KnowledgeGraph:
    """Frozen typed multigraph with materialized inverse edges.

    ``adjacency[e]`` lists ``(Relation, entity)`` pairs sorted by (relation name, entity).
    Relation codes used by the numeric side: forward relation ``i`` is code ``i`` and its
    inverse is ``i + n_relations``.
    """

    def __init__(self, registry: EntityRegistry, triples: list[Triple]):
        self.registry = registry
        self.triples: tuple[Triple, ...] = tuple(triples)
        self.relations: tuple[str, ...] = tuple(sorted({t.rel for t in triples}))
        self._rel_id = {r: i for i, r in enumerate(self.relations)}
        n = len(registry)
        adj: list[list[tuple[Relation, int]]] = [[] for _ in range(n)]
        for h, r, t in self.triples:
            adj[h].append((Relation(r), t))
            adj[t].append((Relation(r, True), h))
        self.adjacency: tuple[tuple[tuple[Relation, int], ...], ...] = tuple(
            tuple(sorted(a, key=lambda x: (str(x[0]), x[1]))) for a in adj
        )
        self._edges = {(h, Relation(r), t) for h, r, t in self.triples}
        self._edges |= {(t, Relation(r, True), h) for h, r, t in self.triples}
        self.triple_count = Counter(rel for (_, rel, _) in self._edges)
        self._codes = [
            np.array([self.rel_code(r) for r, _ in a], dtype=np.int64) for a in self.adjacency
        ]
        self._tails = [np.array([e for _, e in a], dtype=np.int64) for a in self.adjacency]

    @property
    def n_entities(self) -> int:
        return len(self.registry)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def kind(self, e: int) -> str:
        return self.registry.kinds[e]

    def is_item(self, e: int) -> bool:
        return self.registry.kinds[e] in ITEM_KINDS

    def items(self) -> list[int]:
        return [i for i, k in enumerate(self.registry.kinds) if k in ITEM_KINDS]

    def rel_code(self, rel: Relation) -> int:
        base = self._rel_id[rel.name]
        return base + self.n_relations if rel.inverse else base

    def relation_of(self, code: int) -> Relation:
        if code >= self.n_relations:
            return Relation(self.relations[code - self.n_relations], True)
        return Relation(self.relations[code])

    def neighbors(self, e: int) -> tuple[tuple[Relation, int], ...]:
        return self.adjacency[e]

    def edge_arrays(self, e: int) -> tuple[np.ndarray, np.ndarray]:
        return self._codes[e], self._tails[e]

    def has_edge(self, head: int, rel: Relation, tail: int) -> bool:
        return (head, rel, tail) in self._edges

    def n_directed_edges(self) -> int:
        return len(self._edges)

    def stats(self) -> dict:
        rel_counts = Counter(t.rel for t in self.triples)
        kind_counts = Counter(self.registry.kinds)
        return {
            "n_entities": self.n_entities,
            "n_triples": len(self.triples),
            "n_directed_edges": self.n_directed_edges(),
            "relations": {r: rel_counts[r] for r in sorted(rel_counts)},
            "entities": {k: kind_counts[k] for k in ENTITY_KINDS if kind_counts[k]},
        }

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "entities.tsv", "w", encoding="utf-8") as fh:
            for i, (kind, name) in enumerate(zip(self.registry.kinds, self.registry.names)):
                fh.write(f"{i}\t{kind}\t{name}\n")
        with open(directory / "triples.tsv", "w", encoding="utf-8") as fh:
            for h, r, t in self.triples:
                fh.write(f"{h}\t{r}\t{t}\n")
        with open(directory / "stats.json", "w", encoding="utf-8") as fh:
            json.dump(self.stats(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory) -> "KnowledgeGraph":
        directory = Path(directory)
        registry = EntityRegistry()
        with open(directory / "entities.tsv", encoding="utf-8") as fh:
            for line in fh:
                idx, kind, name = line.rstrip("\n").split("\t", 2)
                if registry.add(kind, name) != int(idx):
                    raise GraphError(f"entities.tsv out of order at index {idx}")
        triples = []
        with open(directory / "triples.tsv", encoding="utf-8") as fh:
            for line in fh:
                h, r, t = line.rstrip("\n").split("\t")
                triples.append(Triple(int(h), r, int(t)))
        return finalize(triples, registry)


def finalize(triples: list[Triple], registry: EntityRegistry) -> KnowledgeGraph:
    """Validate, deduplicate and freeze ``triples`` into an adjacency-indexed graph."""
    n = len(registry)
    unique = set()
    for t in triples:
        if not (0 <= t.head < n and 0 <= t.tail < n):
            raise GraphError(f"dangling entity id in {t}")
        sig = (registry.kinds[t.head], registry.kinds[t.tail])
        allowed = SCHEMA.get(t.rel)
        if allowed is None:
            raise GraphError(f"unknown relation {t.rel!r}")
        if sig not in allowed:
            raise GraphError(f"schema violation: {registry.key(t.head)} -{t.rel}-> {registry.key(t.tail)}")
        unique.add(Triple(int(t.head), t.rel, int(t.tail)))
    return KnowledgeGraph(registry, sorted(unique))
