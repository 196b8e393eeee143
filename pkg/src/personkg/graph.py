"""Property graph built from person records, with merging and Cypher/JSONL export."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import httpx

from .schema import PersonRecord, SchemaDefinition, builtin_schema, is_blank

log = logging.getLogger(__name__)

FALLBACK_PREDICATE = "relatedTo"
NODE_LABELS = ("Person", "Achievement", "Work", "Position", "Organization", "Event")

# Person node attribute -> record attribute. "era" has no vocabulary predicate
# but is kept as a plain property.
PERSON_PROPERTIES = (
    ("hasName", "name"),
    ("hasAlias", "alias"),
    ("hasGender", "gender"),
    ("hasEthnic", "ethnicity"),
    ("era", "era"),
    ("hasBirthPlace", "birthplace"),
    ("hasBirthDate", "birth_date"),
    ("hasDeathDate", "death_date"),
    ("hasFiled", "field_domain"),
)

# raw relation string -> (predicate, reversed). reversed edges point target -> subject.
RELATION_TABLE: dict[str, tuple[str, bool]] = {}
for _words, _pred, _rev in (
    (("配偶", "妻", "夫", "妻子", "丈夫"), "hasSpouse", False),
    (("父亲", "母亲", "父", "母"), "hasParent", False),
    (("学生", "弟子"), "hasStudent", False),
    (("同僚", "同事"), "hasColleague", False),
    (("上级", "上司"), "hasSupervisor", False),
    (("下级", "下属", "幕僚"), "hasSubordinate", False),
    (("导师", "老师"), "hasStudent", True),
):
    for _w in _words:
        RELATION_TABLE[_w] = (_pred, _rev)

_WORK_SPLIT = re.compile(r"[、；;，,]")


def _lookup(raw: str) -> tuple[str, bool]:
    return RELATION_TABLE.get(raw.strip(), (FALLBACK_PREDICATE, False))


def map_relation_string(raw: str) -> str:
    """Vocabulary predicate for a free-text relation; unmatched strings map to relatedTo."""
    return _lookup(raw)[0]


def canonical_name(name: str) -> str:
    return " ".join(name.split())


def node_id(label: str, name: str) -> str:
    return hashlib.sha256(f"{label}\x00{canonical_name(name)}".encode("utf-8")).hexdigest()[:16]


@dataclass
class GraphNode:
    node_id: str
    label: str
    canonical_name: str
    properties: dict[str, str] = field(default_factory=dict)

    @classmethod
    def make(cls, label: str, name: str, properties: dict[str, str] | None = None) -> "GraphNode":
        name = canonical_name(name)
        if not name:
            raise ValueError("node name must be non-empty")
        return cls(node_id(label, name), label, name, dict(properties or {}))

    def sort_key(self):
        return (self.label, self.canonical_name)


@dataclass
class GraphEdge:
    from_id: str
    to_id: str
    predicate: str
    properties: dict[str, str] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.from_id, self.to_id, self.predicate)


@dataclass
class Conflict:
    node_id: str
    property: str
    kept: str
    discarded: str
    source_record: str


@dataclass
class GraphDocument:
    nodes: list[GraphNode] = field(default_factory=list)
    edges: list[GraphEdge] = field(default_factory=list)
    conflicts: list[Conflict] = field(default_factory=list)
    source: str = field(default="", compare=False)

    def node_map(self) -> dict[str, GraphNode]:
        return {n.node_id: n for n in self.nodes}

    def sorted_nodes(self) -> list[GraphNode]:
        return sorted(self.nodes, key=GraphNode.sort_key)

    def sorted_edges(self) -> list[GraphEdge]:
        nodes = self.node_map()

        def key(e: GraphEdge):
            a, b = nodes[e.from_id], nodes[e.to_id]
            return (a.label, a.canonical_name, e.predicate, b.label, b.canonical_name)

        return sorted(self.edges, key=key)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GraphDocument):
            return NotImplemented
        return (self.sorted_nodes() == other.sorted_nodes()
                and sorted(self.edges, key=lambda e: e.key) == sorted(other.edges, key=lambda e: e.key)
                and self.conflicts == other.conflicts)

    def check(self) -> None:
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        known = set(ids)
        for e in self.edges:
            if e.from_id not in known or e.to_id not in known:
                raise ValueError(f"dangling edge {e.key}")


class _Builder:
    def __init__(self, source: str):
        self.doc = GraphDocument(source=source)
        self._nodes: dict[str, GraphNode] = {}
        self._edges: dict[tuple, GraphEdge] = {}

    def node(self, label: str, name: str, props: dict[str, str]) -> GraphNode:
        new = GraphNode.make(label, name, props)
        existing = self._nodes.get(new.node_id)
        if existing is None:
            self._nodes[new.node_id] = new
            self.doc.nodes.append(new)
            return new
        _absorb(existing, new.properties, self.doc.conflicts, self.doc.source)
        return existing

    def edge(self, a: GraphNode, b: GraphNode, predicate: str, props: dict[str, str]) -> None:
        e = GraphEdge(a.node_id, b.node_id, predicate, props)
        if e.key in self._edges:
            for k, v in props.items():
                self._edges[e.key].properties.setdefault(k, v)
            return
        self._edges[e.key] = e
        self.doc.edges.append(e)


def _absorb(node: GraphNode, props: dict[str, str], conflicts: list[Conflict], source: str) -> None:
    for k, v in props.items():
        if k not in node.properties:
            node.properties[k] = v
        elif node.properties[k] != v:
            conflicts.append(Conflict(node.node_id, k, node.properties[k], v, source))


def _present(**values: str) -> dict[str, str]:
    return {k: v.strip() for k, v in values.items() if not is_blank(v)}


def record_to_graph(record: PersonRecord, schema: SchemaDefinition | None = None) -> GraphDocument:
    """Person node plus achievement, work, position and related-person nodes.

    Blank or 未知 values produce neither properties nor nodes.
    """
    schema = schema or builtin_schema()
    b = _Builder(source=canonical_name(record.name))
    person_props = {prop: getattr(record, attr).strip() for prop, attr in PERSON_PROPERTIES
                    if not is_blank(getattr(record, attr))}
    person = b.node("Person", record.name, person_props)

    for item in record.achievements:
        props = _present(influence=item.influence, location=item.location, time=item.time)
        if not props:
            continue
        name = props.get("influence") or props.get("location") or props["time"]
        b.edge(person, b.node("Achievement", name, props), "ParticipateIn", {})

    if not is_blank(record.works):
        for title in _WORK_SPLIT.split(record.works):
            if not is_blank(title):
                b.edge(person, b.node("Work", title, {}), "Create", {})

    for item in record.positions:
        if is_blank(item.title):
            continue
        props = _present(start_time=item.start_time)
        b.edge(person, b.node("Position", item.title, props), "workFor", props)

    for rel in tuple(record.social_relations) + tuple(record.family_relations):
        if is_blank(rel.person) or canonical_name(rel.person) == person.canonical_name:
            continue
        predicate, reverse = _lookup(rel.relation)
        other = b.node("Person", rel.person, {})
        props = _present(relation=rel.relation)
        if reverse:
            b.edge(other, person, predicate, props)
        else:
            b.edge(person, other, predicate, props)
    return b.doc


def merge_graphs(docs: Sequence[GraphDocument]) -> GraphDocument:
    """Fold documents into one: nodes merge on (label, canonical name), the first
    value of each property wins and every disagreement is logged, edges
    deduplicate on (from, to, predicate).
    """
    out = GraphDocument()
    nodes: dict[str, GraphNode] = {}
    edges: dict[tuple, GraphEdge] = {}
    for doc in docs:
        out.conflicts.extend(doc.conflicts)
        for n in doc.nodes:
            if n.node_id not in nodes:
                copy = GraphNode(n.node_id, n.label, n.canonical_name, dict(n.properties))
                nodes[n.node_id] = copy
                out.nodes.append(copy)
            else:
                _absorb(nodes[n.node_id], n.properties, out.conflicts, doc.source)
        for e in doc.edges:
            if e.key not in edges:
                copy = GraphEdge(e.from_id, e.to_id, e.predicate, dict(e.properties))
                edges[e.key] = copy
                out.edges.append(copy)
            else:
                for k, v in e.properties.items():
                    edges[e.key].properties.setdefault(k, v)
    if len(docs) == 1:
        out.source = docs[0].source
    return out


# --- export ----------------------------------------------------------------


def cypher_string(value: str) -> str:
    escaped = (value.replace("\\", "\\\\").replace('"', '\\"')
               .replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t"))
    return f'"{escaped}"'


def _match(var: str, node: GraphNode) -> str:
    return f"({var}:{node.label} {{name: {cypher_string(node.canonical_name)}}})"


def _set_clause(var: str, props: dict[str, str]) -> str:
    return ", ".join(f"{var}.`{k}` = {cypher_string(v)}" for k, v in sorted(props.items()))


def export_cypher(graph: GraphDocument) -> str:
    """MERGE-based import script; nodes keyed on (label, name), so re-running it is idempotent."""
    lines = [f"// person knowledge graph: {len(graph.nodes)} nodes, {len(graph.edges)} edges"]
    for n in graph.sorted_nodes():
        lines.append(f"MERGE (:{n.label} {{name: {cypher_string(n.canonical_name)}}});")
        if n.properties:
            lines.append(f"MATCH {_match('n', n)} SET {_set_clause('n', n.properties)};")
    nodes = graph.node_map()
    for e in graph.sorted_edges():
        stmt = f"MATCH {_match('a', nodes[e.from_id])}, {_match('b', nodes[e.to_id])} MERGE (a)-[r:{e.predicate}]->(b)"
        if e.properties:
            stmt += f" SET {_set_clause('r', e.properties)}"
        lines.append(stmt + ";")
    return "\n".join(lines) + "\n"


def graph_to_lines(graph: GraphDocument) -> list[str]:
    rows = []
    for n in graph.sorted_nodes():
        rows.append({"kind": "node", "node_id": n.node_id, "label": n.label, "name": n.canonical_name,
                     "properties": dict(sorted(n.properties.items()))})
    for e in graph.sorted_edges():
        rows.append({"kind": "edge", "from": e.from_id, "to": e.to_id, "predicate": e.predicate,
                     "properties": dict(sorted(e.properties.items()))})
    for c in graph.conflicts:
        rows.append({"kind": "conflict", "node_id": c.node_id, "property": c.property, "kept": c.kept,
                     "discarded": c.discarded, "source_record": c.source_record})
    return [json.dumps(r, ensure_ascii=False) for r in rows]


def export_jsonl(graph: GraphDocument, path: str | Path) -> Path:
    path = Path(path)
    lines = graph_to_lines(graph)
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def import_jsonl(path: str | Path) -> GraphDocument:
    doc = GraphDocument()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        kind = row["kind"]
        if kind == "node":
            doc.nodes.append(GraphNode(row["node_id"], row["label"], row["name"], row["properties"]))
        elif kind == "edge":
            doc.edges.append(GraphEdge(row["from"], row["to"], row["predicate"], row["properties"]))
        elif kind == "conflict":
            doc.conflicts.append(Conflict(row["node_id"], row["property"], row["kept"], row["discarded"],
                                          row["source_record"]))
        else:
            raise ValueError(f"unknown line kind {kind!r}")
    doc.check()
    return doc


def build_graph(records: Iterable[PersonRecord], schema: SchemaDefinition | None = None) -> GraphDocument:
    return merge_graphs([record_to_graph(r, schema) for r in records])


def cypher_statements(script: str) -> list[str]:
    return [line.rstrip(";") for line in script.splitlines() if line.strip() and not line.startswith("//")]


def push_cypher(script: str, base_url: str, database: str = "neo4j", user_env: str = "NEO4J_USER",
                password_env: str = "NEO4J_PASSWORD", transport: httpx.BaseTransport | None = None,
                timeout: float = 60.0) -> int:
    """Run the script through a Neo4j-style HTTP transactional endpoint in one transaction."""
    statements = cypher_statements(script)
    user, password = os.environ.get(user_env), os.environ.get(password_env)
    auth = (user, password) if user and password else None
    url = f"{base_url.rstrip('/')}/db/{database}/tx/commit"
    with httpx.Client(timeout=timeout, transport=transport) as client:
        resp = client.post(url, json={"statements": [{"statement": s} for s in statements]}, auth=auth)
    resp.raise_for_status()
    errors = resp.json().get("errors") or []
    if errors:
        raise RuntimeError(f"graph import failed: {errors[0]}")
    return len(statements)
