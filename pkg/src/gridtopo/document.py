"""NetworkDocument JSON format, MATPOWER import and the seeded candidate overlay."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from gridtopo.dynamics import StabilityObjective
from gridtopo.network import NetworkError, PowerNetwork, build_network

SCHEMA_VERSION = "1.0"

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "nodes", "edges"],
    "additionalProperties": True,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "reference": {"type": "integer"},
        "nodes": {
            "type": "array",
            "minItems": 2,
            "items": {
                "type": "object",
                "required": ["id"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer"},
                    "inertia": {"type": "number"},
                    "damping": {"type": "number"},
                    "kind": {"enum": ["machine", "zero_injection"]},
                },
            },
        },
        "edges": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["from", "to", "susceptance"],
                "additionalProperties": False,
                "properties": {
                    "from": {"type": "integer"},
                    "to": {"type": "integer"},
                    "susceptance": {"type": "number"},
                    "existing": {"type": "boolean"},
                },
            },
        },
        "objective": {
            "oneOf": [
                {
                    "type": "object",
                    "required": ["preset"],
                    "additionalProperties": False,
                    "properties": {"preset": {"const": "coherence"}},
                },
                {
                    "type": "object",
                    "required": ["w"],
                    "additionalProperties": False,
                    "properties": {
                        "w": {"type": "array", "items": {
                            "type": "object", "required": ["i", "j", "weight"], "additionalProperties": False,
                            "properties": {"i": {"type": "integer"}, "j": {"type": "integer"},
                                           "weight": {"type": "number", "minimum": 0}}}},
                        "s": {"type": "array", "items": {
                            "type": "object", "required": ["i", "weight"], "additionalProperties": False,
                            "properties": {"i": {"type": "integer"},
                                           "weight": {"type": "number", "minimum": 0}}}},
                    },
                },
            ],
        },
    },
}


class DocumentError(ValueError):
    """Parse, schema or validation failure with a located message."""


@dataclass(frozen=True)
class NetworkDocument:
    network: PowerNetwork
    objective: StabilityObjective
    name: str = ""


def _locate(err: jsonschema.ValidationError, data) -> str:
    path = list(err.absolute_path)
    if len(path) >= 2 and path[0] == "edges" and isinstance(path[1], int):
        e = data["edges"][path[1]]
        tag = f"edge {path[1]} ({e.get('from', '?')}-{e.get('to', '?')})"
    elif len(path) >= 2 and path[0] == "nodes" and isinstance(path[1], int):
        tag = f"node {path[1]} (id {data['nodes'][path[1]].get('id', '?')})"
    else:
        tag = "/".join(map(str, path)) or "document"
    return f"{tag}: {err.message}"


def validate(data: dict) -> None:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(data),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise DocumentError("schema error: " + "; ".join(_locate(e, data) for e in errors))


def parse_document(data: dict) -> NetworkDocument:
    validate(data)
    try:
        net = build_network(data["nodes"], data["edges"], data.get("reference"))
    except NetworkError as exc:
        raise DocumentError(str(exc)) from exc
    obj = data.get("objective", {"preset": "coherence"})
    try:
        if "preset" in obj:
            objective = StabilityObjective.coherence(net)
        else:
            objective = StabilityObjective.from_weights(
                net, [(w["i"], w["j"], w["weight"]) for w in obj["w"]],
                [(s["i"], s["weight"]) for s in obj.get("s", [])])
    except (ValueError, NetworkError) as exc:
        raise DocumentError(f"objective: {exc}") from exc
    return NetworkDocument(net, objective, data.get("name", ""))


def loads(text: str) -> NetworkDocument:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocumentError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_document(data)


def load(path) -> NetworkDocument:
    return loads(Path(path).read_text())


def to_dict(doc: NetworkDocument) -> dict:
    """Canonical document: reference first, edges ordered by dense endpoint pair."""
    net = doc.network
    out = {"schema_version": SCHEMA_VERSION}
    if doc.name:
        out["name"] = doc.name
    out["reference"] = net.reference
    out["nodes"] = [{"id": nd.id, "inertia": nd.inertia, "damping": nd.damping, "kind": nd.kind}
                    for nd in net.nodes]
    out["edges"] = []
    for k, e in enumerate(net.edges):
        u, v = net.edge_ids(k)
        out["edges"].append({"from": u, "to": v, "susceptance": e.susceptance, "existing": e.existing})
    obj = doc.objective
    if obj.preset == "coherence":
        out["objective"] = {"preset": "coherence"}
    else:
        ids = net.ids
        w = [{"i": ids[a], "j": ids[b], "weight": float(-obj.W[a, b])}
             for a in range(len(ids)) for b in range(a + 1, len(ids)) if -obj.W[a, b] > 0]
        s = [{"i": ids[a], "weight": float(obj.S[a])} for a in range(len(ids)) if obj.S[a] > 0]
        out["objective"] = {"w": w, "s": s}
    return out


def dumps(doc: NetworkDocument) -> str:
    return json.dumps(to_dict(doc), indent=2)


def _matrix(text: str, name: str) -> np.ndarray:
    m = re.search(rf"mpc\.{name}\s*=\s*\[(.*?)\];", text, re.S)
    if not m:
        raise DocumentError(f"MATPOWER case has no mpc.{name} block")
    rows = []
    for line in m.group(1).splitlines():
        line = line.split("%")[0].strip().rstrip(";").strip()
        if line:
            rows.append([float(v) for v in line.split()])
    return np.array(rows)


def from_matpower(text: str, *, generator_inertia: float = 1.0, load_inertia: float = 1e-4,
                  damping: float = 0.025, name: str = "") -> dict:
    """NetworkDocument dict from MATPOWER case text.

    Every bus becomes a machine node; buses without generators get ``load_inertia``.
    Parallel branches are merged by adding susceptances; every branch is marked existing.
    The slack bus (type 3) becomes the reference.
    """
    bus = _matrix(text, "bus")
    gen = _matrix(text, "gen")
    branch = _matrix(text, "branch")
    gen_buses = {int(g[0]) for g in gen}
    ref = [int(b[0]) for b in bus if int(b[1]) == 3]
    nodes = [{"id": int(b[0]), "inertia": generator_inertia if int(b[0]) in gen_buses else load_inertia,
              "damping": damping, "kind": "machine"} for b in bus]
    merged: dict[tuple[int, int], float] = {}
    for br in branch:
        if br.shape[0] > 10 and br[10] == 0:
            continue  # out of service
        u, v = sorted((int(br[0]), int(br[1])))
        merged[(u, v)] = merged.get((u, v), 0.0) + 1.0 / br[3]
    edges = [{"from": u, "to": v, "susceptance": b, "existing": True} for (u, v), b in sorted(merged.items())]
    doc = {"schema_version": SCHEMA_VERSION, "name": name, "nodes": nodes, "edges": edges,
           "objective": {"preset": "coherence"}}
    if ref:
        doc["reference"] = ref[0]
    return doc


def case39(**kw) -> dict:
    text = resources.files("gridtopo").joinpath("data/case39.m").read_text()
    return from_matpower(text, name="case39", **kw)


def add_random_candidates(doc: dict, count: int = 22, seed: int = 0,
                          susceptance: Optional[float] = None) -> dict:
    """Copy of ``doc`` with ``count`` new candidate lines between unconnected bus pairs.

    Pairs are drawn uniformly without replacement. Each new line takes ``susceptance``
    or, if omitted, the susceptance of a uniformly drawn existing line. The seed is
    stored in the document name for provenance.
    """
    rng = np.random.default_rng(seed)
    ids = sorted(nd["id"] for nd in doc["nodes"])
    taken = {tuple(sorted((e["from"], e["to"]))) for e in doc["edges"]}
    free = [(u, v) for a, u in enumerate(ids) for v in ids[a + 1:] if (u, v) not in taken]
    if count > len(free):
        raise DocumentError(f"only {len(free)} unconnected pairs available")
    picks = rng.choice(len(free), size=count, replace=False)
    pool = [e["susceptance"] for e in doc["edges"]]
    out = json.loads(json.dumps(doc))
    for p in sorted(picks):
        u, v = free[p]
        b = susceptance if susceptance is not None else float(pool[rng.integers(len(pool))])
        out["edges"].append({"from": u, "to": v, "susceptance": b, "existing": False})
    out["name"] = f"{doc.get('name', 'network')}+{count}@seed{seed}"
    return out
