"""Temporal, feature and cross-temporal explanations of a fitted model.

All functions are pure and work on plain arrays: contributions ``C`` of
shape ``[B,T,F]`` (or ``[T,F]`` for one patient), temporal weights
``alpha`` of shape ``[B,T]`` and aggregated attention ``A`` of shape
``[B,T,T]`` indexed ``[source t, target t']``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

PREDICTION = "prediction"


class OrderingError(ValueError):
    pass


def aggregate_attention(per_layer_head) -> np.ndarray:
    """Mean over the layer and head axes of a ``[B,L,H,T,T]`` stack."""
    a = np.asarray(per_layer_head, dtype=np.float64)
    if a.ndim != 5:
        raise ValueError(f"expected [B,L,H,T,T] attention, got shape {a.shape}")
    if a.shape[1] == 0 or a.shape[2] == 0:
        raise ValueError("attention stack has an empty layer or head axis")
    return a.sum(axis=(1, 2)) / (a.shape[1] * a.shape[2])


def chained_influence(C, A, t: int, i: int, t_later: int, j: int,
                      reduce: Optional[str] = None, causal: bool = True):
    """``C[t,i] * A[t,t_later] * C[t_later,j]`` per patient.

    With ``reduce="mean"`` the per-patient products are averaged, which
    keeps each patient's interaction intact before pooling.
    """
    C = np.asarray(C, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if causal and t >= t_later:
        raise OrderingError(f"influence must flow forward in time, got t={t} -> t'={t_later}")
    T, F = C.shape[-2:]
    if not (0 <= t < T and 0 <= t_later < T and 0 <= i < F and 0 <= j < F):
        raise IndexError(f"indices ({t},{i};{t_later},{j}) out of range for T={T}, F={F}")
    value = C[..., t, i] * A[..., t, t_later] * C[..., t_later, j]
    if reduce == "mean":
        return float(np.mean(value))
    return value


@dataclass
class TemporalProfile:
    mean_alpha_all: np.ndarray
    mean_alpha_positive: Optional[np.ndarray]
    mean_alpha_negative: Optional[np.ndarray]
    n_all: int
    n_positive: int
    n_negative: int
    crossings: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def _crossings(diff: np.ndarray) -> list:
    out, prev = [], None
    for k, d in enumerate(diff):
        if d == 0:
            continue
        if prev is not None and np.sign(d) != np.sign(diff[prev]):
            out.append((prev, k))
        prev = k
    return out


def temporal_profile(alpha, labels) -> TemporalProfile:
    """Mean temporal weights overall and per outcome, plus crossing points.

    A crossing ``(k, m)`` means the positive-minus-negative gap changes sign
    between time steps ``k`` and ``m`` (exact ties are skipped).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if alpha.ndim != 2 or alpha.shape[0] == 0:
        raise ValueError(f"need a non-empty [B,T] alpha array, got {alpha.shape}")
    if labels.shape != (alpha.shape[0],):
        raise ValueError("labels must have one entry per patient")
    pos, neg = labels == 1, labels == 0
    warnings = []
    mean_pos = alpha[pos].mean(axis=0) if pos.any() else None
    mean_neg = alpha[neg].mean(axis=0) if neg.any() else None
    if mean_pos is None:
        warnings.append("positive stratum empty")
    if mean_neg is None:
        warnings.append("negative stratum empty")
    crossings = []
    if mean_pos is not None and mean_neg is not None:
        crossings = _crossings(mean_pos - mean_neg)
    return TemporalProfile(alpha.mean(axis=0), mean_pos, mean_neg, len(labels),
                           int(pos.sum()), int(neg.sum()), crossings, warnings)


@dataclass
class FeatureImportance:
    ranking: list
    aggregation: str = "mean_abs_contribution"

    @property
    def names(self) -> list:
        return [name for name, _ in self.ranking]

    @property
    def scores(self) -> np.ndarray:
        return np.array([score for _, score in self.ranking])


def feature_importance(C, feature_names: Sequence[str]) -> FeatureImportance:
    C = np.asarray(C, dtype=np.float64)
    if C.ndim == 2:
        C = C[None]
    if C.shape[0] == 0:
        raise ValueError("feature importance needs at least one patient")
    if C.shape[-1] != len(feature_names):
        raise ValueError(f"{len(feature_names)} names for {C.shape[-1]} features")
    scores = np.abs(C).mean(axis=(0, 1))
    ranking = sorted(zip(feature_names, (float(s) for s in scores)),
                     key=lambda item: (-item[1], item[0]))
    return FeatureImportance(ranking)


@dataclass(frozen=True)
class InfluenceQuery:
    """Root is ``"prediction"`` or ``"<feature>@t<k>"``; scope is
    ``"cohort"`` or ``"patient:<id>"``."""

    root: str = PREDICTION
    depth: int = 3
    fan_out: int = 3
    scope: str = "cohort"

    def __post_init__(self):
        if self.depth < 1 or self.fan_out < 1:
            raise ValueError("depth and fan_out must be >= 1")
        if self.scope != "cohort" and not self.scope.startswith("patient:"):
            raise ValueError(f"scope must be 'cohort' or 'patient:<id>', got {self.scope!r}")
        if self.root != PREDICTION:
            parse_node_id(self.root)

    @property
    def patient_id(self) -> Optional[str]:
        return self.scope.split(":", 1)[1] if self.scope != "cohort" else None

    def to_dict(self) -> dict:
        return {"root": self.root, "depth": self.depth, "fan_out": self.fan_out,
                "scope": self.scope}


def node_id(feature: str, time: int) -> str:
    return f"{feature}@t{time}"


def parse_node_id(text: str) -> tuple:
    feature, sep, time = text.rpartition("@t")
    if not sep or not feature or not time.isdigit():
        raise ValueError(f"node must look like '<feature>@t<k>', got {text!r}")
    return feature, int(time)


@dataclass(frozen=True)
class Node:
    feature: str
    time: Optional[int] = None

    @property
    def id(self) -> str:
        return PREDICTION if self.time is None else node_id(self.feature, self.time)


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    weight: float


@dataclass
class InfluenceGraph:
    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)
    query: Optional[InfluenceQuery] = None
    truncated: bool = False

    def node_ids(self) -> list:
        return [n.id for n in self.nodes]

    def is_acyclic(self) -> bool:
        order = {n.id: n for n in self.nodes}
        children = {nid: [] for nid in order}
        for e in self.edges:
            children[e.source].append(e.target)
        state = {}

        def visit(nid):
            state[nid] = 1
            for nxt in children[nid]:
                if state.get(nxt) == 1 or (nxt not in state and not visit(nxt)):
                    return False
            state[nid] = 2
            return True

        return all(state.get(nid) == 2 or visit(nid) for nid in order)

    def is_time_monotone(self) -> bool:
        times = {n.id: n.time for n in self.nodes}
        for e in self.edges:
            src, dst = times[e.source], times[e.target]
            if src is None or (dst is not None and dst <= src):
                return False
        return True


def _resolve_scope(C, A, scope: str, patient_ids):
    C = np.asarray(C, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if C.ndim == 2:
        C, A = C[None], A[None]
    if scope == "cohort":
        return C, A
    pid = scope.split(":", 1)[1]
    ids = [str(p) for p in (patient_ids if patient_ids is not None else range(C.shape[0]))]
    if pid not in ids:
        raise KeyError(f"unknown patient id {pid!r}")
    k = ids.index(pid)
    return C[k:k + 1], A[k:k + 1]


def _top_k(values: np.ndarray, names: Sequence[str], time: int, k: int) -> list:
    order = sorted(range(len(names)), key=lambda i: (-abs(values[i]), names[i], time))
    return [(i, float(values[i])) for i in order[:k]]


def build_influence_hierarchy(query: InfluenceQuery, C, A, feature_names: Sequence[str],
                              patient_ids: Optional[Sequence] = None) -> InfluenceGraph:
    """Trace the strongest influences backward in time from the query root.

    From the prediction, the first level holds the ``fan_out`` features at
    the last time step with the largest ``|C|``; every later level adds, for
    each node ``(t', j)``, the ``fan_out`` sources ``(t'-1, i)`` with the
    largest ``|I(t'-1, i; t', j)|``.  Cohort scope averages per-patient
    values.  Edge weights keep their sign.
    """
    C, A = _resolve_scope(C, A, query.scope, patient_ids)
    names = list(feature_names)
    T, F = C.shape[1:]
    if len(names) != F:
        raise ValueError(f"{len(names)} names for {F} features")
    graph = InfluenceGraph(query=query)
    seen = {}

    def add_node(node):
        if node.id not in seen:
            seen[node.id] = node
            graph.nodes.append(node)

    if query.root == PREDICTION:
        root = Node(PREDICTION)
        add_node(root)
        levels = query.depth
        if levels > T:
            levels, graph.truncated = T, True
        frontier = []
        mean_c = C[:, T - 1, :].mean(axis=0)
        for i, value in _top_k(mean_c, names, T - 1, query.fan_out):
            node = Node(names[i], T - 1)
            add_node(node)
            graph.edges.append(Edge(node.id, root.id, value))
            frontier.append((i, T - 1))
        levels -= 1
    else:
        feature, t_root = parse_node_id(query.root)
        if feature not in names or not 0 <= t_root < T:
            raise ValueError(f"root {query.root!r} is outside the feature/time grid")
        add_node(Node(feature, t_root))
        frontier = [(names.index(feature), t_root)]
        levels = query.depth
        if levels > t_root:
            levels, graph.truncated = t_root, True

    for _ in range(levels):
        next_frontier = []
        for j, t_dst in frontier:
            t_src = t_dst - 1
            influence = (C[:, t_src, :] * A[:, t_src, t_dst, None] * C[:, t_dst, j, None]).mean(axis=0)
            target = node_id(names[j], t_dst)
            for i, value in _top_k(influence, names, t_src, query.fan_out):
                node = Node(names[i], t_src)
                if node.id not in seen:
                    next_frontier.append((i, t_src))
                add_node(node)
                graph.edges.append(Edge(node.id, target, value))
        frontier = next_frontier
    return graph


def _edge_color(weight: float) -> str:
    if weight > 0:
        return "blue"
    if weight < 0:
        return "red"
    return "gray"


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_graph(graph: InfluenceGraph, fmt: str = "dot") -> bytes:
    if fmt == "json":
        return graph_to_json(graph)
    if fmt != "dot":
        raise ValueError(f"unknown graph format {fmt!r}; use 'dot' or 'json'")
    out = io.StringIO()
    out.write("digraph influence {\n  rankdir=LR;\n")
    for node in graph.nodes:
        shape = "doubleoctagon" if node.time is None else "box"
        out.write(f"  {_dot_quote(node.id)} [label={_dot_quote(node.id)}, shape={shape}];\n")
    for e in graph.edges:
        out.write(f"  {_dot_quote(e.source)} -> {_dot_quote(e.target)} "
                  f"[color={_edge_color(e.weight)}, label=\"{e.weight:.4g}\", "
                  f"influence=\"{e.weight!r}\"];\n")
    out.write("}\n")
    return out.getvalue().encode("utf-8")


def graph_to_json(graph: InfluenceGraph) -> bytes:
    doc = {
        "format": "tfcam-influence-graph",
        "version": 1,
        "query": graph.query.to_dict() if graph.query else None,
        "truncated": graph.truncated,
        "nodes": [{"id": n.id, "feature": n.feature, "time": n.time} for n in graph.nodes],
        "edges": [{"source": e.source, "target": e.target, "weight": e.weight}
                  for e in graph.edges],
    }
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


def graph_from_json(data) -> InfluenceGraph:
    doc = json.loads(data)
    query = InfluenceQuery(**doc["query"]) if doc.get("query") else None
    return InfluenceGraph(
        nodes=[Node(n["feature"], n["time"]) for n in doc["nodes"]],
        edges=[Edge(e["source"], e["target"], float(e["weight"])) for e in doc["edges"]],
        query=query, truncated=bool(doc.get("truncated", False)))


def alpha_csv(alpha, patient_ids: Sequence) -> str:
    alpha = np.asarray(alpha)
    lines = ["patient_id," + ",".join(f"t{t}" for t in range(alpha.shape[1]))]
    for pid, row in zip(patient_ids, alpha):
        lines.append(f"{pid}," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def importance_csv(importance: FeatureImportance) -> str:
    lines = ["feature,score"] + [f"{name},{score!r}" for name, score in importance.ranking]
    return "\n".join(lines) + "\n"


def profile_csv(profile: TemporalProfile) -> str:
    T = len(profile.mean_alpha_all)
    lines = ["stratum,n," + ",".join(f"t{t}" for t in range(T))]
    for label, values, n in (("all", profile.mean_alpha_all, profile.n_all),
                             ("positive", profile.mean_alpha_positive, profile.n_positive),
                             ("negative", profile.mean_alpha_negative, profile.n_negative)):
        if values is not None:
            lines.append(f"{label},{n}," + ",".join(repr(float(v)) for v in values))
    return "\n".join(lines) + "\n"


def attention_csv(A, block_ids: Sequence) -> str:
    """One ``T x T`` block per id; rows are source times, columns target times."""
    A = np.asarray(A)
    if A.ndim == 2:
        A = A[None]
    T = A.shape[-1]
    lines = ["block,source," + ",".join(f"t{t}" for t in range(T))]
    for bid, block in zip(block_ids, A):
        for s in range(T):
            lines.append(f"{bid},t{s}," + ",".join(repr(float(v)) for v in block[s]))
    return "\n".join(lines) + "\n"
