import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import networkx as nx

from core.errors import FineCausalError

logger = logging.getLogger(__name__)


# --- DATA STRUCTURES ---
class VariableId(str, Enum):
    O_QUERY = "O_query"
    O_EXEMPLAR = "O_exemplar"
    F_QUERY = "F_query"
    F_EXEMPLAR = "F_exemplar"
    S_QUERY = "S_query"
    S_EXEMPLAR = "S_exemplar"
    Y_QUERY = "Y_query"
    Y_EXEMPLAR = "Y_exemplar"

    @property
    def family(self) -> str:
        return self.value.split("_")[0]

    @property
    def video(self) -> str:
        return self.value.split("_")[1]

    @property
    def level(self) -> int:
        return FAMILY_ORDER.index(self.family)


class EdgeKind(str, Enum):
    GENUINE = "genuine"
    SPURIOUS = "spurious"


# Topological order of the variable families: O < F < S < Y
FAMILY_ORDER = ("O", "F", "S", "Y")

FAMILY_DESCRIPTIONS = {
    "O": "Original video features",
    "F": "Fused video features (original combined with the human-centric mask)",
    "S": "Stage features (forward, twist, entry)",
    "Y": "Action score",
}


@dataclass(frozen=True)
class VariableNode:
    id: VariableId
    description: str


@dataclass(frozen=True)
class CausalEdge:
    source: VariableId
    target: VariableId
    kind: EdgeKind


@dataclass(frozen=True)
class CausalGraph:
    nodes: Tuple[VariableNode, ...]
    edges: Tuple[CausalEdge, ...] = field(default_factory=tuple)

    def with_edge(self, source: VariableId, target: VariableId, kind: EdgeKind = EdgeKind.GENUINE) -> "CausalGraph":
        return CausalGraph(self.nodes, self.edges + (CausalEdge(source, target, kind),))

    def genuine_subgraph(self) -> nx.DiGraph:
        G = nx.DiGraph()
        G.add_nodes_from(node.id for node in self.nodes)
        G.add_edges_from((e.source, e.target) for e in self.edges if e.kind == EdgeKind.GENUINE)
        return G

    def to_networkx(self) -> nx.MultiDiGraph:
        G = nx.MultiDiGraph()
        for node in self.nodes:
            G.add_node(node.id, description=node.description)
        for edge in self.edges:
            G.add_edge(edge.source, edge.target, kind=edge.kind)
        return G

    def to_json(self) -> str:
        document = {
            "nodes": [{"id": n.id.value, "description": n.description} for n in self.nodes],
            "edges": [{"source": e.source.value, "target": e.target.value, "kind": e.kind.value} for e in self.edges],
        }
        return json.dumps(document, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CausalGraph":
        document = json.loads(text)
        nodes = tuple(VariableNode(VariableId(n["id"]), n.get("description", "")) for n in document["nodes"])
        edges = tuple(
            CausalEdge(VariableId(e["source"]), VariableId(e["target"]), EdgeKind(e["kind"]))
            for e in document["edges"]
        )
        return cls(nodes, edges)


def make_node(var: VariableId) -> VariableNode:
    return VariableNode(var, f"{FAMILY_DESCRIPTIONS[var.family]} ({var.video})")


# Allowed spurious patterns: cross-video O_e -> O_q and F_e -> F_q, and O -> S inside a video
_SPURIOUS_PATTERNS = {
    (VariableId.O_EXEMPLAR, VariableId.O_QUERY),
    (VariableId.F_EXEMPLAR, VariableId.F_QUERY),
    (VariableId.O_QUERY, VariableId.S_QUERY),
    (VariableId.O_EXEMPLAR, VariableId.S_EXEMPLAR),
}

_graph_cache: Optional[CausalGraph] = None


# --- OPERATIONS ---
def default_graph() -> CausalGraph:
    """
    The AQA causal graph: the genuine chain O -> F -> S -> Y for each video,
    plus the spurious shortcuts that shared environments open between them.
    Built once and cached; the graph is immutable.
    """
    global _graph_cache
    if _graph_cache is None:
        nodes = tuple(make_node(var) for var in VariableId)
        edges: List[CausalEdge] = []
        for video in ("query", "exemplar"):
            chain = [VariableId(f"{family}_{video}") for family in FAMILY_ORDER]
            for source, target in zip(chain, chain[1:]):
                edges.append(CausalEdge(source, target, EdgeKind.GENUINE))
        edges.append(CausalEdge(VariableId.O_EXEMPLAR, VariableId.O_QUERY, EdgeKind.SPURIOUS))
        edges.append(CausalEdge(VariableId.F_EXEMPLAR, VariableId.F_QUERY, EdgeKind.SPURIOUS))
        edges.append(CausalEdge(VariableId.O_QUERY, VariableId.S_QUERY, EdgeKind.SPURIOUS))
        edges.append(CausalEdge(VariableId.O_EXEMPLAR, VariableId.S_EXEMPLAR, EdgeKind.SPURIOUS))
        _graph_cache = CausalGraph(nodes, tuple(edges))
    return _graph_cache


def validate(g: CausalGraph) -> List[str]:
    """Returns human-readable violations; an empty list means the graph is well formed."""
    violations: List[str] = []
    genuine = g.genuine_subgraph()

    on_cycle = set()
    for cycle in sorted(nx.simple_cycles(genuine), key=lambda c: [v.value for v in c]):
        members = list(cycle)
        on_cycle.update(zip(members, members[1:] + members[:1]))
        path = " -> ".join(v.value for v in members + members[:1])
        violations.append(f"cycle in genuine edges: {path}")

    for edge in g.edges:
        pair = (edge.source, edge.target)
        if edge.kind == EdgeKind.SPURIOUS:
            if pair not in _SPURIOUS_PATTERNS:
                violations.append(f"spurious edge {edge.source.value} -> {edge.target.value} is not an allowed pattern")
            continue
        label = f"{edge.source.value} -> {edge.target.value}"
        if pair in on_cycle:
            # A backward edge closing a cycle is also an ordering violation
            if edge.source.video == edge.target.video and edge.target.level <= edge.source.level:
                violations.append(f"ordering violation: genuine edge {label} goes against O < F < S < Y")
            continue
        if edge.source.video != edge.target.video:
            violations.append(f"genuine edge {label} crosses videos")
        elif edge.target.level <= edge.source.level:
            violations.append(f"ordering violation: genuine edge {label} goes against O < F < S < Y")
        elif edge.target.level != edge.source.level + 1:
            violations.append(f"genuine edge {label} skips a stage of the chain")

    # Every genuine path leaving an O node must end at a Y node
    if not on_cycle:
        for node in genuine.nodes:
            if node.family != "O":
                continue
            for reached in nx.descendants(genuine, node):
                if genuine.out_degree(reached) == 0 and reached.family != "Y":
                    violations.append(f"genuine path from {node.value} dead-ends at {reached.value}")
    return violations


def factorization_string(g: CausalGraph) -> str:
    """
    Chain-rule factorization over the variable families (query/exemplar collapsed).

    Factors are listed from the outcome backwards. Root marginals are only written for
    graphs without a mediating family; with mediators the chain is reported conditioned
    on its observed roots, the way the interventional query P(Y | O) is read.
    """
    families = nx.DiGraph()
    families.add_nodes_from(node.id.family for node in g.nodes)
    for edge in g.edges:
        if edge.kind == EdgeKind.GENUINE and edge.source.family != edge.target.family:
            families.add_edge(edge.source.family, edge.target.family)
    if not nx.is_directed_acyclic_graph(families):
        raise FineCausalError("Cannot factorize a graph whose genuine edges contain a cycle")

    order = list(nx.lexicographical_topological_sort(families, key=FAMILY_ORDER.index))
    has_mediator = any(families.in_degree(f) > 0 and families.out_degree(f) > 0 for f in order)
    factors = []
    for family in reversed(order):
        parents = sorted(families.predecessors(family), key=FAMILY_ORDER.index)
        if parents:
            factors.append(f"P({family}|{','.join(parents)})")
        elif not has_mediator:
            factors.append(f"P({family})")
    return "·".join(factors)


def graph_report(g: Optional[CausalGraph] = None) -> Dict[str, object]:
    g = g or default_graph()
    genuine = sum(1 for e in g.edges if e.kind == EdgeKind.GENUINE)
    return {
        "graph": json.loads(g.to_json()),
        "factorization": factorization_string(g),
        "genuine_edges": genuine,
        "spurious_edges": len(g.edges) - genuine,
        "violations": validate(g),
    }
