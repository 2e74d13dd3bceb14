"""Critical elements, the heteroclinic connection graph, and equivalence.

Edges start from all ordered pairs passing the necessary-condition filter;
a pair is immediate unless a third element lies radially between the two
in the portrait nesting with a compatible index ladder. The full edge set
is the transitive closure of the immediate one (connections cascade), and
every edge carries a predicted/verified mark.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import DataError, StructuralError
from .spectrum import MorseData, morse_index_equilibrium, morse_index_wave

_MODULE = "attractor_graph"

_NEST_TOL = 1e-9


@dataclass
class CriticalElement:
    name: str
    kind: str  # "equilibrium" | "wave"
    morse: MorseData
    z_self: int
    geometry: dict
    nesting_key: int
    interval: tuple  # effective radial extent in the phase plane

    @property
    def index(self) -> int:
        return self.morse.index

    def label(self) -> str:
        return f"{self.kind}:{self.index}:{self.z_self}"

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "index": self.index,
            "z_self": self.z_self,
            "geometry": self.geometry,
            "nesting_key": self.nesting_key,
            "morse": self.morse.as_dict(),
        }


@dataclass
class ConnectionGraph:
    nodes: list
    edges: dict  # (src_name, dst_name) -> "predicted" | "verified"
    immediate_edges: list

    def node(self, name: str) -> CriticalElement:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def mark_verified(self, src: str, dst: str):
        if (src, dst) not in self.edges:
            raise DataError(_MODULE, "mark_verified", "no such edge",
                            src=src, dst=dst)
        self.edges[(src, dst)] = "verified"

    def as_dict(self) -> dict:
        return {
            "nodes": [n.as_dict() for n in self.nodes],
            "edges": [
                {"source": s, "target": t, "status": st}
                for (s, t), st in sorted(self.edges.items())
            ],
            "immediate_edges": [list(e) for e in self.immediate_edges],
        }


def _effective_interval(e, portrait) -> tuple:
    if e.kind == "center":
        return (e.u, e.u)
    lo, hi = e.u, e.u
    for reg in portrait.regions:
        if reg.boundary_saddle == e.index_in_order or (
            reg.inner_saddle == e.index_in_order
        ):
            if reg.inner_saddle == e.index_in_order and reg.b_minus is not None:
                lo, hi = min(lo, reg.b_minus), max(hi, reg.b_plus)
            else:
                lo, hi = min(lo, reg.u_minus), max(hi, reg.u_plus)
        if reg.tie_boundary and abs(reg.u_plus - e.u) < 1e-9:
            lo, hi = min(lo, reg.u_minus), max(hi, reg.u_plus)
    return (lo, hi)


def classify_elements(f, portrait, orbits, count: int = 12):
    """Morse-classify all equilibria and frozen waves of the portrait."""
    elements = []
    for k, e in enumerate(portrait.equilibria):
        md = morse_index_equilibrium(f, e, count=count)
        elements.append(CriticalElement(
            name=f"e{k}", kind="equilibrium", morse=md, z_self=0,
            geometry={"u": e.u, "ode_kind": e.kind},
            nesting_key=0, interval=_effective_interval(e, portrait),
        ))
    for k, o in enumerate(sorted(orbits, key=lambda o: (o.region_id, o.a))):
        md = morse_index_wave(f, o, count=count)
        elements.append(CriticalElement(
            name=f"v{k}", kind="wave", morse=md, z_self=o.z,
            geometry={"a": o.a, "alpha": o.alpha, "lap": o.lap,
                      "region_id": o.region_id,
                      "T_prime_sign": o.T_prime_sign},
            nesting_key=0, interval=(o.a, o.alpha),
        ))
    for pos, el in enumerate(sorted(
        elements, key=lambda x: (x.interval[1] - x.interval[0], x.interval[0])
    )):
        el.nesting_key = pos
    elements.sort(key=lambda x: x.nesting_key)
    return elements


def lemma1_filter(src: CriticalElement, dst: CriticalElement) -> bool:
    """Necessary conditions for a heteroclinic src -> dst (not excluded)."""
    if src is dst or src.name == dst.name:
        return False
    if src.index < dst.index + 1:
        return False
    if src.kind == "wave" and dst.kind == "wave":
        n_src, n_dst = src.z_self // 2, dst.z_self // 2
        if n_src < n_dst:
            return False
        if dst.index == 2 * n_dst and n_src < n_dst + 1:
            return False
    return True


def _proper_sub(inner: tuple, outer: tuple) -> bool:
    return (
        outer[0] <= inner[0] + _NEST_TOL
        and inner[1] <= outer[1] + _NEST_TOL
        and (outer[1] - outer[0]) - (inner[1] - inner[0]) > _NEST_TOL
    )


def _between(w: CriticalElement, a: CriticalElement, b: CriticalElement) -> bool:
    if _proper_sub(a.interval, b.interval):
        inner, outer = a, b
    elif _proper_sub(b.interval, a.interval):
        inner, outer = b, a
    else:
        return False
    return _proper_sub(inner.interval, w.interval) and _proper_sub(
        w.interval, outer.interval
    )


def build_graph(elements, portrait) -> ConnectionGraph:
    """Connection graph: filtered candidates, blocking, cascade closure."""
    for el in elements:
        if el.kind == "wave":
            n2 = el.z_self
            if not (n2 - 1 <= el.index <= n2):
                raise DataError(_MODULE, "build_graph",
                                "wave index outside {2N-1, 2N}",
                                name=el.name, index=el.index, z=el.z_self)
    candidates = [
        (s, d) for s in elements for d in elements if lemma1_filter(s, d)
    ]
    immediate = []
    for s, d in candidates:
        blocked = any(
            w is not s and w is not d
            and s.index > w.index > d.index
            and _between(w, s, d)
            and lemma1_filter(s, w) and lemma1_filter(w, d)
            for w in elements
        )
        if not blocked:
            immediate.append((s.name, d.name))
    G = nx.DiGraph()
    G.add_nodes_from(el.name for el in elements)
    G.add_edges_from(immediate)
    if not nx.is_directed_acyclic_graph(G):
        raise StructuralError(_MODULE, "build_graph", "connection graph is cyclic")
    closure = nx.transitive_closure_dag(G)
    reduction = nx.transitive_reduction(G)
    by_name = {el.name: el for el in elements}
    edges = {}
    for s, d in closure.edges:
        if not lemma1_filter(by_name[s], by_name[d]):
            raise StructuralError(_MODULE, "build_graph",
                                  "cascaded edge fails the necessary conditions",
                                  src=s, dst=d)
        edges[(s, d)] = "predicted"
    return ConnectionGraph(
        nodes=list(elements),
        edges=edges,
        immediate_edges=sorted(reduction.edges),
    )


def attractor_dim(graph: ConnectionGraph) -> int:
    """max over i(e) for equilibria and 1 + dim W^u(v) for waves."""
    dim = 0
    for el in graph.nodes:
        if el.kind == "equilibrium":
            dim = max(dim, el.index)
        else:
            dim = max(dim, 1 + el.index)
    return dim


def connection_equivalent(g1: ConnectionGraph, g2: ConnectionGraph) -> bool:
    """Isomorphism matching kind, Morse index, z, and all edges."""

    def to_nx(g):
        G = nx.DiGraph()
        for el in g.nodes:
            G.add_node(el.name, kind=el.kind, index=el.index, z=el.z_self)
        G.add_edges_from(g.edges.keys())
        return G

    nm = nx.algorithms.isomorphism.categorical_node_match(
        ["kind", "index", "z"], [None, None, None]
    )
    return nx.is_isomorphic(to_nx(g1), to_nx(g2), node_match=nm)


def to_dot(graph: ConnectionGraph) -> str:
    """Immediate edges; solid arrows verified, dashed predicted."""
    lines = ["digraph attractor {"]
    for el in graph.nodes:
        lines.append(f'  {el.name} [label="{el.label()}"];')
    for s, d in graph.immediate_edges:
        style = "solid" if graph.edges.get((s, d)) == "verified" else "dashed"
        lines.append(f"  {s} -> {d} [style={style}];")
    lines.append("}")
    return "\n".join(lines)
