#  Copyright (c) 2026. The lapis developers
#  This file is part of the lapis project.
#  Please respect the license - more about this in the section (*) below.
#
#  lapis is free software: you can redistribute it and/or modify
#  it under the terms of the GNU General Public License as published by
#  the Free Software Foundation, either version 3 of the License, or
#  (at your option) any later version.
#
#  lapis is distributed in the hope that it will be useful,
#  but WITHOUT ANY WARRANTY; without even the implied warranty of
#  MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#  GNU General Public License for more details.
#
#  You should have received a copy of the GNU General Public License
#  along with lapis.  If not, see <http://www.gnu.org/licenses/>.
#
#  (*) Removing authorship by any means, e.g. by distribution of derived
#  works or verbatim, obfuscated, compiled or rewritten versions of any
#  part of this work is illegal and unethical regarding the effort and
#  time spent here.
"""Encoder operator graph, operator priorities and coarse-grained stage allocation

Every operator costs W(v, s) = a·s + c unit operations for a sequence of s tokens.
The priority of an operator is the heaviest path from it to the sink; operators are visited by
decreasing priority and packed into pipeline stages whose members are balanced by parallelism.

>>> G = build_encoder_graph(layers=12, hidden=768, heads=12, k=30)
>>> len(G), G.sink
(15, 14)
>>> alloc = allocate_stages(G, 177, ResourceBudget())
>>> [len(stage) for stage in alloc.stages]
[3, 5, 3, 2, 2]
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Optional

import networkx as nx

from lapis.config import GLOBAL
from lapis.misc.exception import CyclicGraph, InvalidConfig, NodeExceedsBudget
from lapis.misc.math import ceil_int, ceil_ratio, exact

logger = logging.getLogger(__name__)

PHASES = ("StateMM", "StateAtten", "StateFF")


class OperatorKind(Enum):
    MatMul = "MatMul"
    AttenSelect = "AttenSelect"
    AttenLoad = "AttenLoad"
    AttenScore = "AttenScore"
    AttenAV = "AttenAV"
    Add = "Add"
    LayerNorm = "LayerNorm"
    Gelu = "Gelu"
    Sink = "Sink"


@dataclass(frozen=True)
class OperatorNode:
    """
    Operator with linear cost W(s) = a·s + c and `width` multiply-accumulates per cycle per instance.

    >>> OperatorNode(0, "ffn1", OperatorKind.MatMul, 2, 0).weight(10)
    20
    """

    id: int
    name: str
    kind: OperatorKind
    a: int
    c: int = 0
    width: int = 1
    phase: Optional[str] = "StateMM"

    def __post_init__(self):
        if self.kind != OperatorKind.Sink and (self.a < 0 or self.c < 0 or self.a + self.c <= 0):
            raise InvalidConfig(f"Operator {self.name} needs a, c >= 0 and a + c > 0: a={self.a}, c={self.c}")
        if self.width < 1:
            raise InvalidConfig(f"Operator {self.name} needs a positive width: {self.width}")

    def weight(self, s):
        return self.a * s + self.c

    def units(self, tile=None):
        """Compute units taken by one instance: its width capped at the tile size."""
        return min(self.width, GLOBAL["tile"] if tile is None else tile)


def operator_weight(v, s):
    """
    >>> operator_weight(OperatorNode(0, "x", OperatorKind.Add, 2, 0), 10)
    20
    """
    return v.weight(s)


class OperatorGraph:
    """
    Directed acyclic graph of operators, kept in a networkx DiGraph keyed by node id.

    >>> n = [OperatorNode(i, f"op{i}", OperatorKind.Add, i + 1) for i in range(3)]
    >>> G = OperatorGraph(n, [(0, 1), (0, 2)])
    >>> G.sinks, G.with_sink().sinks
    ([1, 2], [3])
    """

    def __init__(self, nodes, edges, layers=1, label="custom"):
        self.nodes = {v.id: v for v in nodes}
        self.edges = tuple((int(u), int(v)) for u, v in edges)
        self.layers = layers
        self.label = label
        self.dag = nx.DiGraph()
        self.dag.add_nodes_from(self.nodes)
        for u, v in self.edges:
            if u not in self.nodes or v not in self.nodes:
                raise InvalidConfig(f"Edge {u}->{v} refers to an unknown operator.")
            self.dag.add_edge(u, v)

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, item):
        return self.nodes[item]

    def __repr__(self):
        return f"OperatorGraph({self.label}: {len(self.nodes)} operators, {len(self.edges)} edges)"

    @property
    def sinks(self):
        return sorted(v for v in self.dag.nodes if self.dag.out_degree(v) == 0)

    @property
    def sink(self):
        """The unique sink, or None."""
        sinks = self.sinks
        return sinks[0] if len(sinks) == 1 else None

    def successors(self, v):
        return sorted(self.dag.successors(v))

    def with_sink(self):
        """Same graph with a virtual weight-0 sink below every natural sink, when there are several."""
        sinks = self.sinks
        if len(sinks) <= 1:
            return self
        sid = max(self.nodes) + 1
        sink = OperatorNode(sid, "sink", OperatorKind.Sink, 0, 0, 1, None)
        return OperatorGraph(
            list(self.nodes.values()) + [sink], self.edges + tuple((u, sid) for u in sinks), self.layers, self.label
        )

    @property
    def hardware(self):
        """Ids of the operators that occupy compute units, i.e. all but virtual sinks."""
        return [i for i, v in self.nodes.items() if v.kind != OperatorKind.Sink]


@dataclass(frozen=True)
class ResourceBudget:
    """
    Compute units (one 8-bit multiply-accumulate per cycle each) and clock.

    >>> ResourceBudget()
    ResourceBudget(compute_units=3000, clock_hz=200000000)
    """

    compute_units: int = 3000
    clock_hz: int = 200_000_000

    def __post_init__(self):
        if self.compute_units < 1 or self.clock_hz <= 0:
            raise InvalidConfig(f"Budget needs positive compute units and clock: {self}")


def build_encoder_graph(layers, hidden, heads, k):
    """
    Operator graph of one encoder layer with Top-k sparse attention.

    Costs per token, with h = hidden, H = heads:
    projections and feed-forward matrices are h·(out width) MACs; the pre-selection quantizes q and k (2h)
    and merges k candidates per head; candidate loading moves 2k·h values; exact scoring takes k·h MACs
    plus k exponentials per head; value aggregation takes k·h MACs and h divisions;
    layer normalization is 5h per token plus 2h per sequence for its scale and shift.
    The quantized products of the pre-selection run on lookup tables and take no compute units.

    >>> G = build_encoder_graph(1, 4, 1, 2)
    >>> [v.name for v in G.nodes.values()][:6]
    ['q_proj', 'k_proj', 'v_proj', 'atten_select', 'atten_load', 'atten_score']
    >>> nx.is_directed_acyclic_graph(G.dag), G.sink
    (True, 14)

    Parameters
    ----------
    layers
        Encoder layers executed by the simulator; the graph itself holds one layer
    hidden
        Model width h
    heads
        Attention heads H, dividing h
    k
        Candidates kept per query row
    """
    if min(layers, hidden, heads, k) < 1:
        raise InvalidConfig(f"Positive parameters expected: layers={layers}, hidden={hidden}, heads={heads}, k={k}")
    if hidden % heads:
        raise InvalidConfig(f"hidden={hidden} is not divisible by heads={heads}")
    h, H, f = hidden, heads, 4 * hidden
    MM, AT, FF = PHASES
    K = OperatorKind
    specs = [
        ("q_proj", K.MatMul, h * h, 0, h, MM),
        ("k_proj", K.MatMul, h * h, 0, h, MM),
        ("v_proj", K.MatMul, h * h, 0, h, MM),
        ("atten_select", K.AttenSelect, 2 * h + k * H, 0, h, AT),
        ("atten_load", K.AttenLoad, 2 * k * h, 0, h, AT),
        ("atten_score", K.AttenScore, k * h + k * H, 0, h, AT),
        ("atten_av", K.AttenAV, k * h + h, 0, h, AT),
        ("out_proj", K.MatMul, h * h, 0, h, MM),
        ("add1", K.Add, h, 0, h, FF),
        ("ln1", K.LayerNorm, 5 * h, 2 * h, h, FF),
        ("ffn1", K.MatMul, h * f, 0, f, FF),
        ("gelu", K.Gelu, f, 0, f, FF),
        ("ffn2", K.MatMul, f * h, 0, h, FF),
        ("add2", K.Add, h, 0, h, FF),
        ("ln2", K.LayerNorm, 5 * h, 2 * h, h, FF),
    ]
    nodes = [OperatorNode(i, *spec) for i, spec in enumerate(specs)]
    # Residual of the feed-forward block: ln1 -> add2.
    edges = [(0, 3), (1, 3), (1, 4), (2, 4), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (8, 9), (9, 10)]
    edges += [(10, 11), (11, 12), (12, 13), (9, 13), (13, 14)]
    return OperatorGraph(nodes, edges, layers, f"encoder h={h} H={H} k={k}").with_sink()


def compute_priorities(G, s_avg):
    """
    Heaviest-path priority of every operator: P(v) = W(v) + max over successors of P, P(sink) = W(sink).

    >>> n = [OperatorNode(0, "a", OperatorKind.Add, 3), OperatorNode(1, "b", OperatorKind.Add, 5)]
    >>> compute_priorities(OperatorGraph(n, [(0, 1)]), 1)
    {1: 5, 0: 8}
    """
    if not nx.is_directed_acyclic_graph(G.dag):
        raise CyclicGraph(f"Operator graph has a cycle: {nx.find_cycle(G.dag)}")
    P = {}
    for v in reversed(list(nx.topological_sort(G.dag))):
        P[v] = G[v].weight(s_avg) + max((P[u] for u in G.dag.successors(v)), default=0)
    return P


def stage_resource_cost(stage, N, tile=None):
    """
    Units used by a stage: Σ N(v)·units(v).

    >>> v = OperatorNode(0, "mm", OperatorKind.MatMul, 64, width=8)
    >>> stage_resource_cost([v], {0: 1}), stage_resource_cost([v], {0: 3})
    (8, 24)
    """
    return sum(N[v.id] * v.units(tile) for v in stage)


def stage_cycles(stage, N, s, tile=None):
    """
    Exact cycles a stage needs for one sequence of length s: Σ W(v, s) / (N(v)·units(v)).

    >>> v = OperatorNode(0, "mm", OperatorKind.MatMul, 200, width=200)
    >>> stage_cycles([v], {0: 1}, 10, tile=200)
    Fraction(10, 1)
    """
    return sum((Fraction(v.weight(exact(s))) / (N[v.id] * v.units(tile)) for v in stage), Fraction(0))


@dataclass(frozen=True)
class VisitRecord:
    """One step of the allocation: `factors` are the parallelism multipliers applied when the node joined."""

    node: int
    stage: int
    joined: bool
    factors: tuple = ()


@dataclass(frozen=True, eq=False)
class StageAllocation:
    graph: OperatorGraph
    stages: tuple  # node ids per stage, in visit order
    parallelism: dict
    replication: tuple
    s_avg: Fraction
    tile: int
    visits: tuple = field(default=())

    def __eq__(self, other):
        return (self.stages, self.parallelism, self.replication, self.s_avg, self.tile) == (
            other.stages,
            other.parallelism,
            other.replication,
            other.s_avg,
            other.tile,
        )

    def __len__(self):
        return len(self.stages)

    def nodes(self, j):
        return [self.graph[i] for i in self.stages[j]]

    def phase(self, j):
        """Controller state of a stage: the phase of its first operator."""
        return self.graph[self.stages[j][0]].phase

    def units(self, j):
        return stage_resource_cost(self.nodes(j), self.parallelism, self.tile)

    def cycles(self, j, s):
        """Exact cycles of one replica of stage j for a sequence of length s."""
        return stage_cycles(self.nodes(j), self.parallelism, s, self.tile)

    def with_replication(self, replication):
        return replace(self, replication=tuple(replication))


def allocate_stages(G, s_avg, budget):
    """
    Pack operators into stages by decreasing priority (ties by id).

    When node v joins the current stage, every member u already there gets its parallelism multiplied
    by ceil(W(u)/W(v)); v joins when the stage still fits the budget with those multipliers, otherwise
    it opens a new stage at parallelism 1.

    >>> n = [OperatorNode(i, f"op{i}", OperatorKind.MatMul, w, width=1) for i, w in enumerate([4, 2, 1])]
    >>> alloc = allocate_stages(OperatorGraph(n, [(0, 1), (1, 2)]), 1, ResourceBudget(3))
    >>> alloc.stages, alloc.parallelism
    (((0, 1), (2,)), {0: 2, 1: 1, 2: 1})

    Returns
    -------
        StageAllocation with replication 1 per stage
    """
    s_avg = exact(s_avg)
    tile = GLOBAL["tile"]
    P = compute_priorities(G, s_avg)
    order = sorted(G.hardware, key=lambda i: (-P[i], i))
    for i in order:
        if G[i].units(tile) > budget.compute_units:
            raise NodeExceedsBudget(f"Operator {G[i].name} needs {G[i].units(tile)} units > {budget.compute_units}")
    stages, N, visits = [], {}, []
    for i in order:
        v = G[i]
        if stages:
            current = stages[-1]
            factors = {u: ceil_ratio(G[u].weight(s_avg), v.weight(s_avg)) for u in current}
            tentative = {u: N[u] * f for u, f in factors.items()}
            tentative[i] = 1
            cost = stage_resource_cost([G[u] for u in tentative], tentative, tile)
            if cost <= budget.compute_units:
                current.append(i)
                N.update(tentative)
                visits.append(VisitRecord(i, len(stages) - 1, True, tuple(sorted(factors.items()))))
                continue
        logger.debug(f"Stage {len(stages)} opened by {v.name} (P={P[i]})")
        stages.append([i])
        N[i] = 1
        visits.append(VisitRecord(i, len(stages) - 1, False))
    logger.info(f"{len(stages)} stages for {G.label} at s_avg={s_avg}")
    return StageAllocation(G, tuple(map(tuple, stages)), N, (1,) * len(stages), s_avg, tile, tuple(visits))


def enumerate_replication(alloc, s_avg, budget):
    """
    Replication factors R in [1, r_max] per stage maximizing min_k R_k / latency_k within the total budget.

    Among the maximizers the componentwise smallest R is returned; it exists because each stage
    needs R_k >= ceil(T·latency_k) to reach a bottleneck throughput T.

    >>> n = [OperatorNode(i, f"op{i}", OperatorKind.MatMul, 8, width=1) for i in range(2)]
    >>> alloc = allocate_stages(OperatorGraph(n, [(0, 1)]), 1, ResourceBudget(1))
    >>> enumerate_replication(alloc, 1, ResourceBudget(3))
    (1, 1)
    >>> enumerate_replication(alloc, 1, ResourceBudget(5))
    (2, 2)
    """
    r_max = GLOBAL["r_max"]
    K = len(alloc)
    costs = [alloc.units(j) for j in range(K)]
    lat = [alloc.cycles(j, s_avg) for j in range(K)]
    if sum(costs) > budget.compute_units:
        logger.warning(f"Budget {budget.compute_units} below a single replica of every stage ({sum(costs)}).")
        return (1,) * K
    thresholds = sorted({Fraction(r) / lat[j] for j in range(K) for r in range(1, r_max + 1)}, reverse=True)
    for T in thresholds:
        R = [max(1, ceil_int(T * lat[j])) for j in range(K)]
        if max(R) <= r_max and sum(r * c for r, c in zip(R, costs)) <= budget.compute_units:
            logger.info(f"Replication {tuple(R)} for throughput {float(T):.3g} sequences/cycle")
            return tuple(R)
    return (1,) * K  # pragma: no cover


def dumps_graph(G):
    """
    Line-oriented text of a graph: one `node` line per operator, one `edge` line per dependency.

    >>> print(dumps_graph(OperatorGraph([OperatorNode(0, "x", OperatorKind.Add, 3, 1, 4, "StateFF")], [])))
    graph custom layers=1 nodes=1 edges=0
    node 0 x Add a=3 c=1 width=4 phase=StateFF
    """
    lines = [f"graph {G.label.replace(' ', '_')} layers={G.layers} nodes={len(G.nodes)} edges={len(G.edges)}"]
    for v in G.nodes.values():
        lines.append(f"node {v.id} {v.name} {v.kind.value} a={v.a} c={v.c} width={v.width} phase={v.phase}")
    for u, v in G.edges:
        lines.append(f"edge {u} {v}")
    return "\n".join(lines)


def dumps_allocation(alloc):
    """
    Text listing of stages, their controller state, replication, units and cycles at s_avg.

    >>> n = [OperatorNode(i, f"op{i}", OperatorKind.MatMul, w, width=1) for i, w in enumerate([4, 2, 1])]
    >>> print(dumps_allocation(allocate_stages(OperatorGraph(n, [(0, 1), (1, 2)]), 1, ResourceBudget(3))))
    allocation stages=2 s_avg=1 tile=64
    stage 0 phase=StateMM R=1 units=3 cycles=4
      node 0 op0 N=2
      node 1 op1 N=1
    stage 1 phase=StateMM R=1 units=1 cycles=1
      node 2 op2 N=1
    """
    lines = [f"allocation stages={len(alloc)} s_avg={alloc.s_avg} tile={alloc.tile}"]
    for j, stage in enumerate(alloc.stages):
        lines.append(
            f"stage {j} phase={alloc.phase(j)} R={alloc.replication[j]} units={alloc.units(j)} "
            f"cycles={alloc.cycles(j, alloc.s_avg)}"
        )
        for i in stage:
            lines.append(f"  node {i} {alloc.graph[i].name} N={alloc.parallelism[i]}")
    return "\n".join(lines)
