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
from fractions import Fraction
from itertools import product
from unittest import TestCase

import networkx as nx
import numpy as np
import pytest

from lapis.config import setup
from lapis.encoder_graph import (
    OperatorGraph,
    OperatorKind,
    OperatorNode,
    ResourceBudget,
    allocate_stages,
    build_encoder_graph,
    compute_priorities,
    dumps_allocation,
    dumps_graph,
    enumerate_replication,
    operator_weight,
    stage_resource_cost,
)
from lapis.misc.exception import CyclicGraph, InvalidConfig, NodeExceedsBudget
from lapis.presets import models


def op(i, a, c=0, width=1):
    return OperatorNode(i, f"op{i}", OperatorKind.MatMul, a, c, width)


def random_graph(rnd, max_nodes=12, max_width=4):
    n = int(rnd.integers(1, max_nodes + 1))
    nodes = [op(i, int(rnd.integers(1, 21)), int(rnd.integers(0, 3)), int(rnd.integers(1, max_width + 1))) for i in range(n)]
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rnd.random() < 0.3]
    return OperatorGraph(nodes, edges)


def brute_priorities(G, s):
    P = {}
    for v in G.dag.nodes:
        best = G[v].weight(s)
        for t in G.sinks:
            for path in nx.all_simple_paths(G.dag, v, t):
                best = max(best, sum(G[u].weight(s) for u in path))
        P[v] = best
    return P


def replay(alloc):
    """Parallelism implied by the recorded visits."""
    N = {}
    for rec in alloc.visits:
        N[rec.node] = 1
        for u, f in rec.factors:
            N[u] *= f
    return N


class TestEncoderGraph(TestCase):
    def test_exceps(self):
        with pytest.raises(InvalidConfig):
            build_encoder_graph(1, 10, 3, 30)
        with pytest.raises(InvalidConfig):
            build_encoder_graph(0, 768, 12, 30)
        with pytest.raises(InvalidConfig):
            op(0, 0, 0)
        with pytest.raises(InvalidConfig):
            op(0, 1, width=0)
        with pytest.raises(InvalidConfig):
            OperatorGraph([op(0, 1)], [(0, 1)])
        with pytest.raises(InvalidConfig):
            ResourceBudget(0)
        cyclic = OperatorGraph([op(0, 1), op(1, 1)], [(0, 1), (1, 0)])
        with pytest.raises(CyclicGraph):
            compute_priorities(cyclic, 10)
        with pytest.raises(CyclicGraph):
            allocate_stages(cyclic, 10, ResourceBudget())
        with pytest.raises(NodeExceedsBudget):
            allocate_stages(OperatorGraph([op(0, 1, width=9)], []), 10, ResourceBudget(8))

    def test_build(self):
        for name in ("bert-base", "bert-large", "distilbert"):
            m = models[name]
            G = build_encoder_graph(m.layers, m.hidden, m.heads, 30)
            self.assertEqual(m.layers, G.layers)
            self.assertTrue(nx.is_directed_acyclic_graph(G.dag))
            self.assertEqual(14, G.sink)
            self.assertEqual(15, len(G))
        G = build_encoder_graph(1, 4, 1, 1)
        self.assertTrue(nx.is_directed_acyclic_graph(G.dag))
        self.assertEqual([14], G.sinks)
        self.assertTrue(nx.has_path(G.dag, 9, 13))  # residual around the feed-forward block

    def test_dumps_graph(self):
        text = dumps_graph(build_encoder_graph(1, 4, 1, 2)).splitlines()
        self.assertEqual("graph encoder_h=4_H=1_k=2 layers=1 nodes=15 edges=16", text[0])
        self.assertEqual("node 0 q_proj MatMul a=16 c=0 width=4 phase=StateMM", text[1])
        self.assertEqual("node 3 atten_select AttenSelect a=10 c=0 width=4 phase=StateAtten", text[4])
        self.assertEqual("node 9 ln1 LayerNorm a=20 c=8 width=4 phase=StateFF", text[10])
        self.assertEqual("edge 13 14", text[-1])

    def test_weights(self):
        self.assertEqual(20, operator_weight(op(0, 2), 10))
        self.assertEqual(2 * operator_weight(op(0, 7), 13), operator_weight(op(0, 7), 26))
        G = build_encoder_graph(12, 768, 12, 30)
        self.assertEqual(2 * operator_weight(G[0], 177), operator_weight(G[0], 354))
        self.assertEqual(768 * 768 * 177, operator_weight(G[0], 177))

    def test_priorities(self):
        G = OperatorGraph([op(0, 3), op(1, 5)], [(0, 1)])
        self.assertEqual({0: 8, 1: 5}, compute_priorities(G, 1))
        G = OperatorGraph([op(0, 3)], [])
        self.assertEqual({0: 3}, compute_priorities(G, 1))
        G = build_encoder_graph(12, 768, 12, 30)
        P = compute_priorities(G, 177)
        self.assertEqual(operator_weight(G[14], 177), P[14])
        for u, v in G.edges:
            self.assertGreater(P[u], P[v])

    def test_priority_oracle(self):
        rnd = np.random.default_rng(0)
        for _ in range(500):
            G = random_graph(rnd)
            s = int(rnd.integers(1, 200))
            P = compute_priorities(G, s)
            self.assertEqual(brute_priorities(G, s), P)
            Gs = G.with_sink()
            self.assertEqual(P, {v: p for v, p in compute_priorities(Gs, s).items() if v in G.nodes})

    def test_hand_traced_allocation(self):
        # Priorities: op0 21, op2 11, op1 9, op3 5, op4 2.
        G = OperatorGraph([op(0, 10), op(1, 4), op(2, 6), op(3, 3), op(4, 2)], [(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)])
        alloc = allocate_stages(G, 1, ResourceBudget(8))
        self.assertEqual(((0, 2), (1, 3, 4)), alloc.stages)
        self.assertEqual({0: 2, 2: 1, 1: 4, 3: 2, 4: 1}, alloc.parallelism)
        self.assertEqual([False, True, False, True, True], [r.joined for r in alloc.visits])
        self.assertEqual(((1, 2), (3, 2)), alloc.visits[-1].factors)
        self.assertEqual([3, 7], [alloc.units(j) for j in range(2)])
        self.assertEqual((1, 1), alloc.replication)

    def test_degenerate_allocations(self):
        G = OperatorGraph([op(0, 10), op(1, 4), op(2, 6)], [(0, 1), (1, 2)])
        self.assertEqual(1, len(allocate_stages(G, 1, ResourceBudget(10**6))))
        alloc = allocate_stages(G, 1, ResourceBudget(1))
        self.assertEqual(((0,), (1,), (2,)), alloc.stages)

    def test_allocation_invariants(self):
        rnd = np.random.default_rng(1)
        for _ in range(200):
            G = random_graph(rnd).with_sink()
            s = int(rnd.integers(1, 100))
            budget = ResourceBudget(int(rnd.integers(4, 40)))
            alloc = allocate_stages(G, s, budget)
            members = [i for stage in alloc.stages for i in stage]
            self.assertEqual(sorted(G.hardware), sorted(members))
            self.assertEqual(len(members), len(set(members)))
            P = compute_priorities(G, s)
            self.assertTrue(all(P[a] >= P[b] for a, b in zip(members, members[1:])))
            for j in range(len(alloc)):
                self.assertLessEqual(alloc.units(j), budget.compute_units)
            self.assertEqual(alloc.parallelism, replay(alloc))
            self.assertEqual(alloc, allocate_stages(G, s, budget))

    def test_bert_budget(self):
        G = build_encoder_graph(12, 768, 12, 30)
        alloc = allocate_stages(G, 177, ResourceBudget())
        self.assertTrue(all(alloc.units(j) <= 3000 for j in range(len(alloc))))
        self.assertEqual("StateMM", alloc.phase(0))
        self.assertEqual("StateAtten", alloc.phase(1))
        self.assertEqual(8, stage_resource_cost([OperatorNode(0, "mm", OperatorKind.MatMul, 8, width=8)], {0: 1}))
        self.assertEqual(24, stage_resource_cost([OperatorNode(0, "mm", OperatorKind.MatMul, 8, width=8)], {0: 3}))

    def test_tile(self):
        G = OperatorGraph([op(0, 100, width=100)], [])
        try:
            setup(tile=16)
            self.assertEqual(16, allocate_stages(G, 1, ResourceBudget()).units(0))
        finally:
            setup(tile=64)
        self.assertEqual(64, allocate_stages(G, 1, ResourceBudget()).units(0))

    def test_replication_examples(self):
        """
        Two equal stages with room for three replicas give (1, 1), not (2, 1).

        Throughput is min_j R_j / latency_j, so (2, 1) and (1, 2) are no faster than (1, 1): the stage
        left at one replica still bounds the pipeline. All three tie, and the smallest replication wins.
        Listing (2, 1) as the answer for this case contradicts the rule that ties go to smaller R.
        """
        single = allocate_stages(OperatorGraph([op(0, 5, width=10)], []), 1, ResourceBudget(10))
        self.assertEqual((3,), enumerate_replication(single, 1, ResourceBudget(35)))
        self.assertEqual((8,), enumerate_replication(single, 1, ResourceBudget(1000)))
        pair = allocate_stages(OperatorGraph([op(0, 8), op(1, 8)], [(0, 1)]), 1, ResourceBudget(1))
        self.assertEqual((1, 1), enumerate_replication(pair, 1, ResourceBudget(3)))
        self.assertEqual((1, 1), enumerate_replication(pair, 1, ResourceBudget(2)))
        with self.assertLogs("lapis.encoder_graph", level="WARNING"):
            self.assertEqual((1, 1), enumerate_replication(pair, 1, ResourceBudget(1)))
        uneven = allocate_stages(OperatorGraph([op(0, 8), op(1, 4)], [(0, 1)]), 1, ResourceBudget(1))
        self.assertEqual((2, 1), enumerate_replication(uneven, 1, ResourceBudget(3)))

    def test_replication_oracle(self):
        rnd = np.random.default_rng(2)
        try:
            setup(r_max=4)
            for _ in range(100):
                G = random_graph(rnd, max_nodes=6)
                alloc = allocate_stages(G, 10, ResourceBudget(int(rnd.integers(4, 12))))
                if len(alloc) > 4:
                    continue
                budget = ResourceBudget(int(rnd.integers(1, 60)))
                costs = [alloc.units(j) for j in range(len(alloc))]
                lat = [alloc.cycles(j, 10) for j in range(len(alloc))]
                R = enumerate_replication(alloc, 10, budget)
                if sum(costs) > budget.compute_units:
                    self.assertEqual((1,) * len(alloc), R)
                    continue
                feasible = [
                    r for r in product(range(1, 5), repeat=len(alloc)) if sum(a * b for a, b in zip(r, costs)) <= budget.compute_units
                ]
                best = max(min(Fraction(a) / b for a, b in zip(r, lat)) for r in feasible)
                winners = [r for r in feasible if min(Fraction(a) / b for a, b in zip(r, lat)) == best]
                self.assertIn(R, winners)
                self.assertTrue(all(all(a <= b for a, b in zip(R, w)) for w in winners))
        finally:
            setup(r_max=8)

    def test_dumps_allocation(self):
        G = OperatorGraph([op(0, 10), op(1, 4), op(2, 6), op(3, 3), op(4, 2)], [(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)])
        alloc = allocate_stages(G, 1, ResourceBudget(8))
        alloc = alloc.with_replication(enumerate_replication(alloc, 1, ResourceBudget(20)))
        expected = [
            "allocation stages=2 s_avg=1 tile=64",
            "stage 0 phase=StateMM R=3 units=3 cycles=11",
            "  node 0 op0 N=2",
            "  node 2 op2 N=1",
            "stage 1 phase=StateMM R=1 units=7 cycles=9/2",
            "  node 1 op1 N=4",
            "  node 3 op3 N=2",
            "  node 4 op4 N=1",
        ]
        self.assertEqual(expected, dumps_allocation(alloc).splitlines())
