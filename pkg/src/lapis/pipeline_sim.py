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
"""Event-driven simulation of the length-aware coarse-grained pipeline

Work items are (task, layer, stage) triples. A stage replica starts the best ready item, ordered by
(layer, position in the sorted batch), as soon as the item has left the previous stage. A replica that
finishes into a full buffer keeps its item, and stays unavailable, until the next stage starts a buffered
item. Times are integer cycles.

>>> from lapis.encoder_graph import OperatorGraph, OperatorNode, OperatorKind, ResourceBudget, allocate_stages
>>> chain = [OperatorNode(i, f"op{i}", OperatorKind.MatMul, 2, width=1) for i in range(3)]
>>> alloc = allocate_stages(OperatorGraph(chain, [(0, 1), (1, 2)]), 100, ResourceBudget(1))
>>> config = PipelineConfig(alloc, ResourceBudget(1), 1, tasks([72, 140, 100, 88, 95]))
>>> trace = simulate(config)
>>> trace.makespan, baseline_padded(config).makespan
(1550, 1960)
>>> utilization(trace)
[1.0, 1.0, 1.0]
"""
import heapq
import logging
from collections import namedtuple
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional

from lapis.config import GLOBAL
from lapis.encoder_graph import ResourceBudget, StageAllocation
from lapis.misc.core import digest
from lapis.misc.exception import EmptyBatch, EmptyTrace, InvalidConfig, ParseError, WorkloadMismatch
from lapis.misc.math import ceil_int

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SequenceTask:
    id: int
    length: int
    arrival: int = 0

    def __post_init__(self):
        if self.length < 1:
            raise InvalidConfig(f"Task {self.id} has length {self.length} < 1")


def tasks(lengths):
    """
    Tasks numbered in arrival order.

    >>> tasks([3, 5])
    (SequenceTask(id=0, length=3, arrival=0), SequenceTask(id=1, length=5, arrival=1))
    """
    return tuple(SequenceTask(i, int(s), i) for i, s in enumerate(lengths))


def sort_batch(batch):
    """
    Longest first; equal lengths keep their arrival order.

    >>> [t.length for t in sort_batch(tasks([72, 140, 100, 88, 95]))]
    [140, 100, 95, 88, 72]
    """
    if not batch:
        raise EmptyBatch("Cannot schedule an empty batch.")
    return sorted(batch, key=lambda t: (-t.length, t.arrival))


@dataclass(frozen=True, eq=False)
class PipelineConfig:
    allocation: StageAllocation
    budget: ResourceBudget
    layers: int
    batch: tuple
    buffer_depth: int = 2

    def __post_init__(self):
        if self.buffer_depth < 1:
            raise InvalidConfig(f"Buffer depth must be at least 1: {self.buffer_depth}")
        if self.layers < 1:
            raise InvalidConfig(f"At least one layer expected: {self.layers}")
        object.__setattr__(self, "batch", tuple(self.batch))

    @property
    def graph(self):
        return self.allocation.graph

    @property
    def stages(self):
        return len(self.allocation)


def item_cycles(config, stage, length):
    """Integer cycles one replica of `stage` is busy with a sequence of `length` tokens."""
    return max(1, ceil_int(config.allocation.cycles(stage, length)))


def stage_latency(stage, length, config):
    """
    Amortized seconds per sequence: busy cycles of one replica, divided by the replication, over the clock.

    >>> from lapis.encoder_graph import OperatorGraph, OperatorNode, OperatorKind, ResourceBudget, allocate_stages
    >>> from lapis.config import setup
    >>> setup(tile=200)
    >>> v = OperatorNode(0, "mm", OperatorKind.MatMul, 20, width=200)
    >>> alloc = allocate_stages(OperatorGraph([v], []), 100, ResourceBudget(200))
    >>> stage_latency(0, 100, PipelineConfig(alloc, ResourceBudget(200), 1, tasks([100])))
    Fraction(1, 20000000)
    >>> setup(tile=64)
    """
    return Fraction(item_cycles(config, stage, length), config.allocation.replication[stage] * config.budget.clock_hz)


@dataclass(frozen=True)
class TraceEvent:
    stage: int
    replica: int
    task: int
    layer: int
    start: int
    end: int
    state: str
    release: Optional[int] = None  # when the item entered the next buffer, if its replica had to hold it

    @property
    def duration(self):
        return self.end - self.start

    @property
    def handoff(self):
        """Time the replica is free again."""
        return self.end if self.release is None else self.release


StageUsage = namedtuple("StageUsage", "stage replicas busy span fraction")


@dataclass(frozen=True, eq=False)
class PipelineTrace:
    """
    Busy intervals of every stage replica, plus the identity of the simulated workload.

    `lengths` are the real task lengths indexed by task id, whatever length the schedule charged them for.
    """

    label: str
    events: tuple
    lengths: tuple
    layers: int
    replication: tuple
    buffer_depth: int
    clock_hz: int

    def __eq__(self, other):
        return dumps_trace(self) == dumps_trace(other)

    @property
    def stages(self):
        return len(self.replication)

    @property
    def start(self):
        self._check()
        return min(e.start for e in self.events)

    @property
    def end(self):
        self._check()
        return max(e.end for e in self.events)

    @property
    def makespan(self):
        """Cycles from the first start to the last end."""
        return self.end - self.start

    @property
    def seconds(self):
        return self.makespan / self.clock_hz

    @property
    def digest(self):
        return digest(dumps_trace(self))

    def _check(self):
        if not self.events:
            raise EmptyTrace(f"Trace '{self.label}' has no events.")

    def stage_events(self, stage):
        return [e for e in self.events if e.stage == stage]

    def busy(self, stage):
        """Busy cycles of a stage, summed over its replicas."""
        return sum(e.duration for e in self.stage_events(stage))

    def bottleneck(self):
        """Stage with the largest busy time per replica (lowest index on ties)."""
        return max(range(self.stages), key=lambda j: (Fraction(self.busy(j), self.replication[j]), -j))

    def idle(self, stage):
        """Idle replica-cycles of a stage within its own [first start, last end] window."""
        evs = self.stage_events(stage)
        span = max(e.end for e in evs) - min(e.start for e in evs)
        return self.replication[stage] * span - self.busy(stage)

    def verify(self):
        """
        Check replica exclusivity, item dependencies and buffer occupancy; raise AssertionError otherwise.
        """
        self._check()
        K = self.stages
        by_item = {(e.task, e.layer, e.stage): e for e in self.events}
        assert len(by_item) == len(self.events), "duplicated work item"
        assert len(by_item) == len(self.lengths) * self.layers * K, "missing work items"
        lanes = {}
        for e in self.events:
            assert e.end > e.start, f"empty interval {e}"
            assert 0 <= e.replica < self.replication[e.stage], f"unknown replica {e}"
            lanes.setdefault((e.stage, e.replica), []).append(e)
        for lane in lanes.values():
            lane.sort(key=lambda e: e.start)
            for a, b in zip(lane, lane[1:]):
                assert a.handoff <= b.start, f"overlap {a} {b}"
        for (task, layer, stage), e in by_item.items():
            assert e.handoff >= e.end, f"release before end {e}"
            if stage > 0:
                assert by_item[task, layer, stage - 1].handoff <= e.start, f"dependency {e}"
            elif layer > 0:
                assert by_item[task, layer - 1, K - 1].end <= e.start, f"layer dependency {e}"
        for j in range(K - 1):
            # An item occupies buffer j from its handoff by stage j until stage j+1 starts it.
            marks = []
            for (task, layer, stage), e in by_item.items():
                if stage == j:
                    marks.append((e.handoff, 1))
                    marks.append((by_item[task, layer, j + 1].start, -1))
            occupied = 0
            for _, delta in sorted(marks):
                occupied += delta
                assert occupied <= self.buffer_depth, f"buffer {j} overflow"
        return True


def _simulate(config, charged, label):
    """
    Run the event loop; `charged[task.id]` is the length a task is charged for at every stage.

    A replica that finishes into a full buffer keeps the item, and stays unavailable, until the next stage
    starts one of the buffered items.
    """
    order = sort_batch(config.batch)
    alloc = config.allocation
    K, L, depth = len(alloc), config.layers, config.buffer_depth
    R = alloc.replication
    cycles = {}
    for t in order:
        s = charged[t.id]
        if s not in cycles:
            cycles[s] = [item_cycles(config, j, s) for j in range(K)]
    states = [alloc.phase(j) for j in range(K)]
    ready = [[] for _ in range(K)]
    for p in range(len(order)):
        ready[0].append((0, p))
    heapq.heapify(ready[0])
    idle = [list(range(R[j])) for j in range(K)]
    occupied = [0] * K  # finished items waiting in the buffer after stage j
    held = [[] for _ in range(K)]  # finished items whose replica waits for a free slot
    running, events = [], []
    now = 0
    while True:
        progress = True
        while progress:
            progress = False
            for j in reversed(range(K)):
                while idle[j] and ready[j]:
                    layer, p = heapq.heappop(ready[j])
                    replica = heapq.heappop(idle[j])
                    task = order[p]
                    end = now + cycles[charged[task.id]][j]
                    events.append(TraceEvent(j, replica, task.id, layer, now, end, states[j]))
                    heapq.heappush(running, (end, j, replica, layer, p, len(events) - 1))
                    if j > 0:
                        occupied[j - 1] -= 1
                        if held[j - 1]:
                            _, r, hlayer, hp, idx = heapq.heappop(held[j - 1])
                            if now > events[idx].end:
                                events[idx] = replace(events[idx], release=now)
                            occupied[j - 1] += 1
                            heapq.heappush(ready[j], (hlayer, hp))
                            heapq.heappush(idle[j - 1], r)
                    progress = True
        if not running:
            break
        now = running[0][0]
        while running and running[0][0] == now:
            _, j, replica, layer, p, idx = heapq.heappop(running)
            if j == K - 1:
                heapq.heappush(idle[j], replica)
                if layer < L - 1:
                    heapq.heappush(ready[0], (layer + 1, p))
            elif occupied[j] < depth:
                occupied[j] += 1
                heapq.heappush(idle[j], replica)
                heapq.heappush(ready[j + 1], (layer, p))
            else:
                heapq.heappush(held[j], (now, replica, layer, p, idx))
    if any(ready) or any(held):  # pragma: no cover
        raise RuntimeError("Pipeline stalled with pending work items.")
    events.sort(key=lambda e: (e.start, e.stage, e.replica))
    lengths = tuple(t.length for t in sorted(config.batch, key=lambda t: t.id))
    trace = PipelineTrace(label, tuple(events), lengths, L, tuple(R), depth, config.budget.clock_hz)
    logger.debug(f"{label}: {len(events)} events, makespan {trace.makespan} cycles")
    return trace


def simulate(config):
    """Length-aware schedule: every task is charged for its own length."""
    return _simulate(config, {t.id: t.length for t in config.batch}, "length-aware")


def baseline_padded(config):
    """Same schedule with every task padded to the longest length of the batch."""
    longest = max(t.length for t in sort_batch(config.batch))
    return _simulate(config, {t.id: longest for t in config.batch}, "padded")


def _shifted(e, offset):
    release = None if e.release is None else e.release + offset
    return replace(e, start=e.start + offset, end=e.end + offset, release=release)


def baseline_microbatch(config, micro_size):
    """
    Sorted batch cut into consecutive micro-batches, each padded to its own longest length.
    A micro-batch enters the pipeline only after the previous one has drained.
    """
    if micro_size < 1:
        raise InvalidConfig(f"Micro-batch size must be at least 1: {micro_size}")
    order = sort_batch(config.batch)
    events, offset = [], 0
    for i in range(0, len(order), micro_size):
        chunk = order[i : i + micro_size]
        part = _simulate(replace(config, batch=tuple(chunk)), {t.id: chunk[0].length for t in chunk}, "micro")
        events.extend(_shifted(e, offset) for e in part.events)
        offset += part.end
    lengths = tuple(t.length for t in sorted(config.batch, key=lambda t: t.id))
    events.sort(key=lambda e: (e.start, e.stage, e.replica))
    return PipelineTrace(
        f"micro-batch-{micro_size}",
        tuple(events),
        lengths,
        config.layers,
        config.allocation.replication,
        config.buffer_depth,
        config.budget.clock_hz,
    )


def stage_usage(trace, window=None):
    """
    Busy replica-cycles, window length and busy fraction of every stage.

    window "stage" measures each stage over its own [first start, last end];
    "global" measures every stage over the whole trace. Default: GLOBAL["window"].
    """
    trace._check()
    window = GLOBAL["window"] if window is None else window
    if window not in ("stage", "global"):
        raise InvalidConfig(f"Unknown utilization window: {window}")
    usage = []
    for j in range(trace.stages):
        evs = trace.stage_events(j)
        if window == "stage":
            span = max(e.end for e in evs) - min(e.start for e in evs)
        else:
            span = trace.makespan
        busy = sum(e.duration for e in evs)
        R = trace.replication[j]
        usage.append(StageUsage(j, R, busy, span, busy / (R * span)))
    return usage


def utilization(trace, window=None):
    """Busy fraction of every stage, see `stage_usage`."""
    return [u.fraction for u in stage_usage(trace, window)]


@dataclass(frozen=True)
class Comparison:
    """Makespans in cycles; speedup and saved cycles of the subject against each baseline."""

    subject: str
    makespans: dict
    speedups: dict
    saved: dict
    utilization: dict

    def as_dict(self):
        return {
            "subject": self.subject,
            "makespan_cycles": self.makespans,
            "speedup": self.speedups,
            "saved_cycles": self.saved,
            "utilization": self.utilization,
        }


def compare(subject, *baselines):
    """
    >>> from lapis.encoder_graph import OperatorGraph, OperatorNode, OperatorKind, ResourceBudget, allocate_stages
    >>> alloc = allocate_stages(OperatorGraph([OperatorNode(0, "mm", OperatorKind.MatMul, 1)], []), 10, ResourceBudget())
    >>> config = PipelineConfig(alloc, ResourceBudget(), 1, tasks([100, 50]))
    >>> c = compare(simulate(config), baseline_padded(config))
    >>> c.speedups, c.saved
    ({'padded': 1.3333333333333333}, {'padded': 50})
    """
    if not baselines:
        raise InvalidConfig("Nothing to compare against.")
    workload = (sorted(subject.lengths), subject.layers)
    traces = (subject,) + baselines
    for b in baselines:
        if (sorted(b.lengths), b.layers) != workload:
            raise WorkloadMismatch(f"Trace '{b.label}' simulates another workload than '{subject.label}'.")
    return Comparison(
        subject.label,
        {t.label: t.makespan for t in traces},
        {b.label: b.makespan / subject.makespan for b in baselines},
        {b.label: b.makespan - subject.makespan for b in baselines},
        {t.label: utilization(t) for t in traces},
    )


def dumps_trace(trace):
    """
    Line-oriented text of a trace; events ordered by (start, stage, replica).
    An event whose replica had to hold its item carries the release time as a last field.

    >>> from lapis.encoder_graph import OperatorGraph, OperatorNode, OperatorKind, ResourceBudget, allocate_stages
    >>> alloc = allocate_stages(OperatorGraph([OperatorNode(0, "mm", OperatorKind.MatMul, 1)], []), 10, ResourceBudget())
    >>> print(dumps_trace(simulate(PipelineConfig(alloc, ResourceBudget(), 1, tasks([3, 5])))))
    trace length-aware layers=1 stages=1 replication=1 buffer=2 clock=200000000 tasks=2
    lengths 3 5
    event 0 0 1 0 StateMM 0 5
    event 0 0 0 0 StateMM 5 8
    summary makespan=8 busy=8
    """
    lines = [
        f"trace {trace.label} layers={trace.layers} stages={trace.stages} "
        f"replication={','.join(map(str, trace.replication))} buffer={trace.buffer_depth} "
        f"clock={trace.clock_hz} tasks={len(trace.lengths)}",
        "lengths " + " ".join(map(str, trace.lengths)),
    ]
    for e in trace.events:
        held = "" if e.release is None else f" {e.release}"
        lines.append(f"event {e.stage} {e.replica} {e.task} {e.layer} {e.state} {e.start} {e.end}{held}")
    if trace.events:
        lines.append(f"summary makespan={trace.makespan} busy={','.join(str(trace.busy(j)) for j in range(trace.stages))}")
    return "\n".join(lines)


def loads_trace(text):
    """
    Inverse of `dumps_trace`; summary lines are recomputed, not read.

    >>> loads_trace("trace x layers=1 stages=1 replication=1 buffer=2 clock=10 tasks=1\\nlengths 4\\nevent 0 0 0 0 StateFF 0 4").makespan
    4
    >>> loads_trace("trace x layers=1\\nlengths 4")
    Traceback (most recent call last):
    ...
    lapis.misc.exception.ParseError: Line 1: missing trace fields: buffer, clock, replication, stages, tasks
    """
    lines = text.strip().splitlines()
    if not lines or not lines[0].startswith("trace "):
        raise ParseError("Line 1: a trace starts with a 'trace' header.", line=1)
    head = lines[0].split()
    label = head[1] if len(head) > 1 else ""
    fields = dict(f.split("=", 1) for f in head[2:] if "=" in f)
    missing = {"layers", "stages", "replication", "buffer", "clock", "tasks"} - set(fields)
    if missing:
        raise ParseError(f"Line 1: missing trace fields: {', '.join(sorted(missing))}", line=1)
    lengths, events = None, []
    for n, line in enumerate(lines[1:], start=2):
        parts = line.split()
        try:
            if parts[0] == "lengths":
                lengths = tuple(int(x) for x in parts[1:])
            elif parts[0] == "event":
                stage, replica, task, layer = map(int, parts[1:5])
                start, end = int(parts[6]), int(parts[7])
                release = int(parts[8]) if len(parts) > 8 else None
                events.append(TraceEvent(stage, replica, task, layer, start, end, parts[5], release))
            elif parts[0] != "summary":
                raise ParseError(f"Line {n}: unknown record '{parts[0]}'", line=n)
        except (ValueError, IndexError):
            raise ParseError(f"Line {n}: malformed record: {line}", line=n)
    if lengths is None:
        raise ParseError("Missing 'lengths' record.")
    try:
        replication = tuple(int(r) for r in fields["replication"].split(","))
        return PipelineTrace(
            label, tuple(events), lengths, int(fields["layers"]), replication, int(fields["buffer"]), int(fields["clock"])
        )
    except ValueError as e:
        raise ParseError(f"Line 1: malformed header: {e}", line=1)
