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
"""Experiment orchestration and file emission

`run_experiment` chains workload generation, graph construction, stage allocation, replication,
the three schedules and a numeric spot-check of sparse attention, then writes every artifact
under `<output_dir>/<name>/`:

    report.json                  machine-readable report (keys sorted, blake3 digest included)
    summary.<txt|ans|html>       human-readable summary in the configured format
    trace-<label>.txt            line-oriented schedules
    gantt-<label>.svg            timing diagrams
    utilization-<label>.tsv      per-stage busy fractions

Every file is written to a temporary name and renamed, so readers never see partial output.
"""
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from lapis.attention import AttentionProblem, count_ops, dense_attention, sparse_attention, topk_recall
from lapis.config import GLOBAL, setup
from lapis.encoder_graph import (
    ResourceBudget,
    allocate_stages,
    build_encoder_graph,
    compute_priorities,
    dumps_allocation,
    enumerate_replication,
)
from lapis.misc.colors import hexcolor, paint, render, task_rgb
from lapis.misc.core import derive_seed, digest
from lapis.misc.exception import EmissionError
from lapis.pipeline_sim import (
    PipelineConfig,
    baseline_microbatch,
    baseline_padded,
    compare,
    dumps_trace,
    simulate,
    stage_usage,
    tasks,
)
from lapis.presets import padding_overhead
from lapis.workload import dump_config, generate_workload

logger = logging.getLogger(__name__)

LABEL_LIMIT = 400  # events above which Gantt rectangles are left unlabeled

GOLD, GREEN, BLUE, GREY = [230, 190, 60], [90, 200, 90], [100, 150, 250], [170, 170, 170]


def atomic_write(path, data):
    """Write text or bytes to `path` through a temporary file in the same directory."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, mode) as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as e:
        raise EmissionError(f"Cannot write {path}: {e.strerror or e}")
    return path


def spot_check(n, d, k, bits, seed):
    """
    Sparse against dense attention on a random problem.

    >>> spot_check(16, 8, 16, 4, 0)["relative_error"] <= 1e-6
    True
    """
    p = AttentionProblem.random(n, d, seed=derive_seed(seed, "spot-check"))
    out = sparse_attention(p, k, bits)
    dense = dense_attention(p)
    sparse_ops, dense_ops = count_ops(n, d, k, bits, "sparse"), count_ops(n, d, k, bits, "dense")
    return {
        "n": n,
        "d": d,
        "k": min(k, n),
        "bits": bits,
        "relative_error": float(np.max(np.abs(out.Z - dense)) / np.max(np.abs(dense))),
        "recall": topk_recall(p, out.selection),
        "exact_macs": out.op_counts.exact_macs,
        "dense_exact_macs": dense_ops.exact_macs,
        "lowbit_macs": out.op_counts.lowbit_macs,
        "exact_reduction": 1 - sparse_ops.exact_macs / dense_ops.exact_macs,
    }


@dataclass(frozen=True, eq=False)
class Report:
    config: object
    lengths: tuple
    allocation: object
    priorities: dict
    traces: dict
    comparison: object
    spot: dict

    @property
    def dir(self):
        return Path(self.config.output_dir) / self.config.name

    def as_dict(self):
        cfg, alloc = self.config, self.allocation
        stages = []
        for j, stage in enumerate(alloc.stages):
            stages.append(
                {
                    "operators": [alloc.graph[i].name for i in stage],
                    "parallelism": [alloc.parallelism[i] for i in stage],
                    "phase": alloc.phase(j),
                    "replication": alloc.replication[j],
                    "units": alloc.units(j),
                    "cycles_at_avg": str(alloc.cycles(j, alloc.s_avg)),
                }
            )
        n = len(self.lengths)
        return {
            "name": cfg.name,
            "config": json.loads(dump_config(cfg)),
            "workload": {
                "count": n,
                "avg": sum(self.lengths) / n,
                "min": min(self.lengths),
                "max": max(self.lengths),
                "padding_overhead": padding_overhead(self.lengths),
            },
            "allocation": {
                "stages": stages,
                "units": sum(alloc.units(j) * alloc.replication[j] for j in range(len(alloc))),
                "priorities": {alloc.graph[i].name: str(p) for i, p in sorted(self.priorities.items())},
            },
            "comparison": self.comparison.as_dict(),
            "traces": {
                label: {
                    "file": f"trace-{label}.txt",
                    "makespan_cycles": t.makespan,
                    "seconds": t.seconds,
                    "digest": t.digest,
                }
                for label, t in self.traces.items()
            },
            "spot_check": self.spot,
        }

    def dumps(self):
        """JSON text of the report, with the digest of its own content."""
        doc = self.as_dict()
        doc["digest"] = digest(json.dumps(doc, sort_keys=True))
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def summary(self, format=None):
        """Human-readable summary rendered as BW, ANSI or HTML (default: GLOBAL["format"])."""
        cfg, alloc, c = self.config, self.allocation, self.comparison
        n = len(self.lengths)
        avg = sum(self.lengths) / n
        shape = cfg.shape
        lines = [
            f"experiment {paint(cfg.name, GOLD)}: {cfg.model} ({shape.layers} layers, h={shape.hidden}, "
            f"{shape.heads} heads), k={cfg.k}, {cfg.bits} bits",
            f"workload: {n} sequences, avg {avg:.1f}, max {max(self.lengths)}, "
            f"padding overhead {paint(f'{padding_overhead(self.lengths):.2f}x', GREY)}",
            f"allocation: {len(alloc)} stages, replication {alloc.replication}",
        ]
        for j, stage in enumerate(alloc.stages):
            names = " ".join(alloc.graph[i].name for i in stage)
            lines.append(f"  stage {j} {alloc.phase(j)} R={alloc.replication[j]} units={alloc.units(j)}: {names}")
        clock = cfg.clock_hz
        for label, cycles in c.makespans.items():
            line = f"{label:<16} makespan {cycles} cycles ({cycles / clock * 1e3:.4f} ms)"
            if label in c.speedups:
                line += f", length-aware speedup {paint(f'{c.speedups[label]:.2f}x', GREEN)}, saved {c.saved[label]} cycles"
            lines.append(line)
        s = self.spot
        lines.append(
            f"spot check: n={s['n']} d={s['d']} k={s['k']} relative error "
            + paint(f"{s['relative_error']:.3g}", BLUE)
            + f", recall {s['recall']:.3f}, exact work -{100 * s['exact_reduction']:.1f}%"
        )
        return render("\n".join(lines) + "\n", format, title=cfg.name)

    def write(self):
        """Write every artifact; return their paths."""
        fmt = GLOBAL["format"]
        paths = [atomic_write(self.dir / "report.json", self.dumps())]
        paths.append(atomic_write(self.dir / f"summary.{fmt.suffix}", self.summary(fmt)))
        for label, trace in self.traces.items():
            paths.append(atomic_write(self.dir / f"trace-{label}.txt", dumps_trace(trace) + "\n"))
            paths.append(emit_gantt(trace, self.dir / f"gantt-{label}.svg"))
            paths.append(emit_utilization(trace, self.dir / f"utilization-{label}.tsv"))
        logger.info(f"{len(paths)} files written to {self.dir}")
        return paths


def plan(config):
    """Workload, budget, node priorities and replicated stage allocation of an experiment."""
    lengths = generate_workload(config.workload, config.seed)
    s_avg = Fraction(sum(lengths), len(lengths))
    shape = config.shape
    G = build_encoder_graph(shape.layers, shape.hidden, shape.heads, config.k)
    budget = ResourceBudget(config.compute_units, config.clock_hz)
    priorities = compute_priorities(G, s_avg)
    alloc = allocate_stages(G, s_avg, budget)
    alloc = alloc.with_replication(enumerate_replication(alloc, s_avg, budget))
    logger.debug("\n" + dumps_allocation(alloc))
    return lengths, budget, priorities, alloc


def run_experiment(config, write=True):
    """
    Simulate the length-aware schedule and its padded baselines for one experiment.

    Parameters
    ----------
    config
        ExperimentConfig
    write
        Emit the files under `<output_dir>/<name>/`

    Returns
    -------
        Report
    """
    lengths, budget, priorities, alloc = plan(config)
    pconfig = PipelineConfig(alloc, budget, config.layers, tasks(lengths), config.buffer_depth)
    traces = [simulate(pconfig), baseline_padded(pconfig), baseline_microbatch(pconfig, config.micro_size)]
    for trace in traces:
        trace.verify()
    comparison = compare(*traces)
    spot = spot_check(config.spot_n, config.spot_d, config.k, config.bits, config.seed)
    report = Report(config, tuple(lengths), alloc, priorities, {t.label: t for t in traces}, comparison, spot)
    logger.info(f"{config.name}: speedups {comparison.speedups}")
    if write:
        report.write()
    return report


def _adopt(settings):
    setup(**settings)


def run_many(configs, jobs=1, context=None):
    """
    Independent experiments, in parallel processes when `jobs` > 1; reports keep the input order.

    Workers start from the caller's `GLOBAL` settings, whatever the start method of `context`
    (a `multiprocessing` context; default: the platform's).
    """
    if jobs <= 1 or len(configs) <= 1:
        return [run_experiment(c) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs, mp_context=context, initializer=_adopt, initargs=(dict(GLOBAL),)) as pool:
        return list(pool.map(run_experiment, configs))


def emit_gantt(trace, path):
    """
    SVG timing diagram: one lane per stage replica, one rectangle per work item colored by task.

    Rectangles are labeled "task:layer" while the trace is small enough to read them.
    The drawing carries no date and fixed element ids, so equal traces give equal files.
    """
    trace._check()
    lanes = [(j, r) for j in range(trace.stages) for r in range(trace.replication[j])]
    ypos = {lane: len(lanes) - 1 - y for y, lane in enumerate(lanes)}
    with matplotlib.rc_context({"svg.hashsalt": "lapis", "svg.fonttype": "path"}):
        fig = Figure(figsize=(12, 1 + 0.5 * len(lanes)))
        ax = fig.add_subplot()
        for lane in lanes:
            evs = [e for e in trace.events if (e.stage, e.replica) == lane]
            if not evs:
                continue
            colors = [hexcolor(task_rgb(e.task)) for e in evs]
            ax.broken_barh([(e.start, e.duration) for e in evs], (ypos[lane], 0.8), facecolors=colors, edgecolor="black", linewidth=0.3)
            if len(trace.events) <= LABEL_LIMIT:
                for e in evs:
                    ax.text(e.start + e.duration / 2, ypos[lane] + 0.4, f"{e.task}:{e.layer}", ha="center", va="center", fontsize=6)
        ax.set_yticks([ypos[lane] + 0.4 for lane in lanes])
        ax.set_yticklabels([f"stage {j}" + (f"/{r}" if trace.replication[j] > 1 else "") for j, r in lanes])
        ax.set_xlim(trace.start, trace.end)
        ax.set_xlabel("cycles")
        ax.set_title(f"{trace.label}: makespan {trace.makespan} cycles")
        ax.grid(True, axis="x", linewidth=0.3)
        buffer = io.BytesIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    return atomic_write(path, buffer.getvalue())


def emit_utilization(trace, path, window=None):
    """
    Tab separated per-stage table: stage, replicas, busy, span, fraction.

    >>> from lapis.encoder_graph import OperatorGraph, OperatorNode, OperatorKind
    >>> alloc = allocate_stages(OperatorGraph([OperatorNode(0, "mm", OperatorKind.MatMul, 1)], []), 10, ResourceBudget())
    >>> trace = simulate(PipelineConfig(alloc, ResourceBudget(), 1, tasks([10])))
    >>> [row.split() for row in utilization_table(trace).splitlines()]
    [['stage', 'replicas', 'busy', 'span', 'fraction'], ['0', '1', '10', '10', '1.000000']]
    """
    return atomic_write(path, utilization_table(trace, window))


def utilization_table(trace, window=None):
    rows = ["stage\treplicas\tbusy\tspan\tfraction"]
    for u in stage_usage(trace, window):
        rows.append(f"{u.stage}\t{u.replicas}\t{u.busy}\t{u.span}\t{u.fraction:.6f}")
    return "\n".join(rows) + "\n"

