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
import json
import multiprocessing
import tempfile
from pathlib import Path
from unittest import TestCase

import pytest

from lapis.config import setup
from lapis.experiment import emit_gantt, emit_utilization, run_experiment, run_many, spot_check, utilization_table
from lapis.misc.exception import EmissionError, EmptyTrace
from lapis.pipeline_sim import PipelineTrace
from lapis.theme import ANSI, BW, HTML
from lapis.workload import loads_config


def small(output_dir, name="small", seed=0):
    doc = {
        "name": name,
        "model": {"layers": 2, "hidden": 64, "heads": 4},
        "k": 8,
        "workload": {"source": "uniform", "count": 12, "lo": 20, "hi": 60},
        "seed": seed,
        "spot_check": {"n": 16, "d": 8},
        "output_dir": str(output_dir),
    }
    return loads_config(json.dumps(doc))


class TestExperiment(TestCase):
    def test_files_are_reproducible(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = small(tmp)
            paths = run_experiment(config, write=False).write()
            names = {p.name for p in paths}
            self.assertEqual(
                {"report.json", "summary.txt"}
                | {f"{kind}-{label}.{ext}" for label in ("length-aware", "padded", "micro-batch-4") for kind, ext in [("trace", "txt"), ("gantt", "svg"), ("utilization", "tsv")]},
                names,
            )
            first = {p.name: p.read_bytes() for p in paths}
            run_experiment(config)
            self.assertEqual(first, {p.name: p.read_bytes() for p in paths})
            self.assertEqual([], list(Path(tmp, "small").glob(".*")))

    def test_report(self):
        with tempfile.TemporaryDirectory() as tmp:
            report = run_experiment(small(tmp), write=False)
            self.assertFalse(Path(tmp, "small").exists())
            doc = json.loads(report.dumps())
            mk = doc["comparison"]["makespan_cycles"]
            self.assertEqual(mk["padded"] / mk["length-aware"], doc["comparison"]["speedup"]["padded"])
            self.assertGreaterEqual(doc["comparison"]["speedup"]["padded"], 1)
            self.assertEqual(12, doc["workload"]["count"])
            self.assertEqual(2, doc["config"]["layers"])
            self.assertEqual(mk["padded"], report.traces["padded"].makespan)
            self.assertEqual(sum(len(s["operators"]) for s in doc["allocation"]["stages"]), 15)
            self.assertLessEqual(doc["allocation"]["units"], 3000)
            self.assertEqual(report.dumps(), run_experiment(small(tmp), write=False).dumps())
            self.assertNotEqual(report.dumps(), run_experiment(small(tmp, seed=1), write=False).dumps())

    def test_summary(self):
        with tempfile.TemporaryDirectory() as tmp:
            report = run_experiment(small(tmp), write=False)
        text = report.summary(BW)
        self.assertTrue(text.startswith("experiment small: custom (2 layers, h=64, 4 heads), k=8, 4 bits"))
        self.assertNotIn("\x1b", text)
        self.assertIn("padded", text)
        self.assertIn("\x1b[", report.summary(ANSI))
        self.assertTrue(report.summary(HTML).startswith("<!DOCTYPE html>"))

    def test_run_many(self):
        with tempfile.TemporaryDirectory() as tmp:
            configs = [small(tmp, "a"), small(tmp, "b", seed=2)]
            reports = run_many(configs, jobs=2)
            self.assertEqual(["a", "b"], [r.config.name for r in reports])
            self.assertEqual(reports[1].dumps(), run_experiment(configs[1], write=False).dumps())
            self.assertTrue(Path(tmp, "a", "report.json").exists())

    def test_run_many_settings(self):
        with tempfile.TemporaryDirectory() as tmp:
            configs = [small(tmp, "a"), small(tmp, "b", seed=2)]
            setup(tile=16, format=HTML)
            try:
                spawned = run_many(configs, jobs=2, context=multiprocessing.get_context("spawn"))
                self.assertTrue(Path(tmp, "b", "summary.html").exists())
                serial = run_many(configs)
            finally:
                setup(tile=64, format=BW)
            self.assertEqual([r.dumps() for r in serial], [r.dumps() for r in spawned])
            self.assertNotEqual(run_experiment(configs[0], write=False).dumps(), serial[0].dumps())

    def test_spot_check(self):
        s = spot_check(32, 16, 32, 4, 1)
        self.assertLessEqual(s["relative_error"], 1e-6)
        self.assertEqual(1.0, s["recall"])
        s = spot_check(64, 64, 30, 4, 0)
        self.assertEqual(30, s["k"])
        self.assertLess(s["exact_macs"], s["dense_exact_macs"])
        self.assertGreater(s["exact_reduction"], 0.5)

    def test_emission(self):
        with tempfile.TemporaryDirectory() as tmp:
            empty = PipelineTrace("empty", (), (), 1, (1,), 2, 1)
            with pytest.raises(EmptyTrace):
                emit_gantt(empty, Path(tmp) / "empty.svg")
            with pytest.raises(EmptyTrace):
                emit_utilization(empty, Path(tmp) / "empty.tsv")
            self.assertEqual([], list(Path(tmp).iterdir()))
            Path(tmp, "file").write_text("")
            report = run_experiment(small(tmp), write=False)
            with pytest.raises(EmissionError):
                emit_utilization(report.traces["padded"], Path(tmp) / "file" / "u.tsv")

    def test_utilization_table(self):
        with tempfile.TemporaryDirectory() as tmp:
            report = run_experiment(small(tmp), write=False)
        for window in ("stage", "global"):
            for trace in report.traces.values():
                rows = [line.split("\t") for line in utilization_table(trace, window).splitlines()]
                self.assertEqual(["stage", "replicas", "busy", "span", "fraction"], rows[0])
                self.assertEqual(len(report.allocation), len(rows) - 1)
                for stage, replicas, busy, span, fraction in rows[1:]:
                    self.assertLessEqual(int(busy), int(replicas) * int(span))
                    self.assertLessEqual(float(fraction), 1.0)

    def test_global_format(self):
        with tempfile.TemporaryDirectory() as tmp:
            setup(format=HTML)
            try:
                paths = run_experiment(small(tmp), write=False).write()
            finally:
                setup(format=BW)
            self.assertIn("summary.html", {p.name for p in paths})
