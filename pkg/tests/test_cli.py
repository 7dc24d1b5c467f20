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
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from io import StringIO
from pathlib import Path
from unittest import TestCase

import pytest

from lapis.cli import main
from lapis.config import GLOBAL, setup
from lapis.theme import BW

EXPERIMENT = {
    "name": "tiny",
    "model": {"layers": 1, "hidden": 32, "heads": 2},
    "k": 4,
    "workload": {"source": "uniform", "count": 6, "lo": 5, "hi": 40},
    "spot_check": {"n": 8, "d": 4},
}


def call(*argv):
    out, err = StringIO(), StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


class TestCli(TestCase):
    def tearDown(self):
        setup(format=BW, window="stage")

    def test_run_and_gantt(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            (tmp / "tiny.json").write_text(json.dumps(EXPERIMENT))
            code, out, err = call("run", str(tmp / "tiny.json"), "--out", str(tmp / "out"), "--seed", "5")
            self.assertEqual((0, ""), (code, err))
            self.assertIn("experiment tiny", out)
            report = json.loads((tmp / "out" / "tiny" / "report.json").read_text())
            self.assertEqual(5, report["config"]["seed"])
            trace = tmp / "out" / "tiny" / "trace-padded.txt"
            code, out, err = call("gantt", str(trace), str(tmp / "padded.svg"))
            self.assertEqual(0, code)
            self.assertTrue((tmp / "padded.svg").read_text().lstrip().startswith("<?xml"))

    def test_options(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            (tmp / "tiny.json").write_text(json.dumps(EXPERIMENT))
            code, out, err = call("--format", "html", "--window", "global", "run", str(tmp / "tiny.json"), "--out", str(tmp))
            self.assertEqual(0, code)
            self.assertEqual("global", GLOBAL["window"])
            self.assertTrue((tmp / "tiny" / "summary.html").exists())
            self.assertIn("<!DOCTYPE html>", out)

    def test_allocate(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "tiny.json"
            path.write_text(json.dumps(EXPERIMENT))
            code, out, err = call("allocate", str(path))
        self.assertEqual(0, code)
        self.assertTrue(out.startswith("allocation stages="))
        self.assertIn("node 0 q_proj", out)

    def test_bench_attention(self):
        code, out, err = call("bench-attention", "--n", "16", "--d", "8", "--k", "16", "--bits", "8")
        self.assertEqual(0, code)
        fields = dict(line.split("\t") for line in out.splitlines())
        self.assertEqual("16", fields["k"])
        self.assertLessEqual(float(fields["relative_error"]), 1e-6)

    def test_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            code, out, err = call("run", str(tmp / "missing.json"))
            self.assertEqual(1, code)
            self.assertTrue(err.startswith("lapis: error: Cannot read"))
            (tmp / "bad.json").write_text('{"model": "bert-base", "topk": 1}')
            code, out, err = call("allocate", str(tmp / "bad.json"))
            self.assertEqual((1, "lapis: error: Unknown configuration key: topk\n"), (code, err))
            (tmp / "trace.txt").write_text("not a trace\n")
            code, out, err = call("gantt", str(tmp / "trace.txt"), str(tmp / "x.svg"))
            self.assertEqual(1, code)
            self.assertFalse((tmp / "x.svg").exists())
            code, out, err = call("gantt", str(tmp / "none.txt"), str(tmp / "x.svg"))
            self.assertEqual(1, code)
        with pytest.raises(SystemExit) as e, redirect_stderr(StringIO()):
            main(["bench-attention", "--bits", "3"])
        self.assertEqual(2, e.value.code)
