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
"""Experiment files and synthetic sequence-length workloads

An experiment file is a JSON object. Only `model` is required:

    {
      "name": "bert-base-mrpc",
      "model": "bert-base",            # or {"layers": 2, "hidden": 64, "heads": 4}
      "k": 30, "bits": 4,
      "budget": {"compute_units": 3000, "clock_hz": 200000000},
      "workload": {"source": "dataset", "dataset": "mrpc", "count": 256},
      "layers": 12,                    # encoder layers to simulate, default: the model's
      "buffer_depth": 2, "micro_size": 4, "seed": 0,
      "spot_check": {"n": 64, "d": 64},
      "output_dir": "out"
    }

Workload sources: `file` (whitespace separated lengths at `path`), `uniform` (`lo`..`hi`),
`stats` (`avg`, `max`, optional `min` and `shape`) and `dataset` (the statistics of a named preset).
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from lapis.misc.core import derive_seed
from lapis.misc.exception import InfeasibleStats, ParseError, ValidationError
from lapis.numerics import SUPPORTED_BITS
from lapis.presets import DEFAULT_CLOCK_HZ, DEFAULT_K, DEFAULT_UNITS, Model, datasets, models

logger = logging.getLogger(__name__)

SOURCES = ("file", "stats", "uniform", "dataset")
TAIL = 1 / 256  # mass of the untruncated distribution above `max` when the shape is not given


@dataclass(frozen=True)
class WorkloadSpec:
    source: str = "dataset"
    count: int = 256
    dataset: Optional[str] = "squad"
    path: Optional[str] = None
    avg: Optional[float] = None
    max: Optional[int] = None
    min: int = 1
    shape: Optional[float] = None
    lo: Optional[int] = None
    hi: Optional[int] = None

    def stats(self):
        """(avg, max) targeted by a stats or dataset source."""
        if self.source == "dataset":
            return datasets[self.dataset]
        return self.avg, self.max


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    shape: Model
    name: str = "experiment"
    k: int = DEFAULT_K
    bits: int = 4
    compute_units: int = DEFAULT_UNITS
    clock_hz: int = DEFAULT_CLOCK_HZ
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    layers: Optional[int] = None
    buffer_depth: int = 2
    micro_size: int = 4
    seed: int = 0
    spot_n: int = 64
    spot_d: int = 64
    output_dir: str = "out"

    def __post_init__(self):
        if self.layers is None:
            object.__setattr__(self, "layers", self.shape.layers)


KEYS = {"name", "model", "k", "bits", "budget", "workload", "layers", "buffer_depth", "micro_size", "seed"}
KEYS |= {"spot_check", "output_dir"}
WORKLOAD_KEYS = {"source", "count", "dataset", "path", "avg", "max", "min", "shape", "lo", "hi"}


def _unknown(obj, allowed, prefix=""):
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ParseError(f"Unknown configuration key: {prefix}{extra[0]}", field=prefix + extra[0])


def _positive(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ValidationError(f"'{name}' must be an integer >= {minimum}: {value!r}", field=name)
    return value


def loads_config(text, base_dir=None):
    """
    Parse and validate the JSON text of an experiment.

    >>> c = loads_config('{"model": "bert-base"}')
    >>> c.k, c.bits, c.compute_units, c.clock_hz, c.buffer_depth, c.layers
    (30, 4, 3000, 200000000, 2, 12)
    >>> loads_config('{"model": "bert-base", "topk": 3}')
    Traceback (most recent call last):
    ...
    lapis.misc.exception.ParseError: Unknown configuration key: topk

    Parameters
    ----------
    text
        JSON document
    base_dir
        Directory against which a relative workload `path` is resolved
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"Line {e.lineno}, column {e.colno}: {e.msg}", line=e.lineno)
    if not isinstance(doc, dict):
        raise ParseError("An experiment file holds a JSON object.", line=1)
    _unknown(doc, KEYS)
    if "model" not in doc:
        raise ValidationError("Missing 'model'.", field="model")
    model = doc["model"]
    if isinstance(model, str):
        if model not in models:
            raise ValidationError(f"Unknown model preset: {model}; choose one of {sorted(models)}", field="model")
        name, shape = model, models[model]
    elif isinstance(model, dict):
        _unknown(model, {"layers", "hidden", "heads"}, "model.")
        try:
            shape = Model(*(_positive(model[f], f"model.{f}") for f in Model._fields))
        except KeyError as e:
            raise ValidationError(f"Custom model misses {e}", field=f"model.{e.args[0]}")
        if shape.hidden % shape.heads:
            raise ValidationError(f"hidden={shape.hidden} is not divisible by heads={shape.heads}", field="model.hidden")
        name = "custom"
    else:
        raise ValidationError(f"'model' must be a preset name or an object: {model!r}", field="model")

    kwargs = {}
    for key in ("k", "buffer_depth", "micro_size", "layers"):
        if key in doc:
            kwargs[key] = _positive(doc[key], key)
    if "seed" in doc:
        kwargs["seed"] = _positive(doc["seed"], "seed", minimum=0)
    if "bits" in doc:
        if doc["bits"] not in SUPPORTED_BITS:
            raise ValidationError(f"'bits' must be one of {SUPPORTED_BITS}: {doc['bits']!r}", field="bits")
        kwargs["bits"] = doc["bits"]
    for key in ("name", "output_dir"):
        if key in doc:
            if not isinstance(doc[key], str) or not doc[key]:
                raise ValidationError(f"'{key}' must be a nonempty string", field=key)
            kwargs[key] = doc[key]
    budget = doc.get("budget", {})
    _unknown(budget, {"compute_units", "clock_hz"}, "budget.")
    if "compute_units" in budget:
        kwargs["compute_units"] = _positive(budget["compute_units"], "budget.compute_units")
    if "clock_hz" in budget:
        kwargs["clock_hz"] = _positive(budget["clock_hz"], "budget.clock_hz")
    spot = doc.get("spot_check", {})
    _unknown(spot, {"n", "d"}, "spot_check.")
    if "n" in spot:
        kwargs["spot_n"] = _positive(spot["n"], "spot_check.n")
    if "d" in spot:
        kwargs["spot_d"] = _positive(spot["d"], "spot_check.d")
    if "workload" in doc:
        kwargs["workload"] = _workload(doc["workload"], base_dir)
    return ExperimentConfig(name, shape, **kwargs)


def _workload(doc, base_dir):
    if not isinstance(doc, dict):
        raise ValidationError("'workload' must be an object", field="workload")
    _unknown(doc, WORKLOAD_KEYS, "workload.")
    source = doc.get("source", "dataset")
    if source not in SOURCES:
        raise ValidationError(f"Unknown workload source: {source}; choose one of {SOURCES}", field="workload.source")
    count = _positive(doc.get("count", 256), "workload.count")
    if source == "file":
        if not isinstance(doc.get("path"), str):
            raise ValidationError("A file workload needs a 'path'", field="workload.path")
        path = Path(doc["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return WorkloadSpec("file", count, None, str(path))
    if source == "uniform":
        lo, hi = (_positive(doc.get(f), f"workload.{f}") for f in ("lo", "hi"))
        if lo > hi:
            raise ValidationError(f"Empty range: lo={lo} > hi={hi}", field="workload.lo")
        return WorkloadSpec("uniform", count, None, lo=lo, hi=hi)
    if source == "dataset":
        name = doc.get("dataset", "squad")
        if name not in datasets:
            raise ValidationError(f"Unknown dataset preset: {name}; choose one of {sorted(datasets)}", field="workload.dataset")
        return WorkloadSpec("dataset", count, name)
    avg = doc.get("avg")
    if isinstance(avg, bool) or not isinstance(avg, (int, float)) or not avg > 0:
        raise ValidationError(f"'avg' must be a positive number: {avg!r}", field="workload.avg")
    mx = _positive(doc.get("max"), "workload.max")
    mn = _positive(doc.get("min", 1), "workload.min")
    shape = doc.get("shape")
    if shape is not None and (isinstance(shape, bool) or not isinstance(shape, (int, float)) or not shape > 0):
        raise ValidationError(f"'shape' must be a positive number: {shape!r}", field="workload.shape")
    return WorkloadSpec("stats", count, None, avg=avg, max=mx, min=mn, shape=shape)


def load_config(path):
    """Read an experiment file; a relative workload path is taken relative to the file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ParseError(f"Cannot read {path}: {e.strerror}")
    return loads_config(text, path.parent)


def dump_config(config):
    """
    JSON text that `loads_config` turns back into an equal config.

    >>> c = loads_config('{"model": {"layers": 2, "hidden": 64, "heads": 4}, "seed": 7}')
    >>> loads_config(dump_config(c)) == c
    True
    """
    w = {k: v for k, v in asdict(config.workload).items() if v is not None}
    if config.workload.source != "stats":
        w.pop("min")
    doc = {
        "name": config.name,
        "model": config.model if config.model != "custom" else dict(config.shape._asdict()),
        "k": config.k,
        "bits": config.bits,
        "budget": {"compute_units": config.compute_units, "clock_hz": config.clock_hz},
        "workload": w,
        "layers": config.layers,
        "buffer_depth": config.buffer_depth,
        "micro_size": config.micro_size,
        "seed": config.seed,
        "spot_check": {"n": config.spot_n, "d": config.spot_d},
        "output_dir": config.output_dir,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _truncated_mean(mu, sigma, lo, hi):
    """Mean of exp(N(mu, sigma²)) restricted to [lo, hi]."""
    a, b = (math.log(lo) - mu) / sigma, (math.log(hi) - mu) / sigma
    mass = norm.cdf(b) - norm.cdf(a)
    return math.exp(mu + sigma**2 / 2) * (norm.cdf(b - sigma) - norm.cdf(a - sigma)) / mass


def fit_lognormal(avg, mx, mn=1, shape=None):
    """
    Parameters (mu, sigma) of a log-normal truncated to [mn, mx] whose mean is `avg`.

    Without a `shape`, sigma is chosen so that a fraction 1/256 of the untruncated distribution lies above `mx`.

    >>> mu, sigma = fit_lognormal(53, 86)
    >>> round(sigma, 2), round(_truncated_mean(mu, sigma, 1, 86), 6)
    (0.19, 53.0)
    """
    if not mn < avg < mx:
        raise InfeasibleStats(f"Average length {avg} must lie strictly between min {mn} and max {mx}")
    lo, hi = mn, mx
    try:
        if shape is None:
            z = norm.ppf(1 - TAIL)
            sigma = brentq(lambda s: _truncated_mean(math.log(mx) - z * s, s, lo, hi) - avg, 1e-3, 5.0)
            return math.log(mx) - z * sigma, sigma
        span = 4 * shape
        mu = brentq(lambda m: _truncated_mean(m, shape, lo, hi) - avg, math.log(lo) - span, math.log(hi) + span)
        return mu, shape
    except (ValueError, ZeroDivisionError) as e:
        raise InfeasibleStats(f"No log-normal on [{mn}, {mx}] has mean {avg}: {e}")


def generate_workload(spec, seed):
    """
    Sequence lengths of a workload, deterministic for a given seed.

    >>> generate_workload(WorkloadSpec("uniform", 5, None, lo=3, hi=3), seed=0)
    [3, 3, 3, 3, 3]
    >>> lengths = generate_workload(WorkloadSpec("dataset", 1000, "mrpc"), seed=1)
    >>> len(lengths), 1 <= min(lengths), max(lengths) <= 86
    (1000, True, True)
    """
    rnd = np.random.default_rng(derive_seed(seed, "workload"))
    if spec.source == "file":
        return read_lengths(spec.path)
    if spec.source == "uniform":
        return rnd.integers(spec.lo, spec.hi + 1, size=spec.count).tolist()
    if spec.source not in ("stats", "dataset"):
        raise ValidationError(f"Unknown workload source: {spec.source}", field="workload.source")
    avg, mx = spec.stats()
    mn = spec.min if spec.source == "stats" else 1
    mu, sigma = fit_lognormal(avg, mx, mn, spec.shape)
    logger.debug(f"log-normal fit for avg={avg} max={mx}: mu={mu:.4f} sigma={sigma:.4f}")
    # Inverse transform sampling restricted to the truncation interval.
    a, b = norm.cdf((math.log(mn) - mu) / sigma), norm.cdf((math.log(mx) - mu) / sigma)
    x = np.exp(mu + sigma * norm.ppf(rnd.uniform(a, b, size=spec.count)))
    return np.clip(np.floor(x + 0.5), mn, mx).astype(int).tolist()


def read_lengths(path):
    """Whitespace separated positive integers of a text file."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise ParseError(f"Cannot read lengths from {path}: {e.strerror}")
    lengths = []
    for n, line in enumerate(lines, start=1):
        for token in line.split():
            try:
                value = int(token)
            except ValueError:
                raise ParseError(f"{path}, line {n}: not an integer length: {token}", line=n)
            if value < 1:
                raise ValidationError(f"{path}, line {n}: length {value} < 1", field="workload.path")
            lengths.append(value)
    if not lengths:
        raise ValidationError(f"{path} holds no lengths", field="workload.path")
    return lengths


def with_overrides(config, seed=None, output_dir=None):
    """Config with command-line overrides applied."""
    changes = {k: v for k, v in (("seed", seed), ("output_dir", output_dir)) if v is not None}
    return replace(config, **changes)
