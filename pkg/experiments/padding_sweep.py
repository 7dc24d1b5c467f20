"""
Length-aware speedup against padding for every model and dataset preset.

Compares the simulated speedup to the analytic max/avg padding overhead of each batch.
"""
from dataclasses import replace

from lapis.experiment import run_experiment
from lapis.presets import datasets, models, padding_overhead
from lapis.workload import WorkloadSpec, loads_config

for model in models:
    for dataset in datasets:
        config = loads_config(f'{{"model": "{model}", "name": "{model}-{dataset}"}}')
        config = replace(config, workload=WorkloadSpec("dataset", 256, dataset))
        report = run_experiment(config, write=False)
        speedup = report.comparison.speedups["padded"]
        print(f"{model:<11} {dataset:<7} speedup {speedup:5.2f}x  overhead {padding_overhead(report.lengths):5.2f}x")
