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
"""lapis simulates length-aware pipelines of Transformer encoders with Top-k sparse attention
(and provides the low-precision numerics, stage allocation and reporting around them)

>>> from lapis import quantize, sparse_attention, AttentionProblem
>>> p = AttentionProblem.random(8, 4, seed=0)
>>> sparse_attention(p, 8, 4).op_counts.exp_evals
64
"""

from .attention import AttentionProblem, dense_attention, encoder_forward, sparse_attention, topk_select
from .config import setup
from .encoder_graph import allocate_stages, build_encoder_graph, compute_priorities, enumerate_replication
from .experiment import Report, run_experiment, run_many
from .numerics import build_product_lut, quantize
from .pipeline_sim import PipelineConfig, baseline_microbatch, baseline_padded, compare, simulate
from .workload import ExperimentConfig, generate_workload, load_config

__pdoc__ = {
    "cli": False,
}
