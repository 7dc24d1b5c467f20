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
"""Top-k sparse attention with quantized candidate pre-selection

Each query row is scored against every key in low precision (`numerics`), the best k keys are kept,
and only those are re-scored exactly, normalized and used to weight the value rows.
`dense_attention` is the full precision reference.

>>> p = AttentionProblem.random(8, 4, seed=0)
>>> out = sparse_attention(p, k=8, bits=4)
>>> bool(np.allclose(out.Z, dense_attention(p)))
True
>>> out.op_counts == count_ops(8, 4, 8, 4, "sparse")
True
"""
import heapq
import logging
import math
from dataclasses import dataclass
from itertools import islice
from typing import Optional

import numpy as np
from scipy.special import erf

from lapis.config import GLOBAL
from lapis.misc.exception import AllMaskedRow, EmptyCandidateSet, InvalidConfig, InvalidK, ShapeMismatch, ZeroMass
from lapis.numerics import approx_scores, build_product_lut, quantize, roundtrip_bound

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AttentionProblem:
    """
    Query, key and value matrices of one attention head, n × d each.

    `mask[i, j]` is True when query i may attend to key j. Every row needs at least one True entry.

    >>> AttentionProblem(np.ones((2, 3)), np.ones((2, 3)), np.ones((2, 2)))
    Traceback (most recent call last):
    ...
    lapis.misc.exception.ShapeMismatch: Q, K and V must share one n × d shape: (2, 3), (2, 3), (2, 2)
    """

    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in "QKV":
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        Q, K, V = self.Q, self.K, self.V
        if Q.ndim != 2 or not Q.shape == K.shape == V.shape or 0 in Q.shape:
            raise ShapeMismatch(f"Q, K and V must share one n × d shape: {Q.shape}, {K.shape}, {V.shape}")
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != (self.n, self.n):
                raise ShapeMismatch(f"Mask must be {self.n} × {self.n}: {mask.shape}")
            empty = np.flatnonzero(~mask.any(axis=1))
            if empty.size:
                raise AllMaskedRow(f"Query row {empty[0]} cannot attend to any key.")
            object.__setattr__(self, "mask", mask)

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def d(self):
        return self.Q.shape[1]

    @classmethod
    def random(cls, n, d, seed=0, padded=0):
        """
        Gaussian problem; the last `padded` tokens are padding that no query attends to.

        >>> p = AttentionProblem.random(5, 2, seed=1, padded=2)
        >>> p.n, p.d, p.mask.sum(axis=1).tolist()
        (5, 2, [3, 3, 3, 3, 3])
        """
        rnd = np.random.default_rng(seed)
        Q, K, V = (rnd.normal(size=(n, d)) for _ in range(3))
        mask = None
        if padded:
            mask = np.ones((n, n), dtype=bool)
            mask[:, n - padded :] = False
        return cls(Q, K, V, mask)


@dataclass(frozen=True)
class OpCounts:
    """
    Work of an attention evaluation: low-precision table accumulations, full precision
    multiply-accumulates and exponentials.

    >>> OpCounts(1, 2, 3) + OpCounts(10, 20, 30)
    OpCounts(lowbit_macs=11, exact_macs=22, exp_evals=33)
    """

    lowbit_macs: int = 0
    exact_macs: int = 0
    exp_evals: int = 0

    def __add__(self, other):
        return OpCounts(
            self.lowbit_macs + other.lowbit_macs, self.exact_macs + other.exact_macs, self.exp_evals + other.exp_evals
        )


@dataclass(frozen=True)
class TopKSelection:
    """Candidate key indices per query row, best first."""

    k: int
    rows: tuple


@dataclass(frozen=True, eq=False)
class SparseAttentionOutput:
    Z: np.ndarray
    selection: TopKSelection
    op_counts: OpCounts
    weights: tuple  # normalized weights of each row, aligned with selection.rows


def softmax_weights(p):
    """
    Row-normalized attention matrix softmax(Q·K^T/√d), masked entries at zero.

    >>> w = softmax_weights(AttentionProblem(np.zeros((4, 2)), np.zeros((4, 2)), np.ones((4, 2))))
    >>> w[0].tolist()
    [0.25, 0.25, 0.25, 0.25]
    """
    scores = p.Q @ p.K.T / np.sqrt(p.d)
    if p.mask is not None:
        scores = np.where(p.mask, scores, -np.inf)
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def dense_attention(p):
    """
    Full precision attention output Z = softmax(Q·K^T/√d + mask)·V.

    >>> p = AttentionProblem([[0.3, -1.0]], [[2.0, 0.1]], [[5.0, 6.0]])
    >>> dense_attention(p).tolist()
    [[5.0, 6.0]]
    """
    return softmax_weights(p) @ p.V


def topk_select(approx_row, k, mask_row=None):
    """
    Indices of the k largest entries, best first, ties broken by the lower index.

    Candidates are cut into sorted runs of `GLOBAL["merge_run"]` entries that are merged lazily,
    so only the first k merged items are ever produced. Masked positions never become candidates.

    >>> topk_select([9, 2, 7, 1], 2)
    [0, 2]
    >>> topk_select([5, 5, 1], 1)
    [0]
    >>> topk_select([3, 8, 8, 0], 4)
    [1, 2, 0, 3]
    >>> topk_select([3, 8, 8, 0], 3, mask_row=[True, False, True, True])
    [2, 0, 3]

    Parameters
    ----------
    approx_row
        Scores of one query row (any totally ordered numbers)
    k
        Candidates to keep; fewer are returned when fewer positions are unmasked
    mask_row
        Optional booleans, True = attendable

    Returns
    -------
        List of min(k, #unmasked) distinct indices
    """
    if k < 1:
        raise InvalidK(f"k must be at least 1: {k}")
    row = np.asarray(approx_row)
    if row.ndim != 1:
        raise ShapeMismatch(f"Expected a score vector, got shape {row.shape}")
    if mask_row is None:
        candidates = range(row.size)
    else:
        mask_row = np.asarray(mask_row, dtype=bool)
        if mask_row.shape != row.shape:
            raise ShapeMismatch(f"Mask row {mask_row.shape} does not match scores {row.shape}")
        candidates = np.flatnonzero(mask_row).tolist()
    values = row.tolist()
    run = GLOBAL["merge_run"]
    runs = [sorted((-values[j], j) for j in candidates[i : i + run]) for i in range(0, len(candidates), run)]
    return [j for _, j in islice(heapq.merge(*runs), k)]


def _check_candidates(q_row, K_s, d):
    q_row = np.asarray(q_row, dtype=float)
    K_s = np.asarray(K_s, dtype=float)
    if K_s.ndim != 2 or K_s.shape[0] == 0:
        raise EmptyCandidateSet("No candidate keys to score.")
    if not q_row.shape == (d,) == K_s.shape[1:]:
        raise ShapeMismatch(f"Query {q_row.shape} and keys {K_s.shape} must have width {d}")
    return q_row, K_s


def _shift(scaled, keep, stable):
    return float(scaled[keep].max()) if stable and keep.any() else 0.0


def fused_row_scores(q_row, K_s, d, masked=None, stable=False):
    """
    Exponentiated scaled scores of one query against its candidate keys.

    The dot products accumulate over the d dimensions; scaling by 1/√d, masking and exp are applied
    when the last dimension is accumulated, without another pass over the candidates.
    With `stable`, the largest kept scaled score is subtracted before exp, so e is scaled by a common
    factor and its largest kept entry is 1.

    >>> fused_row_scores([0.0, 0.0], [[1.0, 2.0], [3.0, 4.0]], 2).tolist()
    [1.0, 1.0]
    >>> round(float(fused_row_scores([1.0, 1.0, 1.0, 1.0], [[0.5, 0.5, 0.5, 0.5]], 4)[0]), 6)
    2.718282
    >>> fused_row_scores([1.0, 1.0], [[1.0, 1.0], [0.0, 1.0]], 2, masked=[False, True]).tolist()[1]
    0.0
    >>> fused_row_scores([1000.0], [[1.0], [0.999]], 1, stable=True).round(6).tolist()
    [1.0, 0.367879]

    Returns
    -------
        Vector e with e_j = exp(q·k_j/√d - m), or 0 where `masked[j]`; m is 0 unless `stable`
    """
    q_row, K_s = _check_candidates(q_row, K_s, d)
    keep = np.ones(K_s.shape[0], dtype=bool) if masked is None else ~np.asarray(masked, dtype=bool)
    acc = np.zeros(K_s.shape[0])
    for t in range(d):
        acc = acc + q_row[t] * K_s[:, t]
        if t == d - 1:
            acc = acc / np.sqrt(d)
            acc = np.where(keep, np.exp(acc - _shift(acc, keep, stable)), 0.0)
    return acc


def unfused_row_scores(q_row, K_s, d, masked=None, stable=False):
    """
    Three-pass reference of `fused_row_scores`: dot products, then scaling, then mask and exp.

    >>> q, K = [0.5, -1.25, 2.0], [[1.0, 0.5, 0.25], [-2.0, 1.5, 0.75]]
    >>> fused_row_scores(q, K, 3).tolist() == unfused_row_scores(q, K, 3).tolist()
    True
    """
    q_row, K_s = _check_candidates(q_row, K_s, d)
    keep = np.ones(K_s.shape[0], dtype=bool) if masked is None else ~np.asarray(masked, dtype=bool)
    dots = np.zeros(K_s.shape[0])
    for j in range(K_s.shape[0]):
        s = 0.0
        for t in range(d):
            s = s + float(q_row[t]) * float(K_s[j, t])
        dots[j] = s
    scaled = dots / np.sqrt(d)
    return np.where(keep, np.exp(scaled - _shift(scaled, keep, stable)), 0.0)


def weighted_value_sum(e, V_s):
    """
    Normalized combination Σ e_j·v_j / Σ e_j.

    >>> weighted_value_sum([1.0, 1.0], [[2.0, 0.0], [0.0, 2.0]]).tolist()
    [1.0, 1.0]
    >>> weighted_value_sum([0.0], [[1.0]])
    Traceback (most recent call last):
    ...
    lapis.misc.exception.ZeroMass: All candidate weights are zero.
    """
    e = np.asarray(e, dtype=float)
    V_s = np.asarray(V_s, dtype=float)
    if V_s.ndim != 2 or V_s.shape[0] != e.size:
        raise ShapeMismatch(f"{e.size} weights for value rows of shape {V_s.shape}")
    total = e.sum()
    if not total > 0:
        raise ZeroMass("All candidate weights are zero.")
    return e @ V_s / total


def sparse_attention(p, k, bits):
    """
    Attention restricted to the k keys ranked best by quantized scores.

    k is clamped to n. Masked keys are excluded before ranking, so the softmax of each row
    normalizes over its selected candidates only.

    >>> p = AttentionProblem.random(16, 8, seed=3)
    >>> out = sparse_attention(p, k=4, bits=4)
    >>> [len(r) for r in out.selection.rows] == [4] * 16
    True
    >>> out.op_counts
    OpCounts(lowbit_macs=2048, exact_macs=1024, exp_evals=64)
    """
    if k < 1:
        raise InvalidK(f"k must be at least 1: {k}")
    k = min(k, p.n)
    lut = build_product_lut(bits)
    S = approx_scores(quantize(p.Q, bits), quantize(p.K, bits), lut)
    Z = np.empty((p.n, p.d))
    rows, weights = [], []
    counts = OpCounts(lowbit_macs=p.n * p.n * p.d)
    for i in range(p.n):
        idx = topk_select(S[i], k, None if p.mask is None else p.mask[i])
        e = fused_row_scores(p.Q[i], p.K[idx], p.d, stable=True)
        Z[i] = weighted_value_sum(e, p.V[idx])
        rows.append(tuple(idx))
        weights.append(e / e.sum())
        counts += OpCounts(exact_macs=2 * len(idx) * p.d, exp_evals=len(idx))
    logger.debug(f"sparse attention n={p.n} d={p.d} k={k} bits={bits}: {counts}")
    return SparseAttentionOutput(Z, TopKSelection(k, tuple(rows)), counts, tuple(weights))


def count_ops(n, d, k, bits, mode):
    """
    Closed-form work of an unmasked attention head.

    >>> count_ops(1, 1, 1, 4, "sparse").exact_macs
    2
    >>> count_ops(177, 64, 30, 4, "sparse").exact_macs, count_ops(177, 64, 30, 4, "dense").exact_macs
    (679680, 4010112)

    Parameters
    ----------
    mode
        "dense": 2n²d exact MACs and n² exponentials.
        "sparse": n²d table accumulations at `bits` bits, 2n·min(k, n)·d exact MACs, n·min(k, n) exponentials.
    """
    if min(n, d, k) < 1:
        raise InvalidK(f"Dimensions must be positive: n={n}, d={d}, k={k}")
    if mode == "dense":
        return OpCounts(0, 2 * n * n * d, n * n)
    if mode == "sparse":
        k = min(k, n)
        return OpCounts(n * n * d, 2 * n * k * d, n * k)
    raise InvalidConfig(f"Unknown attention mode: {mode}")


def score_error_bound(p, bits):
    """
    Per query row, the largest possible difference between an exact score q·k and its
    dequantized approximation.

    When the exact k-th and (k+1)-th best scores of a row differ by more than twice this bound,
    quantized pre-selection returns exactly the true top-k set of that row.

    >>> p = AttentionProblem([[1.0, 0.0]], [[1.0, 0.0]], [[1.0, 1.0]])
    >>> score_error_bound(p, 8).round(4).tolist()
    [0.0079]
    """
    bq = roundtrip_bound(float(np.max(np.abs(p.Q))), bits)
    bk = roundtrip_bound(float(np.max(np.abs(p.K))), bits)
    key_norm = float(np.max(np.abs(p.K).sum(axis=1)))
    return bq * key_norm + (np.abs(p.Q).sum(axis=1) + p.d * bq) * bk


def topk_recall(p, selection):
    """
    Mean fraction of each row's exact top-k keys found by a selection.

    >>> p = AttentionProblem.random(12, 6, seed=5)
    >>> topk_recall(p, sparse_attention(p, 12, 1).selection)
    1.0
    """
    scores = p.Q @ p.K.T
    hits = []
    for i, row in enumerate(selection.rows):
        truth = topk_select(scores[i], len(row), None if p.mask is None else p.mask[i])
        hits.append(len(set(truth) & set(row)) / len(row))
    return float(np.mean(hits))


def gelu(x):
    """
    Gaussian error linear unit, exact erf form.

    >>> gelu(np.array([0.0, 1.0])).round(6).tolist()
    [0.0, 0.841345]
    """
    return 0.5 * x * (1 + erf(x / math.sqrt(2)))


def layer_norm(x, gamma, beta, eps=1e-12):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gamma * (x - mean) / np.sqrt(var + eps) + beta


@dataclass(frozen=True, eq=False)
class EncoderWeights:
    """Parameters of one encoder layer: attention projections, feed-forward and two layer norms."""

    heads: int
    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    Wo: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    biases: tuple  # bq, bk, bv, bo, b1, b2
    norms: tuple  # gamma1, beta1, gamma2, beta2

    @property
    def hidden(self):
        return self.Wq.shape[0]

    @classmethod
    def random(cls, hidden, heads, ffn=None, seed=0):
        """
        >>> w = EncoderWeights.random(32, 4)
        >>> w.hidden, w.W1.shape
        (32, (32, 128))
        """
        if hidden % heads:
            raise InvalidConfig(f"hidden={hidden} is not divisible by heads={heads}")
        ffn = 4 * hidden if ffn is None else ffn
        rnd = np.random.default_rng(seed)
        sq, sk, sv, so = (rnd.normal(scale=hidden**-0.5, size=(hidden, hidden)) for _ in range(4))
        W1 = rnd.normal(scale=hidden**-0.5, size=(hidden, ffn))
        W2 = rnd.normal(scale=ffn**-0.5, size=(ffn, hidden))
        biases = tuple(rnd.normal(scale=0.02, size=m) for m in (hidden, hidden, hidden, hidden, ffn, hidden))
        norms = (np.ones(hidden), np.zeros(hidden), np.ones(hidden), np.zeros(hidden))
        return cls(heads, sq, sk, sv, so, W1, W2, biases, norms)


def encoder_forward(x, weights, k, bits, mode="sparse", mask=None):
    """
    One encoder layer: multi-head attention, add & norm, feed-forward with GELU, add & norm.

    >>> w = EncoderWeights.random(8, 2, seed=1)
    >>> x = np.random.default_rng(2).normal(size=(5, 8))
    >>> dense, sparse = encoder_forward(x, w, 5, 4, "dense"), encoder_forward(x, w, 5, 4, "sparse")
    >>> bool(np.allclose(dense, sparse, rtol=1e-5, atol=1e-9))
    True
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != weights.hidden:
        raise ShapeMismatch(f"Input {x.shape} does not match hidden size {weights.hidden}")
    if mode not in ("dense", "sparse"):
        raise InvalidConfig(f"Unknown attention mode: {mode}")
    bq, bk, bv, bo, b1, b2 = weights.biases
    g1, be1, g2, be2 = weights.norms
    queries, keys, values = x @ weights.Wq + bq, x @ weights.Wk + bk, x @ weights.Wv + bv
    dh = weights.hidden // weights.heads
    heads = []
    for h in range(weights.heads):
        cols = slice(h * dh, (h + 1) * dh)
        p = AttentionProblem(queries[:, cols], keys[:, cols], values[:, cols], mask)
        heads.append(dense_attention(p) if mode == "dense" else sparse_attention(p, k, bits).Z)
    y = layer_norm(x + np.hstack(heads) @ weights.Wo + bo, g1, be1)
    f = gelu(y @ weights.W1 + b1) @ weights.W2 + b2
    return layer_norm(y + f, g2, be2)
