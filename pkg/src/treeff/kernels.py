"""Compiled compute kernels shared by every kernel level.

Every reduction in the package funnels through one canonical dot product:
eight strided partial accumulators combined in a fixed tree. The three kernel
levels differ only in dispatch (pure scalar loops, one compiled dot per node,
whole-batch compiled kernels), never in arithmetic order, so matched-precision
outputs agree bit for bit across levels.

Kernels compile with fastmath disabled: no reassociation, no FMA contraction.
nogil=True lets callers partition a batch across threads.
"""

import math

import numpy as np
from numba import njit

# float64 nearest to 1/sqrt(2); same bits as math.sqrt(0.5)
INV_SQRT2 = 0.7071067811865476

# tokens per cache block in the dense kernels; weight rows stay hot across a block
TOKEN_BLOCK = 64


@njit(nogil=True, cache=True)
def dot(a, b, zero):
    """Canonical dot product: 8 strided partials, fixed combine tree.

    `zero` pins the accumulator dtype (pass a scalar of a.dtype); arithmetic
    never leaves that precision.
    """
    acc0 = zero
    acc1 = zero
    acc2 = zero
    acc3 = zero
    acc4 = zero
    acc5 = zero
    acc6 = zero
    acc7 = zero
    n = a.shape[0]
    i = 0
    while i + 8 <= n:
        acc0 = acc0 + a[i] * b[i]
        acc1 = acc1 + a[i + 1] * b[i + 1]
        acc2 = acc2 + a[i + 2] * b[i + 2]
        acc3 = acc3 + a[i + 3] * b[i + 3]
        acc4 = acc4 + a[i + 4] * b[i + 4]
        acc5 = acc5 + a[i + 5] * b[i + 5]
        acc6 = acc6 + a[i + 6] * b[i + 6]
        acc7 = acc7 + a[i + 7] * b[i + 7]
        i += 8
    while i < n:
        acc0 = acc0 + a[i] * b[i]
        i += 1
    return ((acc0 + acc1) + (acc2 + acc3)) + ((acc4 + acc5) + (acc6 + acc7))


def dot_py(a, b, zero):
    """Pure-Python mirror of `dot`, same partials and combine tree.

    Index access yields numpy scalars, so passing e.g. np.float32(0.0) keeps
    every product and sum in single precision.
    """
    acc0 = zero
    acc1 = zero
    acc2 = zero
    acc3 = zero
    acc4 = zero
    acc5 = zero
    acc6 = zero
    acc7 = zero
    n = a.shape[0]
    i = 0
    while i + 8 <= n:
        acc0 = acc0 + a[i] * b[i]
        acc1 = acc1 + a[i + 1] * b[i + 1]
        acc2 = acc2 + a[i + 2] * b[i + 2]
        acc3 = acc3 + a[i + 3] * b[i + 3]
        acc4 = acc4 + a[i + 4] * b[i + 4]
        acc5 = acc5 + a[i + 5] * b[i + 5]
        acc6 = acc6 + a[i + 6] * b[i + 6]
        acc7 = acc7 + a[i + 7] * b[i + 7]
        i += 8
    while i < n:
        acc0 = acc0 + a[i] * b[i]
        i += 1
    return ((acc0 + acc1) + (acc2 + acc3)) + ((acc4 + acc5) + (acc6 + acc7))


def gelu_py(x):
    """Exact GeLU of a Python float, evaluated in double precision."""
    return 0.5 * x * (1.0 + math.erf(x * INV_SQRT2))


@njit(nogil=True, cache=True)
def descend_tree(inp, w_in, b_in, use_bias, path_len, n_idx, logits, zero):
    """Route every row of `inp` down one balanced binary tree.

    Writes the visited node index and its logit per depth. A positive logit
    goes right (2n+2), zero or negative goes left (2n+1). `b_in` is read only
    when use_bias is true; pass any 1-element array of the right dtype
    otherwise.
    """
    batch = inp.shape[0]
    for bi in range(batch):
        row = inp[bi]
        node = 0
        for d in range(path_len):
            acc = dot(row, w_in[node], zero)
            if use_bias:
                acc = acc + b_in[node]
            n_idx[bi, d] = node
            logits[bi, d] = acc
            if acc > zero:
                node = 2 * node + 2
            else:
                node = 2 * node + 1


@njit(nogil=True, cache=True)
def act(logits, out):
    """Exact GeLU, elementwise: double-precision erf, one rounding on store.

    `out` may alias `logits`; each element is read before it is written.
    """
    rows, cols = logits.shape
    for i in range(rows):
        for j in range(cols):
            x = float(logits[i, j])
            out[i, j] = 0.5 * x * (1.0 + math.erf(x * INV_SQRT2))


@njit(nogil=True, cache=True)
def accumulate_paths(g, idx, w_out, out):
    """out[b] += sum_d g[b, d] * w_out[idx[b, d]], depth ascending per row."""
    batch, path_len = g.shape
    width = out.shape[1]
    for bi in range(batch):
        orow = out[bi]
        for d in range(path_len):
            gv = g[bi, d]
            wrow = w_out[idx[bi, d]]
            for h in range(width):
                orow[h] = orow[h] + gv * wrow[h]


@njit(nogil=True, cache=True)
def dense_logits(inp, w, b, use_bias, out, zero):
    """out[b, j] = dot(inp[b], w[j]) (+ b[j]), blocked over tokens.

    Blocking only reorders independent (b, j) cells; each cell's arithmetic
    is the canonical dot, so the result is bitwise loop-order independent.
    """
    batch = inp.shape[0]
    n = w.shape[0]
    for b0 in range(0, batch, TOKEN_BLOCK):
        b1 = min(b0 + TOKEN_BLOCK, batch)
        for j in range(n):
            wrow = w[j]
            for bi in range(b0, b1):
                acc = dot(inp[bi], wrow, zero)
                if use_bias:
                    acc = acc + b[j]
                out[bi, j] = acc


@njit(nogil=True, cache=True)
def dense_accumulate(g, w_out, out):
    """out[b] += sum_j g[b, j] * w_out[j], j ascending per row.

    Token blocking keeps w_out rows hot; per output element the additions
    still land in ascending j order, so bits match the unblocked loop.
    """
    batch, n = g.shape
    width = out.shape[1]
    for b0 in range(0, batch, TOKEN_BLOCK):
        b1 = min(b0 + TOKEN_BLOCK, batch)
        for j in range(n):
            wrow = w_out[j]
            for bi in range(b0, b1):
                gv = g[bi, j]
                orow = out[bi]
                for h in range(width):
                    orow[h] = orow[h] + gv * wrow[h]
