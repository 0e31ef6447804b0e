"""NumPy fallback for the sparse linear-model kernels.

Same contracts as the compiled extension in _ckernels.pyx; selected at
import time by clozetag.kernels when the extension is unavailable or
CLOZETAG_PURE_PYTHON is set.

All kernels operate on CSR-style feature layouts: indptr is int64 of
length n_examples + 1, indices is int32 over feature rows of the weight
matrix.  Duplicate indices within one example accumulate (multiset
semantics).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def csr_logits(
    indptr: np.ndarray,
    indices: np.ndarray,
    weights: np.ndarray,
    intercept: np.ndarray,
) -> np.ndarray:
    """Per-example candidate logits: sum of touched weight rows + intercept."""
    n = indptr.shape[0] - 1
    out = np.tile(intercept, (n, 1))
    if indices.shape[0] == 0 or n == 0:
        return out
    counts = np.diff(indptr)
    nonempty = np.flatnonzero(counts > 0)
    if nonempty.size == 0:
        return out
    rows = weights[indices]
    sums = np.add.reduceat(rows, indptr[nonempty], axis=0)
    out[nonempty] += sums
    return out


def csr_grad(
    indptr: np.ndarray,
    indices: np.ndarray,
    dprobs: np.ndarray,
    dim: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Dense gradient accumulation: gw[f, c] = sum over examples touching f
    of dprobs[i, c]; gb = column sums.  Caller applies scaling."""
    n_labels = dprobs.shape[1]
    gw = np.zeros((dim, n_labels))
    counts = np.diff(indptr)
    expanded = np.repeat(np.arange(indptr.shape[0] - 1), counts)
    for c in range(n_labels):
        gw[:, c] = np.bincount(
            indices, weights=dprobs[expanded, c], minlength=dim
        )
    gb = dprobs.sum(axis=0)
    return gw, gb


def csr_step(
    indptr: np.ndarray,
    indices: np.ndarray,
    weights: np.ndarray,
    intercept: np.ndarray,
    dprobs: np.ndarray,
    scale: float,
) -> None:
    """In-place sparse update: weights[f] -= scale * dprobs[i] for every
    feature f of example i; intercept -= scale * column sums."""
    counts = np.diff(indptr)
    expanded = np.repeat(np.arange(indptr.shape[0] - 1), counts)
    np.subtract.at(weights, indices, scale * dprobs[expanded])
    intercept -= scale * dprobs.sum(axis=0)
