"""Hot decode kernel with a compiled fast path.

Per cell the decoder needs the (keyword, box) pair maximizing
``class_scores[k] * conf[j]``.  At realistic lexicon sizes this argmax
over L*B products per cell dominates batch decoding, so a Cython kernel
(`wordspot._native`) computes it without materializing the product
tensor.  The numpy implementation below is the reference and the
fallback; both resolve ties to the lowest keyword index, then the lowest
box index.  Set WORDSPOT_DISABLE_NATIVE=1 to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from . import _native
except ImportError:
    _native = None

if os.environ.get("WORDSPOT_DISABLE_NATIVE"):
    _native = None

HAVE_NATIVE = _native is not None


def best_joint_scores_numpy(class_scores: np.ndarray, confs: np.ndarray):
    """Reference argmax over the score products.

    class_scores: (..., L); confs: (..., B).
    Returns (k, j, score), each shaped like the leading dimensions.
    """
    class_scores = np.asarray(class_scores, dtype=np.float64)
    confs = np.asarray(confs, dtype=np.float64)
    products = class_scores[..., :, None] * confs[..., None, :]
    l, b = products.shape[-2:]
    flat = products.reshape(products.shape[:-2] + (l * b,))
    idx = np.argmax(flat, axis=-1)  # first max <=> lowest k, then lowest j
    score = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return (idx // b).astype(np.int64), (idx % b).astype(np.int64), score


def best_joint_scores_native(class_scores: np.ndarray, confs: np.ndarray):
    """Compiled kernel; requires 3-D inputs (batch, cells, L/B)."""
    if _native is None:
        raise RuntimeError("the wordspot._native extension is not available")
    cs = np.ascontiguousarray(class_scores, dtype=np.float64)
    cf = np.ascontiguousarray(confs, dtype=np.float64)
    if cs.ndim != 3 or cf.ndim != 3:
        raise ValueError("native kernel expects (batch, cells, L) and (batch, cells, B)")
    return _native.best_joint_scores(cs, cf)


def best_joint_scores(class_scores: np.ndarray, confs: np.ndarray):
    """Dispatch to the compiled kernel when present and applicable."""
    if HAVE_NATIVE and np.ndim(class_scores) == 3:
        return best_joint_scores_native(class_scores, confs)
    return best_joint_scores_numpy(class_scores, confs)
