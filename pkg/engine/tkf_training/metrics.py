"""This script contains top-k accuracy
"""

import numpy as np

from tkf_autodiff.tensor import Tensor


def topk_hits(logits, labels, k: int) -> np.ndarray:
    """ Returns a boolean per sample: is the label among the k highest logits. Ties go to the
        lower class index
    """
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    k = max(1, min(k, values.shape[1]))
    ranked = np.argsort(-values, axis=1, kind='stable')[:, :k]
    return np.any(ranked == labels[:, None], axis=1)


def evaluate_topk(logits, labels, k: int) -> float:
    """ Fraction of samples whose label is among the top min(k, K) logits
    Arguments:
        logits: [B, K] logits (Tensor or array)
        labels: B class indices
        k: how many of the highest logits count
    Return:
        Returns the accuracy in [0, 1]; 0 for an empty batch
    """
    hits = topk_hits(logits, labels, k)
    return float(np.mean(hits)) if hits.size else 0.0
