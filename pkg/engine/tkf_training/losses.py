"""This script contains the classification loss
"""

import numpy as np

from tkf_autodiff import ops
from tkf_autodiff.tensor import Tensor


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """ Mean over the batch of -log softmax(logits)[label]
    Arguments:
        logits: the [B, K] logits
        labels: B class indices
    Return:
        Returns the scalar loss
    Raises:
        ValueError: when a label is outside 0..K-1 or the counts differ
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch, num_classes = logits.shape
    if labels.shape[0] != batch:
        raise ValueError(f'{labels.shape[0]} labels for {batch} logit rows')
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError(f'Labels must be in 0..{num_classes - 1}, got {labels.tolist()}')
    return ops.neg(ops.mean(ops.pick(ops.log_softmax(logits, axis=1), labels)))
