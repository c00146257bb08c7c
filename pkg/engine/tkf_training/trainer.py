"""This script contains the training loop and batch evaluation
"""

from dataclasses import dataclass
import logging
import time
from typing import Callable, List, Optional, Sequence

import numpy as np

import tokfuse_env as env
from tokfuse_errors import DatasetError, NumericalError
from tkf_autodiff.tensor import Tape, Tensor, backward, no_tape
from tkf_fusion.model import FusionModel
from tkf_types.configs import AugmentConfig, OptimConfig
from tkf_types.records import EpochMetrics, Sample
from .datasets import DatasetSplits
from .losses import cross_entropy
from .metrics import topk_hits
from .optim import OptimState, optimizer_step
from .preprocess import augment, preprocess_all

# The wider top-k accuracy reported
TOP_K = 5


@dataclass
class PreparedSplit:
    """ Preprocessed images and their labels """
    images: List[np.ndarray]
    labels: np.ndarray

    def __len__(self) -> int:
        """ Returns the number of samples """
        return len(self.images)


@dataclass
class EvalResult:
    """ Loss and accuracies over a split """
    loss: float
    acc1: float
    acc5: float


def prepare_split(samples: Sequence[Sample], size: int, workers: int=env.WORKERS) -> PreparedSplit:
    """ Preprocesses a split's images once
    Arguments:
        samples: the raw samples
        size: the model's image size
        workers: preprocessing threads
    Return:
        Returns the PreparedSplit
    """
    return PreparedSplit(images=preprocess_all(samples, size, workers),
                         labels=np.asarray([one.label for one in samples], dtype=np.int64))


def _stack(images: Sequence[np.ndarray], dtype: np.dtype) -> Tensor:
    """ Stacks [3, S, S] arrays into a batch tensor """
    return Tensor(np.stack(images).astype(dtype, copy=False))


def evaluate(model: FusionModel, split: PreparedSplit, batch_size: int) -> EvalResult:
    """ Computes the loss and accuracies over a split without recording gradients
    Arguments:
        model: the model
        split: the prepared samples
        batch_size: samples per forward pass
    Return:
        Returns the EvalResult; zeros for an empty split
    """
    if len(split) == 0:
        return EvalResult(loss=0.0, acc1=0.0, acc5=0.0)
    loss_sum, hits1, hits5 = 0.0, 0, 0
    with no_tape():
        for start in range(0, len(split), batch_size):
            labels = split.labels[start:start + batch_size]
            logits = model(_stack(split.images[start:start + batch_size], model.dtype))
            loss_sum += cross_entropy(logits, labels).item() * len(labels)
            hits1 += int(np.count_nonzero(topk_hits(logits, labels, 1)))
            hits5 += int(np.count_nonzero(topk_hits(logits, labels, TOP_K)))
    count = len(split)
    return EvalResult(loss=loss_sum / count, acc1=hits1 / count, acc5=hits5 / count)


def run_training(model: FusionModel, dataset: DatasetSplits, optim_cfg: OptimConfig,
                 augment_cfg: AugmentConfig, seed: int=0, record_wall_time: bool=False,
                 on_epoch: Optional[Callable[[EpochMetrics], None]]=None,
                 logger: logging.Logger=None, verbose: bool=False) -> List[EpochMetrics]:
    """ Trains the model in place
    Arguments:
        model: the model to train
        dataset: the training and validation samples
        optim_cfg: optimizer and loop settings
        augment_cfg: augmentation applied to training images
        seed: seeds shuffling and augmentation
        record_wall_time: store the measured epoch time in the metrics (otherwise 0, so that
                          identical runs give identical records)
        on_epoch: optional callback receiving every epoch's metrics as it completes
        logger: optional logger
        verbose: log every batch when True
    Return:
        Returns the metrics of every epoch in order
    Raises:
        DatasetError: when there are no training samples
        NumericalError: when the loss stops being finite
    """
    if logger is None:
        logger = logging.getLogger(__name__)
    if not dataset.train:
        raise DatasetError('The training split is empty')

    size = model.config.image_size
    train = prepare_split(dataset.train, size)
    val = prepare_split(dataset.val, size)
    rng = np.random.default_rng(seed)
    params = model.trainable_parameters()
    state = OptimState()
    metrics = []

    for epoch in range(1, optim_cfg.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train))
        loss_sum, hits = 0.0, 0
        for start in range(0, len(order), optim_cfg.batch_size):
            batch_idx = order[start:start + optim_cfg.batch_size]
            images = [augment(train.images[idx], augment_cfg, rng) for idx in batch_idx]
            labels = train.labels[batch_idx]

            with Tape() as tape:
                logits = model(_stack(images, model.dtype))
                loss = cross_entropy(logits, labels)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise NumericalError(f'Non-finite training loss {loss_value} in epoch {epoch}')
            backward(loss, tape)
            optimizer_step(params, {name: one.grad for name, one in params.items()}, state,
                           optim_cfg)
            model.zero_grad()

            loss_sum += loss_value * len(batch_idx)
            hits += int(np.count_nonzero(topk_hits(logits, labels, 1)))
            if verbose:
                logger.info('Epoch %d batch %d loss %.6f', epoch,
                            start // optim_cfg.batch_size + 1, loss_value)

        val_result = evaluate(model, val, optim_cfg.batch_size)
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        one_metrics = EpochMetrics(epoch=epoch,
                                   train_loss=loss_sum / len(train),
                                   train_acc1=hits / len(train),
                                   val_loss=val_result.loss,
                                   val_acc1=val_result.acc1,
                                   val_acc5=val_result.acc5,
                                   wall_ms=round(elapsed_ms, 3) if record_wall_time else 0.0)
        metrics.append(one_metrics)
        logger.info('Epoch %d: loss %.4f acc@1 %.4f val acc@1 %.4f val acc@5 %.4f (%.0f ms)',
                    epoch, one_metrics.train_loss, one_metrics.train_acc1, one_metrics.val_acc1,
                    one_metrics.val_acc5, elapsed_ms)
        if on_epoch is not None:
            on_epoch(one_metrics)

        if optim_cfg.early_stop_train_acc is not None and \
                                        one_metrics.train_acc1 >= optim_cfg.early_stop_train_acc:
            logger.info('Stopping after epoch %d: train acc@1 reached %.4f', epoch,
                        one_metrics.train_acc1)
            break
    return metrics
