""" Handles the train command """

import argparse
import json
import logging
import os

import tokfuse_config as tcfg
from tokfuse_errors import EXIT_OK
from tkf_fusion.model import build_model, count_params
from tkf_training.datasets import load_dataset
from tkf_training.trainer import run_training
from tkf_training.weights_io import save_weights
from tkf_types.records import EpochMetrics
from .base import load_config


def handle_train(args: argparse.Namespace) -> int:
    """ Trains the configured model, writing metrics.jsonl, weights.bin and
        resolved_config.json into the output folder
    Arguments:
        args: the parsed command line
    Return:
        Returns the exit code
    Raises:
        ConfigError, DatasetError, NumericalError: mapped onto exit codes by the caller
    """
    logger = logging.getLogger(__name__)
    run_config = load_config(args)
    out_dir = run_config.out_dir

    model = build_model(run_config.model, seed=run_config.seed, logger=logger)
    print(f'Training {run_config.model.fusion_method.value} model '
          f'({count_params(model).total:,} parameters) into {out_dir}', flush=True)
    dataset = load_dataset(run_config.dataset, run_config.model.num_classes, seed=run_config.seed,
                           logger=logger)

    metrics_path = os.path.join(out_dir, tcfg.METRICS_FILE_NAME)
    with open(metrics_path, 'w', encoding='utf-8') as metrics_file:
        def write_epoch(one_metrics: EpochMetrics) -> None:
            metrics_file.write(json.dumps(one_metrics.to_dict(), sort_keys=True) + '\n')
            metrics_file.flush()

        metrics = run_training(model, dataset, run_config.optim, run_config.augment,
                               seed=run_config.seed,
                               record_wall_time=run_config.record_wall_time,
                               on_epoch=write_epoch, logger=logger,
                               verbose=getattr(args, 'verbose', False))

    weights_path = os.path.join(out_dir, tcfg.WEIGHTS_FILE_NAME)
    save_weights(weights_path, model.parameters())

    if metrics:
        final = metrics[-1]
        print(f'Epoch {final.epoch}: train loss {final.train_loss:.4f}, '
              f'val acc@1 {final.val_acc1:.4f}, val acc@5 {final.val_acc5:.4f}', flush=True)
    print(f'Wrote {metrics_path} and {weights_path}', flush=True)
    return EXIT_OK
