""" Handles the eval command """

import argparse
import json
import logging
import os

import tokfuse_config as tcfg
from tokfuse_errors import EXIT_OK
from tkf_fusion.model import build_model
from tkf_training.datasets import load_dataset
from tkf_training.trainer import TOP_K, evaluate, prepare_split
from tkf_training.weights_io import apply_weights, load_weights
from .base import load_config


def handle_eval(args: argparse.Namespace) -> int:
    """ Evaluates saved weights on the configured validation split
    Arguments:
        args: the parsed command line; --weights defaults to weights.bin in the output folder
    Return:
        Returns the exit code
    Raises:
        ConfigError, DatasetError, WeightsMismatchError: mapped onto exit codes by the caller
    """
    logger = logging.getLogger(__name__)
    run_config = load_config(args, resolved_name=tcfg.EVAL_RESOLVED_CONFIG_FILE_NAME)
    weights_path = args.weights or os.path.join(run_config.out_dir, tcfg.WEIGHTS_FILE_NAME)

    model = build_model(run_config.model, seed=run_config.seed, logger=logger)
    apply_weights(model.parameters(), load_weights(weights_path))
    dataset = load_dataset(run_config.dataset, run_config.model.num_classes, seed=run_config.seed,
                           logger=logger)
    result = evaluate(model, prepare_split(dataset.val, run_config.model.image_size),
                      run_config.optim.batch_size)

    top_k = min(TOP_K, run_config.model.num_classes)
    print(f'acc@1 {result.acc1:.4f}  acc@{top_k} {result.acc5:.4f}  loss {result.loss:.6f}',
          flush=True)
    print(json.dumps({'val_acc1': result.acc1, 'val_acc5': result.acc5,
                      'val_loss': result.loss, 'k': top_k}, sort_keys=True), flush=True)
    return EXIT_OK
