""" Handles the gradcheck command """

import argparse
import dataclasses
import logging

import numpy as np

from tokfuse_errors import EXIT_NUMERICAL, EXIT_OK
from tkf_autodiff.gradcheck import finite_diff_check
from tkf_fusion.model import build_model
from tkf_training.losses import cross_entropy
from tkf_types.configs import RunConfig
from .base import format_table, load_config

# Data type gradient verification runs in
CHECK_DTYPE = 'float64'


def check_model(run_config: RunConfig, logger: logging.Logger=None):
    """ Runs the end-to-end gradient check of the configured model on a seeded random batch
    Arguments:
        run_config: the run configuration
        logger: optional logger
    Return:
        Returns the GradCheckReport
    """
    if logger is None:
        logger = logging.getLogger(__name__)
    model_cfg = run_config.model
    if model_cfg.dtype != CHECK_DTYPE:
        logger.warning('The configuration asks for %s; gradient verification uses %s',
                       model_cfg.dtype, CHECK_DTYPE)
        print(f'WARNING: model.dtype is {model_cfg.dtype}; gradient verification uses '
              f'{CHECK_DTYPE}', flush=True)
        model_cfg = dataclasses.replace(model_cfg, dtype=CHECK_DTYPE)

    model = build_model(model_cfg, seed=run_config.seed, logger=logger)
    settings = run_config.gradcheck
    rng = np.random.default_rng(run_config.seed)
    images = rng.standard_normal((settings.batch_size, 3, model_cfg.image_size,
                                  model_cfg.image_size))
    labels = np.arange(settings.batch_size) % model_cfg.num_classes

    return finite_diff_check(lambda _: cross_entropy(model(images), labels),
                             model.trainable_parameters(), eps=settings.eps, tol=settings.tol,
                             max_coords=settings.max_coords, seed=run_config.seed,
                             min_scale=settings.min_scale,
                             max_total_coords=settings.max_total_coords, logger=logger)


def handle_gradcheck(args: argparse.Namespace) -> int:
    """ Compares analytic and finite-difference gradients of the configured model
    Arguments:
        args: the parsed command line
    Return:
        Returns 0 when every group passes, 3 otherwise
    """
    logger = logging.getLogger(__name__)
    run_config = load_config(args)
    report = check_model(run_config, logger)
    tol = run_config.gradcheck.tol

    rows = [(group, f'{error:.3e}', 'pass' if error < tol else 'FAIL')
            for group, error in report.group_errors().items()]
    print(format_table(('group', 'max rel err', 'result'), rows), flush=True)
    print(f'Checked {len(report.entries)} coordinates: max relative error '
          f'{report.max_rel_err:.3e} at {report.worst_coordinate} (tol {tol:g}) - '
          f'{"PASS" if report.passed else "FAIL"}', flush=True)
    return EXIT_OK if report.passed else EXIT_NUMERICAL
