""" Handles the params command """

import argparse
import json

from tokfuse_errors import EXIT_OK
from tkf_fusion.model import build_model, count_params
from .base import format_table, load_config


def handle_params(args: argparse.Namespace) -> int:
    """ Prints the per-module and total parameter counts without allocating weights
    Arguments:
        args: the parsed command line
    Return:
        Returns the exit code
    """
    run_config = load_config(args)
    model = build_model(run_config.model, seed=run_config.seed, materialize=False)
    report = count_params(model)

    rows = [(name, f'{count:,}') for name, count in report.per_module.items()]
    rows.append(('total', f'{report.total:,}'))
    print(format_table(('module', 'parameters'), rows), flush=True)
    print(f'Total: {report.total_millions}M', flush=True)
    print(json.dumps({'variant': run_config.model.variant,
                      'fusion_method': run_config.model.fusion_method.value,
                      'per_module': report.per_module,
                      'total': report.total,
                      'total_millions': float(report.total_millions)}, sort_keys=True),
          flush=True)
    return EXIT_OK
