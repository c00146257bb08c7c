#!python3
"""Command line entry for training, evaluating and inspecting CNN and transformer token
fusion models
"""

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

import tokfuse_env as env
from tokfuse_errors import EXIT_CONFIG, EXIT_DATASET, EXIT_NUMERICAL, EXIT_WEIGHTS, \
                           ConfigError, DatasetError, NumericalError, WeightsMismatchError
from tkf_autodiff.tensor import set_detect_anomaly
from tkf_commands.evaluate import handle_eval
from tkf_commands.gradcheck import handle_gradcheck
from tkf_commands.params import handle_params
from tkf_commands.train import handle_train
from tkf_commands.variants import handle_list_variants


# The name of our script
SCRIPT_NAME = os.path.basename(__file__)

# Argparse-related definitions
# Declare the progam description
ARGPARSE_PROGRAM_DESC = 'Trains and inspects models that fuse CNN feature maps with ' \
                        'vision transformer tokens'
# Epilog for help
ARGPARSE_EPILOG = 'Exit codes: 0 success, 1 configuration error, 2 dataset error, ' \
                  '3 numerical error or failed gradient check, 4 weight file mismatch.\n' \
                  f'Set {env.ENV_LOG_LEVEL} to change logging and {env.ENV_OUT_DIR} to change ' \
                  'the default output folder'
# Help for the configuration file
ARGPARSE_CONFIG_HELP = 'JSON configuration file, or the name of a shipped configuration ' \
                       '(toy, paper_scale, gradcheck)'
# Help for the seed
ARGPARSE_SEED_HELP = 'Seed for initialization, data order and augmentation (overrides the file)'
# Help for the output folder
ARGPARSE_OUT_HELP = f'Output folder for run artifacts (default: {env.DEFAULT_OUT_DIR})'
# Help for the overrides
ARGPARSE_SET_HELP = 'Override a configuration value with a dotted key, for example ' \
                    '--set optim.lr=0.001 or --set variant=late_upconv_add (repeatable)'
# Help for the weights file
ARGPARSE_WEIGHTS_HELP = 'Weight file to evaluate (default: weights.bin in the output folder)'
# Help for verbose output
ARGPARSE_VERBOSE_HELP = 'Print per-batch progress'

# Maps the exceptions onto exit codes
ERROR_EXIT_CODES = (
    (ConfigError, EXIT_CONFIG, 'configuration error'),
    (DatasetError, EXIT_DATASET, 'dataset error'),
    (NumericalError, EXIT_NUMERICAL, 'numerical error'),
    (WeightsMismatchError, EXIT_WEIGHTS, 'weights mismatch'),
)


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    """ Adds the arguments shared by the commands that load a configuration """
    parser.add_argument('--config', help=ARGPARSE_CONFIG_HELP)
    parser.add_argument('--seed', type=int, help=ARGPARSE_SEED_HELP)
    parser.add_argument('--out', help=ARGPARSE_OUT_HELP)
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help=ARGPARSE_SET_HELP)


def build_parser() -> argparse.ArgumentParser:
    """ Returns the command line parser """
    parser = argparse.ArgumentParser(prog=SCRIPT_NAME,
                                     description=ARGPARSE_PROGRAM_DESC,
                                     epilog=ARGPARSE_EPILOG)
    commands = parser.add_subparsers(dest='command', required=True)

    train_parser = commands.add_parser('train', help='Train a model')
    _add_run_arguments(train_parser)
    train_parser.add_argument('--verbose', action='store_true', help=ARGPARSE_VERBOSE_HELP)
    train_parser.set_defaults(handler=handle_train)

    eval_parser = commands.add_parser('eval', help='Evaluate saved weights')
    _add_run_arguments(eval_parser)
    eval_parser.add_argument('--weights', help=ARGPARSE_WEIGHTS_HELP)
    eval_parser.set_defaults(handler=handle_eval)

    check_parser = commands.add_parser('gradcheck',
                                       help='Compare analytic and numerical gradients')
    _add_run_arguments(check_parser)
    check_parser.set_defaults(handler=handle_gradcheck)

    params_parser = commands.add_parser('params', help='Report parameter counts')
    _add_run_arguments(params_parser)
    params_parser.set_defaults(handler=handle_params)

    list_parser = commands.add_parser('list-variants', help='List the fusion variants')
    list_parser.set_defaults(handler=handle_list_variants)

    return parser


def _configure_logging() -> None:
    """ Sets up logging at the level named in the environment """
    level = logging.getLevelName(env.LOG_LEVEL)
    if not isinstance(level, int):
        print(f'WARNING: unknown log level {env.LOG_LEVEL}, using {env.DEFAULT_LOG_LEVEL}',
              flush=True)
        level = logging.getLevelName(env.DEFAULT_LOG_LEVEL)
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def main(argv: Optional[Sequence[str]]=None) -> int:
    """ Runs one command
    Arguments:
        argv: the command line arguments without the program name (default: sys.argv)
    Return:
        Returns the exit code
    """
    args = build_parser().parse_args(argv)
    _configure_logging()
    set_detect_anomaly(env.DETECT_ANOMALY)

    try:
        return args.handler(args)
    except (ConfigError, DatasetError, NumericalError, WeightsMismatchError) as ex:
        for error_type, exit_code, label in ERROR_EXIT_CODES:
            if isinstance(ex, error_type):
                logging.getLogger(__name__).error('%s: %s', label, ex)
                print(f'{SCRIPT_NAME}: {label}: {ex}', file=sys.stderr, flush=True)
                return exit_code
        raise


if __name__ == '__main__':
    sys.exit(main())
