""" Functions shared by the command handlers """

import argparse
from typing import List, Sequence

import tokfuse_config as tcfg
from tkf_types.configs import RunConfig


def load_config(args: argparse.Namespace, write_resolved: bool=True,
                resolved_name: str=tcfg.RESOLVED_CONFIG_FILE_NAME) -> RunConfig:
    """ Loads the run configuration named on the command line
    Arguments:
        args: the parsed arguments (config, set, seed, out)
        write_resolved: write the resolved configuration into the output folder
        resolved_name: the file name the resolved configuration is written under
    Return:
        Returns the validated RunConfig
    Raises:
        ConfigError: for an invalid configuration
    """
    run_config = tcfg.load_run_config(args.config, overrides=args.set, seed=args.seed,
                                      out_dir=args.out)
    if write_resolved:
        tcfg.write_resolved_config(run_config, run_config.out_dir, resolved_name)
    return run_config


def format_table(headers: Sequence[str], rows: List[Sequence]) -> str:
    """ Returns a plain text table with left-aligned columns
    Arguments:
        headers: the column titles
        rows: the row values; each is converted with str()
    Return:
        Returns the table text
    """
    text_rows = [[str(one) for one in headers]] + [[str(one) for one in row] for row in rows]
    widths = [max(len(row[idx]) for row in text_rows) for idx in range(len(headers))]
    lines = ['  '.join(value.ljust(width) for value, width in zip(row, widths)).rstrip()
             for row in text_rows]
    lines.insert(1, '  '.join('-' * width for width in widths))
    return '\n'.join(lines)
