""" Handles the list-variants command """

import argparse

from tokfuse_errors import EXIT_OK
from tkf_fusion.variants import VARIANTS
from .base import format_table


def handle_list_variants(_: argparse.Namespace) -> int:
    """ Prints the registered variants; select one with --set variant=<name> """
    rows = [(one.name, 'modified' if one.modified else 'basic', one.fusion_method.value,
             one.head_type.value, one.description) for one in VARIANTS.values()]
    print(format_table(('name', 'kind', 'method', 'head', 'description'), rows), flush=True)
    return EXIT_OK
