"""Hidden flow discovery for smart home device events.

Thin wrapper over the native core. Flows, trees and reports are returned
as plain Python objects decoded from the core's JSON.
"""

import json as _json
import os as _os

from . import _core
from ._core import HiddenflowError, RootFailed, RuleSyntaxError, SchemaError

__all__ = [
    "HiddenflowError",
    "RootFailed",
    "RuleSyntaxError",
    "SchemaError",
    "canonicalize",
    "flow_key",
    "read_pcap",
    "extract_signature",
    "compile_rules",
    "parse_rules",
    "decompile_rules",
    "load_model",
    "profile",
    "oracle_tree",
    "report",
    "render_csv",
    "tree_dot",
    "run_cli",
]


def _dump(value):
    return value if isinstance(value, str) else _json.dumps(value)


def canonicalize(flow):
    return _json.loads(_core.canonicalize(_dump(flow)))


def flow_key(flow):
    return _core.flow_key(_dump(flow))


def read_pcap(path):
    return _json.loads(_core.read_pcap(_os.fspath(path)))


def extract_signature(flow_sets, m):
    """Intersection of per-capture flow lists, with m_plus and "accepted"."""
    return _json.loads(_core.extract_signature([_dump(s) for s in flow_sets], m))


def compile_rules(flows):
    return _core.compile_rules(_dump(flows))


def parse_rules(text):
    return _core.parse_rules(text)


def decompile_rules(text):
    return _json.loads(_core.decompile_rules(text))


def load_model(path):
    return _json.loads(_core.load_model(_os.fspath(path)))


def profile(model_path, m=20, seed=0, pruning=True, max_depth=None):
    return _json.loads(_core.profile(_os.fspath(model_path), m, seed, pruning, max_depth))


def oracle_tree(model_path, pruning=True, max_depth=None):
    return _json.loads(_core.oracle_tree(_os.fspath(model_path), pruning, max_depth))


def report(tree, label=""):
    return _json.loads(_core.report(_dump(tree), label))


def render_csv(labelled_trees):
    return _core.render_csv([(label, _dump(tree)) for label, tree in labelled_trees])


def tree_dot(tree, hide_failed=False):
    return _core.tree_dot(_dump(tree), hide_failed)


def run_cli(*args):
    return _core.run_cli([_os.fspath(a) for a in args])
