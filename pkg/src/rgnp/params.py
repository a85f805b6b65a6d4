"""Utilities for trees of parameters (dicts/lists/dataclasses of arrays).

Leaves are ``ndarray`` or ``Var``; everything else (ints, strings, None,
callables) is static structure and passes through unchanged.  Traversal
order is deterministic: dict insertion order, list order, dataclass
field order.
"""

import dataclasses

import numpy as np

from .tape import Var

__all__ = ["is_leaf", "leaves", "map_leaves", "map2_leaves", "leaf_count"]


def is_leaf(x):
    return isinstance(x, (np.ndarray, Var))


def leaves(tree, prefix=""):
    """Yield (path, leaf) pairs in deterministic order."""
    if is_leaf(tree):
        yield prefix or "p", tree
    elif isinstance(tree, dict):
        for k, v in tree.items():
            yield from leaves(v, f"{prefix}/{k}" if prefix else str(k))
    elif isinstance(tree, (list, tuple)):
        for i, v in enumerate(tree):
            yield from leaves(v, f"{prefix}/{i}" if prefix else str(i))
    elif dataclasses.is_dataclass(tree):
        for f in dataclasses.fields(tree):
            yield from leaves(getattr(tree, f.name), f"{prefix}/{f.name}" if prefix else f.name)


def map_leaves(fn, tree):
    """Rebuild ``tree`` with ``fn`` applied to every array leaf."""
    if is_leaf(tree):
        return fn(tree)
    if isinstance(tree, dict):
        return {k: map_leaves(fn, v) for k, v in tree.items()}
    if isinstance(tree, list):
        return [map_leaves(fn, v) for v in tree]
    if isinstance(tree, tuple):
        return tuple(map_leaves(fn, v) for v in tree)
    if dataclasses.is_dataclass(tree):
        kw = {f.name: map_leaves(fn, getattr(tree, f.name)) for f in dataclasses.fields(tree)}
        return dataclasses.replace(tree, **kw)
    return tree


def map2_leaves(fn, t1, t2):
    """Apply ``fn(leaf1, leaf2)`` over two structurally identical trees."""
    if is_leaf(t1):
        return fn(t1, t2)
    if isinstance(t1, dict):
        return {k: map2_leaves(fn, t1[k], t2[k]) for k in t1}
    if isinstance(t1, list):
        return [map2_leaves(fn, a, b) for a, b in zip(t1, t2)]
    if isinstance(t1, tuple):
        return tuple(map2_leaves(fn, a, b) for a, b in zip(t1, t2))
    if dataclasses.is_dataclass(t1):
        kw = {
            f.name: map2_leaves(fn, getattr(t1, f.name), getattr(t2, f.name))
            for f in dataclasses.fields(t1)
        }
        return dataclasses.replace(t1, **kw)
    return t1


def leaf_count(tree):
    return sum(np.size(v.val if isinstance(v, Var) else v) for _, v in leaves(tree))
