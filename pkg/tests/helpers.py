"""Shared finite-difference oracles for gradient and derivative checks."""

import numpy as np

from rgnp.params import leaves, map_leaves


def fd_scalar_grad(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f at ndarray x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
        it.iternext()
    return g


def fd_tree_grad(loss, tree, h=1e-6, limit=None):
    """Finite-difference gradient over (a slice of) every leaf of a tree.

    Returns a list of (path, flat_index, fd_value) triples, at most
    ``limit`` entries spread over all leaves.
    """
    entries = []
    flat = list(leaves(tree))
    total = sum(np.size(v) for _, v in flat)
    stride = max(1, total // limit) if limit else 1
    counter = 0
    for path, arr in flat:
        arr = np.asarray(arr)
        for i in range(arr.size):
            if counter % stride == 0:
                fp = loss(_perturb(tree, path, i, +h))
                fm = loss(_perturb(tree, path, i, -h))
                entries.append((path, i, (fp - fm) / (2 * h)))
            counter += 1
    return entries


def _perturb(tree, path, flat_i, delta):
    def repl(leaf_path, leaf):
        if leaf_path == path:
            out = np.array(leaf, dtype=np.float64, copy=True)
            out.flat[flat_i] += delta
            return out
        return leaf

    return _map_with_path(repl, tree)


def _map_with_path(fn, tree, prefix=""):
    import dataclasses

    from rgnp.params import is_leaf

    if is_leaf(tree):
        return fn(prefix or "p", tree)
    if isinstance(tree, dict):
        return {k: _map_with_path(fn, v, f"{prefix}/{k}" if prefix else str(k)) for k, v in tree.items()}
    if isinstance(tree, list):
        return [_map_with_path(fn, v, f"{prefix}/{i}" if prefix else str(i)) for i, v in enumerate(tree)]
    if isinstance(tree, tuple):
        return tuple(_map_with_path(fn, v, f"{prefix}/{i}" if prefix else str(i)) for i, v in enumerate(tree))
    if dataclasses.is_dataclass(tree):
        kw = {
            f.name: _map_with_path(fn, getattr(tree, f.name), f"{prefix}/{f.name}" if prefix else f.name)
            for f in dataclasses.fields(tree)
        }
        return dataclasses.replace(tree, **kw)
    return tree


def tree_get(tree, path, flat_i):
    for p, arr in leaves(tree):
        if p == path:
            return np.asarray(arr).flat[flat_i]
    raise KeyError(path)


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))
