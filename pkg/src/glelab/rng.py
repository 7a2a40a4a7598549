"""Counter-based random streams keyed by (seed, path index, role).

Every path of an ensemble owns independent Philox streams, so ensemble output
does not depend on how paths are scheduled or chunked.
"""
from __future__ import annotations

import numpy as np

ROLES = {"wiener": 0, "aux": 1, "forcing": 2, "init": 3, "bootstrap": 4, "circulant": 5}


def stream(seed: int, path: int = 0, role: str = "wiener") -> np.random.Generator:
    if role not in ROLES:
        raise KeyError(f"unknown stream role {role!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(path), ROLES[role]))
    return np.random.Generator(np.random.Philox(ss))


def streams(seed: int, n_paths: int, role: str, first_path: int = 0) -> list[np.random.Generator]:
    return [stream(seed, p, role) for p in range(first_path, first_path + n_paths)]


def draw_block(gens: list[np.random.Generator], n_steps: int, width: int | None = None) -> np.ndarray:
    """Standard normals of shape (n_steps, n_paths[, width]); column p comes from gens[p]."""
    shape = (n_steps,) if width is None else (n_steps, width)
    out = np.empty((len(gens),) + shape)
    for p, g in enumerate(gens):
        g.standard_normal(shape, out=out[p])
    return np.moveaxis(out, 0, 1)
