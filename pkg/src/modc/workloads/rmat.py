"""Recursive-matrix (RMAT) synthetic graph generator and edge-list files."""

from __future__ import annotations

import numpy as np

__all__ = ["BadProbabilities", "RMAT_DEFAULTS", "rmat_generate", "read_edge_list", "write_edge_list"]

RMAT_DEFAULTS = (0.57, 0.19, 0.19, 0.05)


class BadProbabilities(ValueError):
    pass


def rmat_generate(scale: int, edge_factor: int = 16, a: float = 0.57, b: float = 0.19,
                  c: float = 0.19, d: float = 0.05, seed: int = 0) -> np.ndarray:
    """Draw ``edge_factor * 2**scale`` directed edges by recursive quadrant descent.

    Returns an ``(m, 2)`` int64 array of ``(src, dst)`` pairs.  Self loops
    and duplicate edges are kept.  The same arguments always give the same
    edges.
    """
    probs = np.array([a, b, c, d], dtype=float)
    if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
        raise BadProbabilities(f"quadrant probabilities {tuple(probs)} must be >= 0 and sum to 1")
    if scale < 1:
        raise ValueError("scale must be at least 1")
    if edge_factor < 0:
        raise ValueError("edge_factor must be non-negative")
    m = edge_factor << scale
    rng = np.random.default_rng(seed)
    src = np.zeros(m, dtype=np.int64)
    dst = np.zeros(m, dtype=np.int64)
    ab, abc = a + b, a + b + c
    for level in range(scale):
        r = rng.random(m)
        # quadrants: a = (0,0), b = (0,1), c = (1,0), d = (1,1)
        row_bit = r >= ab
        col_bit = ((r >= a) & (r < ab)) | (r >= abc)
        bit = np.int64(1) << (scale - 1 - level)
        src |= row_bit * bit
        dst |= col_bit * bit
    return np.stack([src, dst], axis=1)


def read_edge_list(path) -> np.ndarray:
    """Read whitespace-separated ``src dst`` lines; ``#`` starts a comment line."""
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'src dst', got {line!r}")
            pairs.append((int(parts[0]), int(parts[1])))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def write_edge_list(path, edges, comment: str | None = None) -> None:
    with open(path, "w") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        for s, t in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
            fh.write(f"{s} {t}\n")
