"""Ternary expert-knowledge graphs: edge / no-edge / unknown per cell.

Files are whitespace-separated n x n grids of the tokens ``1``, ``0`` and
``NA``; unknown cells carry no constraint and are the only ones the
sparsity penalty touches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PriorGraph:
    """``values`` holds 1.0 / 0.0 / NaN; ``mask`` is 1 exactly where the
    cell is known."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.values.shape != self.mask.shape or self.values.ndim != 2:
            raise ValueError("prior values and mask must be equal-shape square matrices")
        if self.values.shape[0] != self.values.shape[1]:
            raise ValueError("prior graph must be square")
        known = ~np.isnan(self.values)
        if not np.array_equal(self.mask.astype(bool), known):
            raise ValueError("mask must flag exactly the known (non-NA) cells")
        if np.any((self.values[known] != 0.0) & (self.values[known] != 1.0)):
            raise ValueError("known prior cells must be 0 or 1")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def known_values(self):
        """Values with unknown cells zero-filled (safe to multiply by mask)."""
        return np.where(self.mask > 0, self.values, 0.0)

    @classmethod
    def from_ternary(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(values=values, mask=(~np.isnan(values)).astype(np.float64))

    @classmethod
    def all_unknown(cls, n):
        return cls(values=np.full((n, n), np.nan), mask=np.zeros((n, n)))


def load_prior(path) -> PriorGraph:
    """Parse an n x n ternary grid; any token outside {0, 1, NA} is an error."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or line.lstrip().startswith("#"):
                continue
            row = []
            for col, tok in enumerate(tokens, start=1):
                if tok == "NA":
                    row.append(np.nan)
                elif tok in ("0", "1"):
                    row.append(float(tok))
                else:
                    raise ValueError(
                        f"{path}: bad prior token {tok!r} at line {lineno}, column {col} "
                        "(expected 0, 1 or NA)")
            rows.append(row)
    if not rows or any(len(r) != len(rows) for r in rows):
        raise ValueError(f"{path}: prior grid must be square, got rows of lengths "
                         f"{[len(r) for r in rows]}")
    return PriorGraph.from_ternary(np.array(rows))


def save_prior(path, prior: PriorGraph):
    with open(path, "w") as fh:
        for row, known in zip(prior.values, prior.mask):
            fh.write(" ".join("NA" if k == 0 else str(int(v))
                              for v, k in zip(row, known)) + "\n")


def prior_from_truth(truth, known_fraction, seed) -> PriorGraph:
    """Reveal a random fraction of a ground-truth binary graph, leaving the
    rest unknown.  Used by the synthetic experiments."""
    truth = np.asarray(truth, dtype=np.float64)
    rng = np.random.default_rng(seed)
    known = rng.random(truth.shape) < known_fraction
    values = np.where(known, truth, np.nan)
    return PriorGraph(values=values, mask=known.astype(np.float64))


def random_prior(n, known_fraction, seed) -> PriorGraph:
    """Seeded random ternary graph: the knowledge-free ablation control."""
    rng = np.random.default_rng(seed)
    known = rng.random((n, n)) < known_fraction
    values = np.where(known, (rng.random((n, n)) < 0.5).astype(float), np.nan)
    return PriorGraph(values=values, mask=known.astype(np.float64))
