"""Dense vector primitives shared by the losses, trainer and evaluation code.

All arithmetic is IEEE float64.  A feature vector is a plain 1-D numpy
array; ``as_vector`` is the single validation choke point, so downstream
code can assume finite, correctly shaped input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ShapeDescriptor",
    "as_vector",
    "cosine_distance",
    "dot",
    "mean_pool",
]


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Coerce ``x`` to a finite 1-D float64 array or raise ValueError."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise ValueError(f"{name} has non-finite components")
    return v


def _pair(f, g) -> tuple[np.ndarray, np.ndarray]:
    f = as_vector(f, "f")
    g = as_vector(g, "g")
    if f.shape != g.shape:
        raise ValueError(f"dimension mismatch: {f.shape[0]} vs {g.shape[0]}")
    return f, g


def dot(f, g) -> float:
    """Inner product of two equal-dimension vectors."""
    f, g = _pair(f, g)
    return float(np.dot(f, g))


def cosine_distance(f, g) -> float:
    """1 - cos(angle between f and g), in [0, 2].

    Raises ValueError if either vector has zero norm (the distance is
    undefined there).
    """
    f, g = _pair(f, g)
    nf = float(np.linalg.norm(f))
    ng = float(np.linalg.norm(g))
    if nf == 0.0 or ng == 0.0:
        raise ValueError("cosine distance undefined for zero-norm vectors")
    d = 1.0 - float(np.dot(f, g)) / (nf * ng)
    # clamp float noise back into the mathematical range
    return min(max(d, 0.0), 2.0)


@dataclass(frozen=True)
class ShapeDescriptor:
    """Mean of an object's per-view embeddings; the unit ranked at retrieval."""

    components: np.ndarray
    source_view_count: int


def mean_pool(views) -> ShapeDescriptor:
    """Component-wise mean of a non-empty list of equal-dimension view features."""
    if len(views) == 0:
        raise ValueError("mean_pool needs at least one view")
    rows = [as_vector(v, f"views[{i}]") for i, v in enumerate(views)]
    dims = {r.shape[0] for r in rows}
    if len(dims) != 1:
        raise ValueError(f"views have mixed dimensions: {sorted(dims)}")
    mat = np.stack(rows)
    return ShapeDescriptor(mat.mean(axis=0), mat.shape[0])
