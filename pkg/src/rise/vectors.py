"""Vector primitives shared by every loss term.

Similarity/distance metrics, prompt-ensemble averaging, and the
softmax/KL pair. Everything here is a pure function of its inputs and
computes in double precision; the gradient checks downstream rely on
that.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, DegenerateVector, DimError, EmptyInput

Array = np.ndarray

# Floor applied to the second KL argument before the log; keeps saturated
# teacher distributions (logits scaled by ~100) from producing infinities.
KL_FLOOR = 1e-12


def as_vector(x, name: str = "vector") -> Array:
    """Coerce to a 1-D float64 array, rejecting empty or non-finite input."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimError(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def check_same_dim(a: Array, b: Array, what: str = "vectors") -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimError(f"{what} dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    Raises DegenerateVector if either input has zero norm.
    """
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    check_same_dim(a, b)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateVector("cosine similarity is undefined for zero-norm input")
    return float(np.dot(a, b) / (na * nb))


def l1_distance(a, b) -> float:
    """Sum of absolute coordinate differences."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    check_same_dim(a, b)
    return float(np.sum(np.abs(a - b)))


def l2_distance(a, b) -> float:
    """Euclidean distance."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    check_same_dim(a, b)
    return float(np.linalg.norm(a - b))


def mean_embedding(vs) -> Array:
    """Coordinate-wise arithmetic mean of a non-empty list of vectors.

    Computed as min + exact-sum(shifted)/n per coordinate, which makes the
    result independent of input order and exactly equal to v for n copies
    of the same v.
    """
    if len(vs) == 0:
        raise EmptyInput("mean_embedding requires at least one vector")
    rows = [as_vector(v, f"vs[{i}]") for i, v in enumerate(vs)]
    dim = rows[0].shape[0]
    for i, r in enumerate(rows[1:], start=1):
        if r.shape[0] != dim:
            raise DimError(f"vs[{i}] has dim {r.shape[0]}, expected {dim}")
    mat = np.stack(rows)
    base = mat.min(axis=0)
    shifted = mat - base
    n = mat.shape[0]
    out = np.array([math.fsum(shifted[:, j]) for j in range(dim)]) / n
    return base + out


def softmax_with_temperature(logits, t: float) -> Array:
    """Temperature-scaled softmax, computed with max-subtraction.

    Returns a probability vector; entries sum to 1 for any finite logits
    and any t > 0.
    """
    if not (isinstance(t, (int, float)) and math.isfinite(t) and t > 0):
        raise ConfigError(f"temperature must be a positive finite real, got {t!r}")
    z = as_vector(logits, "logits") / float(t)
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_rows(logits: Array, t: float = 1.0) -> Array:
    """Row-wise temperature softmax for 2-D arrays (batched path)."""
    z = logits / t
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def kl_divergence(p, q) -> float:
    """KL divergence sum(p * ln(p/q)) between two probability vectors.

    Entries of q are floored at KL_FLOOR and renormalized before the log;
    terms with p == 0 contribute zero.
    """
    p = as_vector(p, "p")
    q = as_vector(q, "q")
    check_same_dim(p, q)
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0) or np.any(v > 1 + 1e-9) or abs(float(v.sum()) - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a probability vector (sum={v.sum()!r})")
    qf = np.maximum(q, KL_FLOOR)
    qf = qf / qf.sum()
    active = p > 0
    return float(np.sum(p[active] * (np.log(p[active]) - np.log(qf[active]))))


def normalize(v: Array) -> Array:
    """Scale to unit L2 norm; raises DegenerateVector on zero input."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise DegenerateVector("cannot normalize a zero vector")
    return v / n
