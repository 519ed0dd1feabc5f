"""Numerics core: seeded random streams, power iteration, stable scalar maps.

Everything in this module works in 64-bit floats. The rest of the package
builds on these primitives, so determinism matters here: any two streams
constructed with the same seed and key produce bitwise-identical draws.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1


class DimensionError(ValueError):
    """Operands have incompatible or invalid shapes."""


class NumericalError(ArithmeticError):
    """A numeric result is unusable (non-finite, singular, ill-conditioned)."""


def require_finite(arr, what: str = "array") -> np.ndarray:
    """Return ``arr`` as float64, raising NumericalError on NaN/Inf entries."""
    out = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        bad = int(np.count_nonzero(~np.isfinite(out)))
        raise NumericalError(f"{what} contains {bad} non-finite value(s)")
    return out


class RngStream:
    """Deterministic random stream backed by the counter-based Philox generator.

    A stream is identified by ``(seed, key)``. Independent substreams are
    derived with :meth:`substream`, so parallel consumers never share state:

    >>> root = RngStream(42)
    >>> a, b = root.substream(1), root.substream(2)

    Identical ``(seed, key)`` pairs reproduce the exact same draw sequence.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        entropy = [self.seed & _MASK64] + [k & _MASK64 for k in self.key]
        self._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy))
        )

    def substream(self, *key: int) -> "RngStream":
        """Derive an independent stream keyed by ``(seed, *self.key, *key)``."""
        return RngStream(self.seed, self.key + tuple(int(k) for k in key))

    def normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"


def rademacher(rng: RngStream, n: int) -> np.ndarray:
    """Draw ``n`` independent signs, each +1 or -1 with equal probability."""
    if n < 1:
        raise DimensionError(f"rademacher needs n >= 1, got {n}")
    return rng.integers(0, 2, n).astype(np.float64) * 2.0 - 1.0


def power_iteration(w, iters: int, rng: RngStream | None = None,
                    u0=None, v0=None) -> tuple[float, np.ndarray, np.ndarray]:
    """Estimate the largest singular value of ``w`` by alternating power steps.

    Returns ``(sigma, u, v)`` where ``u``/``v`` are the left/right singular
    vector estimates; pass them back as ``u0``/``v0`` to warm-start the next
    call. A zero matrix is a documented degenerate case: sigma is 0 and the
    returned vectors are arbitrary unit vectors.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] == 0 or w.shape[1] == 0:
        raise DimensionError(f"power_iteration needs a nonempty 2-d matrix, got shape {w.shape}")
    if iters < 1:
        raise ValueError(f"power_iteration needs iters >= 1, got {iters}")
    rows, cols = w.shape

    def unit(k: int) -> np.ndarray:
        e = np.zeros(k)
        e[0] = 1.0
        return e

    if v0 is not None:
        v = np.asarray(v0, dtype=np.float64)
    elif u0 is not None:
        v = w.T @ np.asarray(u0, dtype=np.float64)
    elif rng is not None:
        v = rng.normal(cols)
    else:
        raise ValueError("power_iteration needs one of rng, u0, v0")
    nv = np.linalg.norm(v)
    v = v / nv if nv > 0 else unit(cols)

    u = unit(rows)
    for _ in range(iters):
        wu = w @ v
        nu = np.linalg.norm(wu)
        if nu == 0.0:
            return 0.0, u, v
        u = wu / nu
        wv = w.T @ u
        nv = np.linalg.norm(wv)
        if nv == 0.0:
            return 0.0, u, v
        v = wv / nv

    wv = w @ v
    sigma = float(np.linalg.norm(wv))
    if sigma > 0.0:
        u = wv / sigma
    return sigma, u, v


def stable_sigmoid(x):
    """Logistic sigmoid that never overflows; exact for |x| up to 1e4 and beyond."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def softplus(x):
    """ln(1 + e^x), computed without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.logaddexp(0.0, x)
    return out if out.ndim else float(out)


def inv_softplus(y):
    """Inverse of :func:`softplus`; requires y > 0.

    Round-trips with softplus to well under 1e-12 across the positive range.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0.0):
        raise ValueError("inv_softplus requires y > 0")
    out = np.where(
        y < 20.0,
        np.log(np.expm1(np.minimum(y, 20.0))),
        y + np.log1p(-np.exp(-np.maximum(y, 20.0))),
    )
    return out if out.ndim else float(out)


def binary_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy in the stable logit form.

    Returns ``(loss, dlogits)`` with ``dlogits[i] = (sigmoid(z_i) - y_i) / n``.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise DimensionError(f"logits shape {z.shape} != labels shape {y.shape}")
    n = z.size
    if n == 0:
        raise ValueError("binary_cross_entropy needs at least one element")
    # max(z, 0) - z*y + log(1 + exp(-|z|)) is the overflow-free form.
    loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    dlogits = (stable_sigmoid(z) - y) / n
    return loss, dlogits


def relu(x):
    return np.maximum(x, 0.0)


def relu_mask(x):
    """Subgradient mask of relu with the value at 0 defined as 0."""
    return (x > 0.0).astype(np.float64)


def kl_gaussian(mu, sigma, prior_std: float):
    """Elementwise KL( N(mu, sigma^2) || N(0, prior_std^2) )."""
    p2 = prior_std * prior_std
    return (
        np.log(prior_std) - np.log(sigma)
        + (sigma * sigma + mu * mu) / (2.0 * p2)
        - 0.5
    )


TWO_PI = 2.0 * math.pi
