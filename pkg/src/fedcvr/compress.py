"""Unbiased randomized compressors and their uplink bit costs.

Three operators are provided:

* ``identity``  -- no compression, ``omega = 0``.
* ``randk:<k>`` -- keep ``k`` of ``d`` coordinates uniformly at random and
  rescale them by ``d / k``; ``omega = d / k - 1``.
* ``natural``   -- stochastic rounding of every coordinate to one of the two
  neighbouring powers of two; ``omega = 1 / 8``.

All arithmetic is float64. The bit model pretends payload values are 32-bit
floats: identity sends ``32 d`` bits, RandK sends ``k (32 + ceil(log2 d))``
bits (value plus index), natural compression sends ``9 d`` bits (sign plus
8-bit exponent).
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np


class CompressorKind(str, Enum):
    IDENTITY = "identity"
    RANDK = "randk"
    NATURAL = "natural"


@dataclass(frozen=True)
class CompressorSpec:
    kind: CompressorKind
    dim: int
    k: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CompressorKind(self.kind))
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.kind is CompressorKind.RANDK:
            if self.k is None or not 1 <= self.k <= self.dim:
                raise ValueError(f"randk needs 1 <= k <= dim={self.dim}, got k={self.k}")
        elif self.k is not None:
            raise ValueError(f"k is only meaningful for randk, got k={self.k} for {self.kind.value}")

    @property
    def label(self) -> str:
        if self.kind is CompressorKind.RANDK:
            return f"randk:{self.k}"
        return self.kind.value


@dataclass(frozen=True)
class CompressedVector:
    """One compressed uplink message.

    ``indices is None`` means ``values`` is a dense length-``dim`` payload;
    otherwise ``values[j]`` belongs at coordinate ``indices[j]``.
    """

    dim: int
    values: np.ndarray
    indices: Optional[np.ndarray]
    bit_cost: int


def parse_compressor(text: str, dim: int) -> CompressorSpec:
    """Build a spec from ``identity``, ``natural`` or ``randk:<k>``."""
    name, _, arg = text.strip().lower().partition(":")
    if name == "randk":
        try:
            k = int(arg)
        except ValueError:
            raise ValueError(f"randk needs an integer k, e.g. 'randk:5'; got {text!r}") from None
        return CompressorSpec(CompressorKind.RANDK, dim, k)
    if name in ("identity", "natural") and not arg:
        return CompressorSpec(CompressorKind(name), dim)
    raise ValueError(f"unknown compressor {text!r}; expected identity, natural or randk:<k>")


def omega(spec: CompressorSpec) -> float:
    """Variance constant of the operator: E||C(x) - x||^2 <= omega ||x||^2."""
    if spec.kind is CompressorKind.IDENTITY:
        return 0.0
    if spec.kind is CompressorKind.RANDK:
        return spec.dim / spec.k - 1.0
    return 0.125


def _index_bits(dim: int) -> int:
    # ceil(log2(dim)), exact in integers
    return (dim - 1).bit_length()


def bit_cost_model(spec: CompressorSpec) -> int:
    """Uplink bits of one message produced by ``spec``."""
    if spec.kind is CompressorKind.IDENTITY:
        return 32 * spec.dim
    if spec.kind is CompressorKind.RANDK:
        return spec.k * (32 + _index_bits(spec.dim))
    return 9 * spec.dim


def natural_round(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Round each entry to a neighbouring signed power of two, unbiasedly."""
    x = np.asarray(x, dtype=np.float64)
    mag = np.abs(x)
    # mag = m * 2**e with m in [0.5, 1): lower power of two is 2**(e-1)
    _, e = np.frexp(mag)
    low = np.ldexp(1.0, e - 1)
    p_up = np.where(mag > 0, (mag - low) / np.where(mag > 0, low, 1.0), 0.0)
    up = rng.random(x.shape) < p_up
    out = np.where(up, 2.0 * low, low)
    out = np.where(mag > 0, out, 0.0)
    return np.copysign(out, x)


def _randk_indices(rng: np.random.Generator, dim: int, k: int, size: int) -> np.ndarray:
    # the k smallest of d iid uniform keys form a uniform k-subset
    keys = rng.random((size, dim))
    if k == dim:
        idx = np.broadcast_to(np.arange(dim), (size, dim))
    else:
        idx = np.argpartition(keys, k - 1, axis=1)[:, :k]
    return np.sort(idx, axis=1)


def compress(spec: CompressorSpec, x: np.ndarray, rng: np.random.Generator) -> CompressedVector:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.dim,):
        raise ValueError(f"expected a vector of length {spec.dim}, got shape {x.shape}")
    cost = bit_cost_model(spec)
    if spec.kind is CompressorKind.IDENTITY:
        return CompressedVector(spec.dim, x.copy(), None, cost)
    if spec.kind is CompressorKind.RANDK:
        idx = _randk_indices(rng, spec.dim, spec.k, 1)[0]
        return CompressedVector(spec.dim, x[idx] * (spec.dim / spec.k), idx, cost)
    return CompressedVector(spec.dim, natural_round(x, rng), None, cost)


def decode(cv: CompressedVector) -> np.ndarray:
    if cv.indices is None:
        return np.array(cv.values, dtype=np.float64, copy=True)
    out = np.zeros(cv.dim)
    out[cv.indices] = cv.values
    return out


def sample_decoded(spec: CompressorSpec, x: np.ndarray, trials: int, rng: np.random.Generator) -> np.ndarray:
    """``trials`` independent draws of ``decode(compress(spec, x))`` as rows.

    Draw-for-draw identical to calling :func:`compress` ``trials`` times on
    the same generator.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.dim,):
        raise ValueError(f"expected a vector of length {spec.dim}, got shape {x.shape}")
    if spec.kind is CompressorKind.IDENTITY:
        return np.tile(x, (trials, 1))
    if spec.kind is CompressorKind.NATURAL:
        return natural_round(np.broadcast_to(x, (trials, spec.dim)), rng)
    idx = _randk_indices(rng, spec.dim, spec.k, trials)
    out = np.zeros((trials, spec.dim))
    np.put_along_axis(out, idx, np.take(x, idx) * (spec.dim / spec.k), axis=1)
    return out


def estimate_omega_empirical(
    spec: CompressorSpec, x: np.ndarray, trials: int, rng: np.random.Generator
) -> float:
    """Sample mean of ||C(x) - x||^2 / ||x||^2 over ``trials`` draws."""
    x = np.asarray(x, dtype=np.float64)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sq = float(x @ x)
    if sq == 0.0:
        raise ValueError("x must be non-zero")
    total = 0.0
    done = 0
    chunk = max(1, 2**20 // spec.dim)
    while done < trials:
        m = min(chunk, trials - done)
        err = sample_decoded(spec, x, m, rng) - x
        total += float(np.sum(err * err))
        done += m
    return total / (trials * sq)
