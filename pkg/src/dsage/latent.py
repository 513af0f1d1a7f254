"""Continuous-genotype maze decoder.

A fixed random linear map with a sign threshold turns a real vector z into a
16x16 wall bitmap, giving the continuous-space optimizers a deterministic
environment generator to search through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .maze import INTERIOR

DEFAULT_LATENT_DIM = 32


@dataclass(frozen=True)
class DecoderParams:
    """Fixed projection (W, b), reproducible from the decoder seed."""

    weight: np.ndarray  # (256, d)
    bias: np.ndarray  # (256,)
    seed: int

    @classmethod
    def from_seed(cls, seed: int, dim: int = DEFAULT_LATENT_DIM) -> "DecoderParams":
        rng = np.random.Generator(np.random.PCG64(seed))
        scale = 1.0 / np.sqrt(dim)
        weight = rng.standard_normal((INTERIOR * INTERIOR, dim)) * scale
        # couple the first latent coordinate to every cell: a pure iid
        # projection concentrates wall counts near 128, which starves the
        # wall-count measure axis of diversity
        weight[:, 0] += 1.5 * scale
        bias = rng.standard_normal(INTERIOR * INTERIOR) * scale
        return cls(weight, bias, seed)

    @property
    def dim(self) -> int:
        return self.weight.shape[1]


def decode(z: np.ndarray, params: DecoderParams) -> np.ndarray:
    """Threshold the affine projection of z into a 256-bit wall bitmap."""
    z = np.asarray(z, dtype=float)
    if z.shape != (params.dim,):
        raise ValueError(f"expected latent of shape ({params.dim},), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("latent vector must be finite")
    return (params.weight @ z + params.bias > 0).astype(np.int8)
