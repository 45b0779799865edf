"""Counter-based random number streams.

Streams are keyed by (seed, replica). Distinct pairs give statistically
independent Philox streams (2^192 blocks apart); the same pair reproduces
bit-identical output on every platform. Gaussians are drawn through the
inverse normal CDF applied to lattice uniforms (k + 1/2)/2^53, which never
touches the endpoints 0 or 1 and keeps one 64-bit word per variate.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

# Offset placing every uniform strictly inside (0, 1).
_HALF_ULP = 2.0 ** -54


def stream(seed: int, replica: int = 0) -> Generator:
    """Return the generator for the (seed, replica) stream."""
    if not 0 <= int(replica) < 2 ** 64:
        raise ValueError("replica must fit in 64 bits")
    return Generator(Philox(key=int(seed) & (2 ** 128 - 1),
                            counter=[0, 0, 0, int(replica)]))


def uniforms_open(gen: Generator, n: int) -> np.ndarray:
    """n uniforms on the open interval (0, 1), one 64-bit word each."""
    return gen.random(n) + _HALF_ULP


def normals(gen: Generator, n: int) -> np.ndarray:
    """n standard normals via the inverse-CDF transform."""
    return ndtri(uniforms_open(gen, n))
