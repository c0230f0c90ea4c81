"""Reproducible scalar Brownian increments with exact coarsening.

Increments come from a Philox counter-based generator keyed by
``(seed, path_index)``, so any worker can rebuild any path bit for bit.
Each increment is rounded to a multiple of ``2**-QUANT_BITS``; partial sums
of such numbers are exact in double precision (while ``|W| < 2**12``),
which makes coarsening independent of summation order: coarsening by 2
twice equals coarsening by 4, and every level sees the same ``W(T)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

QUANT_BITS = 40
_QUANT = float(2**QUANT_BITS)
_HEADER = struct.Struct("<Qqdq")   # seed, path_index, k_fine, n_fine


@dataclass(frozen=True, eq=False)
class NoisePath:
    seed: int
    path_index: int
    k_fine: float
    n_fine: int
    increments: np.ndarray

    @property
    def T(self) -> float:
        return self.k_fine * self.n_fine

    def brownian(self) -> np.ndarray:
        """W(t_n) for n = 0..n_fine, starting at 0."""
        return np.concatenate([[0.0], np.cumsum(self.increments)])


def _quantize(x: np.ndarray) -> np.ndarray:
    return np.round(x * _QUANT) / _QUANT


def generate(seed: int, path_index: int, k_fine: float, n_fine: int) -> NoisePath:
    if not k_fine > 0:
        raise ValueError(f"k_fine must be positive, got {k_fine}")
    if int(n_fine) != n_fine or n_fine < 1:
        raise ValueError(f"n_fine must be a positive integer, got {n_fine}")
    key = np.array([seed & (2**64 - 1), path_index & (2**64 - 1)], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    z = rng.standard_normal(int(n_fine))
    inc = _quantize(np.sqrt(k_fine) * z)
    inc.flags.writeable = False
    return NoisePath(int(seed), int(path_index), float(k_fine), int(n_fine), inc)


def coarsen(path: NoisePath, factor: int) -> NoisePath:
    """Sum consecutive blocks of ``factor`` increments (time step factor*k)."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    if path.n_fine % factor:
        raise ValueError(f"factor {factor} does not divide {path.n_fine} steps")
    if factor == 1:
        return path
    inc = path.increments.reshape(-1, factor).sum(axis=1)
    inc.flags.writeable = False
    return NoisePath(path.seed, path.path_index, path.k_fine * factor, path.n_fine // factor, inc)


def dump(path: NoisePath, target) -> None:
    """Write header and little-endian float64 increments to a path or binary file."""
    data = _HEADER.pack(path.seed & (2**64 - 1), path.path_index, path.k_fine, path.n_fine)
    data += np.asarray(path.increments, dtype="<f8").tobytes()
    if hasattr(target, "write"):
        target.write(data)
    else:
        Path(target).write_bytes(data)


def load(source) -> NoisePath:
    data = source.read() if hasattr(source, "read") else Path(source).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated noise file")
    seed, idx, k, n = _HEADER.unpack_from(data)
    body = data[_HEADER.size:]
    if len(body) != 8 * n:
        raise ValueError(f"noise file declares {n} increments but holds {len(body) // 8}")
    inc = np.frombuffer(body, dtype="<f8").astype(float)
    inc.flags.writeable = False
    return NoisePath(seed, idx, k, n, inc)
