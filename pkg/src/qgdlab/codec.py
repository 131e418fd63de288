"""Deterministic modulo-grid vector quantiser.

The encoder sends, per coordinate, the residue of the nearest grid index
modulo M. It never needs the decoder's estimate ``q``; the decoder picks the
representative of that residue class closest to ``q``. Whenever
||x - q|| <= R the class has exactly one member within R + s/2 of q, namely
the index the encoder rounded to, so reconstruction error is at most
s/2 per coordinate, i.e. eps in l2.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .bits import pack_bits, unpack_bits
from .errors import (
    CodecDomainError,
    FormatError,
    InvalidLambdaError,
    OutOfRadiusError,
    ShapeError,
)

_MAX_INDEX = 2.0**62
_HEADER = struct.Struct("<qdd")


@dataclass(frozen=True)
class QuantiserConfig:
    d: int
    eps: float
    R: float
    s: float = field(init=False)
    M: int = field(init=False)
    bits_per_coord: int = field(init=False)
    B: int = field(init=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ShapeError("dimension must be a positive integer")
        if not (math.isfinite(self.eps) and math.isfinite(self.R)) or not 0 < self.eps:
            raise InvalidLambdaError("eps and R must be finite with eps > 0")
        if not self.eps < self.R:
            raise InvalidLambdaError(f"need eps < R (lambda < 1), got eps={self.eps}, R={self.R}")
        rd = math.sqrt(self.d)
        M = math.ceil(self.R * rd / self.eps) + 2
        w = (M - 1).bit_length()
        object.__setattr__(self, "s", 2.0 * self.eps / rd)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "bits_per_coord", w)
        object.__setattr__(self, "B", self.d * w)
        # residue classes must be wider than the decoder's search window
        assert self.M * self.s >= (2 * self.R + 2 * self.s) * (1 - 1e-12)

    @property
    def fingerprint(self) -> tuple:
        return (self.d, float(self.eps), float(self.R))

    @property
    def lam(self) -> float:
        return self.eps / self.R


@dataclass(frozen=True)
class EncodedVector:
    bits: str
    fingerprint: tuple

    def __len__(self) -> int:
        return len(self.bits)


class Codec(Protocol):
    name: str

    def config(self, d: int, eps: float, R: float) -> QuantiserConfig: ...

    def encode(self, cfg: QuantiserConfig, x) -> EncodedVector: ...

    def decode(self, cfg: QuantiserConfig, q, msg: EncodedVector) -> np.ndarray: ...

    def quantise(self, cfg: QuantiserConfig, x, q) -> np.ndarray: ...


def _vector(x, d: int) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.shape != (d,):
        raise ShapeError(f"expected a vector of dimension {d}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise CodecDomainError("cannot encode non-finite values")
    return v


class GridCodec:
    """Cubic grid of step s = 2 eps / sqrt(d), indices sent modulo M."""

    name = "grid"

    def config(self, d: int, eps: float, R: float) -> QuantiserConfig:
        return QuantiserConfig(d, eps, R)

    def residues(self, cfg: QuantiserConfig, x) -> np.ndarray:
        x = _vector(x, cfg.d)
        t = x / cfg.s + 0.5
        if np.any(np.abs(t) >= _MAX_INDEX):
            raise CodecDomainError("value too large for the grid step")
        # floor(x/s + 1/2): round half toward +inf
        return np.floor(t).astype(np.int64) % cfg.M

    def encode(self, cfg: QuantiserConfig, x) -> EncodedVector:
        w = cfg.bits_per_coord
        # little-endian within each field, coordinate 0 first
        bits = "".join(format(int(k), f"0{w}b")[::-1] for k in self.residues(cfg, x))
        return EncodedVector(bits, cfg.fingerprint)

    def unpack(self, cfg: QuantiserConfig, msg: EncodedVector) -> np.ndarray:
        if msg.fingerprint != cfg.fingerprint:
            raise FormatError("message was encoded under a different configuration")
        if len(msg.bits) != cfg.B:
            raise FormatError(f"expected {cfg.B} bits, got {len(msg.bits)}")
        w = cfg.bits_per_coord
        try:
            k = np.array([int(msg.bits[j * w : (j + 1) * w][::-1], 2) for j in range(cfg.d)])
        except ValueError:
            raise FormatError("payload is not a bit string") from None
        if np.any(k >= cfg.M):
            raise FormatError("residue index out of range")
        return k.astype(np.int64)

    def decode(self, cfg: QuantiserConfig, q, msg: EncodedVector) -> np.ndarray:
        k = self.unpack(cfg, msg)
        q = _vector(q, cfg.d)
        c = q / cfg.s
        if np.any(np.abs(c) >= _MAX_INDEX):
            raise CodecDomainError("estimate too large for the grid step")
        base = k + cfg.M * np.round((c - k) / cfg.M).astype(np.int64)
        cands = np.stack([base - cfg.M, base, base + cfg.M])
        # ascending candidates, argmin takes the first minimum: ties go to the smaller n
        dist = np.abs(cands * cfg.s - q)
        n = cands[np.argmin(dist, axis=0), np.arange(cfg.d)]
        return n * cfg.s

    def quantise(self, cfg: QuantiserConfig, x, q) -> np.ndarray:
        x = _vector(x, cfg.d)
        q = _vector(q, cfg.d)
        gap = float(np.linalg.norm(x - q))
        if gap > cfg.R:
            raise OutOfRadiusError(f"||x - q|| = {gap:.6g} exceeds radius R = {cfg.R:.6g}")
        return self.decode(cfg, q, self.encode(cfg, x))


GRID = GridCodec()
CODECS = {GRID.name: GRID}


def get_codec(name: str) -> GridCodec:
    try:
        return CODECS[name]
    except KeyError:
        raise ValueError(f"unknown codec {name!r}; available: {sorted(CODECS)}") from None


def encode(cfg: QuantiserConfig, x) -> EncodedVector:
    return GRID.encode(cfg, x)


def decode(cfg: QuantiserConfig, q, msg: EncodedVector) -> np.ndarray:
    return GRID.decode(cfg, q, msg)


def quantise(cfg: QuantiserConfig, x, q) -> np.ndarray:
    return GRID.quantise(cfg, x, q)


def bit_cost(d: int, eps: float, R: float) -> int:
    """Payload length B = d * ceil(log2(ceil(R sqrt(d) / eps) + 2))."""
    return QuantiserConfig(d, eps, R).B


# --- file format -----------------------------------------------------------
# header: d as int64, eps and R as float64 (little-endian), then the payload
# zero-padded to a byte boundary. Only the payload is ever metered.


def to_bytes(msg: EncodedVector) -> bytes:
    d, eps, R = msg.fingerprint
    return _HEADER.pack(d, eps, R) + pack_bits(msg.bits)


def from_bytes(data: bytes) -> tuple[QuantiserConfig, EncodedVector]:
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    d, eps, R = _HEADER.unpack_from(data)
    cfg = QuantiserConfig(d, eps, R)
    bits = unpack_bits(data[_HEADER.size :], cfg.B)
    return cfg, EncodedVector(bits, cfg.fingerprint)


def write_encoded(msg: EncodedVector, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(msg))


def read_encoded(path: str | os.PathLike) -> tuple[QuantiserConfig, EncodedVector]:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
