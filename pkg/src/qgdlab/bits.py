"""Bit strings are plain ``str`` of '0'/'1'.

One byte convention is used everywhere (codec files, transcript dumps, codeword
and selection hex): bits fill each byte most-significant first, and the last
byte is zero-padded on the right.
"""

import numpy as np

from .errors import FormatError


def check_bits(bits: str) -> str:
    if not isinstance(bits, str) or any(c not in "01" for c in bits):
        raise FormatError("bit string must contain only '0' and '1'")
    return bits


def pack_bits(bits: str) -> bytes:
    check_bits(bits)
    if not bits:
        return b""
    arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
    return np.packbits(arr, bitorder="big").tobytes()


def unpack_bits(data: bytes, nbits: int) -> str:
    if len(data) != (nbits + 7) // 8:
        raise FormatError(f"{nbits} bits need {(nbits + 7) // 8} bytes, got {len(data)}")
    arr = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="big")[:nbits]
    return (arr + ord("0")).astype(np.uint8).tobytes().decode("ascii")


def bits_to_hex(bits: str) -> str:
    return pack_bits(bits).hex()


def hex_to_bits(text: str, nbits: int) -> str:
    try:
        data = bytes.fromhex(text)
    except ValueError as exc:
        raise FormatError(f"bad hex payload: {exc}") from None
    return unpack_bits(data, nbits)
