import pytest
from hypothesis import given
from hypothesis import strategies as st

from qgdlab.bits import bits_to_hex, check_bits, hex_to_bits, pack_bits, unpack_bits
from qgdlab.errors import FormatError

bitstrings = st.text(alphabet="01", max_size=200)


def test_msb_first_with_right_padding():
    assert pack_bits("1") == b"\x80"
    assert pack_bits("00000001") == b"\x01"
    assert pack_bits("101000001") == b"\xa0\x80"
    assert bits_to_hex("1000") == "80"


def test_empty():
    assert pack_bits("") == b""
    assert unpack_bits(b"", 0) == ""


@given(bitstrings)
def test_round_trip(bits):
    assert unpack_bits(pack_bits(bits), len(bits)) == bits
    assert hex_to_bits(bits_to_hex(bits), len(bits)) == bits


@pytest.mark.parametrize("bad", ["012", "ab", "1 0"])
def test_rejects_non_bits(bad):
    with pytest.raises(FormatError):
        check_bits(bad)


def test_length_mismatch():
    with pytest.raises(FormatError):
        unpack_bits(b"\x00\x00", 3)
    with pytest.raises(FormatError):
        hex_to_bits("zz", 4)
