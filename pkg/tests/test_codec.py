import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qgdlab.codec import (
    GRID,
    EncodedVector,
    QuantiserConfig,
    bit_cost,
    decode,
    encode,
    from_bytes,
    get_codec,
    quantise,
    read_encoded,
    to_bytes,
    write_encoded,
)
from qgdlab.errors import CodecDomainError, FormatError, InvalidLambdaError, OutOfRadiusError, ShapeError


def oracle_encode(d, eps, R, x):
    """Scalar re-implementation: residue per coordinate, little-endian fixed-width fields."""
    s = 2 * eps / math.sqrt(d)
    M = math.ceil(R * math.sqrt(d) / eps) + 2
    w = math.ceil(math.log2(M))
    out = ""
    for xj in x:
        k = math.floor(xj / s + 0.5) % M
        out += "".join(str((k >> b) & 1) for b in range(w))
    return out


def oracle_decode(d, eps, R, q, bits):
    """Search the residue class near q coordinate by coordinate."""
    s = 2 * eps / math.sqrt(d)
    M = math.ceil(R * math.sqrt(d) / eps) + 2
    w = math.ceil(math.log2(M))
    out = []
    for j, qj in enumerate(q):
        k = sum(int(c) << b for b, c in enumerate(bits[j * w : (j + 1) * w]))
        c = round(qj / s)
        cands = [n for n in range(c - 2 * M, c + 2 * M + 1) if n % M == k]
        out.append(min(cands, key=lambda n: (abs(n * s - qj), n)) * s)
    return np.array(out)


@st.composite
def cases(draw, max_d=64):
    d = draw(st.integers(1, max_d))
    lam = 2.0 ** draw(st.floats(-10, math.log2(0.9)))
    R = 10.0 ** draw(st.floats(-4, 3))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    q = rng.normal(size=d) * R * 10.0 ** rng.uniform(-1, 2)
    u = rng.normal(size=d)
    x = q + u / np.linalg.norm(u) * R * draw(st.floats(0, 1))
    return QuantiserConfig(d, lam * R, R), x, q


class TestConfig:
    def test_hand_trace(self):
        cfg = QuantiserConfig(1, 0.25, 1.0)
        assert (cfg.s, cfg.M, cfg.bits_per_coord, cfg.B) == (0.5, 6, 3, 3)

    def test_four_dims(self):
        cfg = QuantiserConfig(4, 0.99, 1.0)
        assert cfg.s == pytest.approx(0.99)
        assert (cfg.M, cfg.bits_per_coord, cfg.B) == (5, 3, 12)

    @pytest.mark.parametrize("eps,R", [(1.0, 1.0), (2.0, 1.0), (0.0, 1.0), (-1.0, 1.0), (0.1, math.inf)])
    def test_invalid_lambda(self, eps, R):
        with pytest.raises(InvalidLambdaError):
            QuantiserConfig(1, eps, R)

    def test_bad_dimension(self):
        with pytest.raises(ShapeError):
            QuantiserConfig(0, 0.1, 1.0)

    @given(cases())
    def test_invariants(self, case):
        cfg, _, _ = case
        assert cfg.M >= 3 and cfg.B >= cfg.d
        assert cfg.M * cfg.s >= (2 * cfg.R + 2 * cfg.s) * (1 - 1e-12)
        assert cfg.lam == pytest.approx(cfg.eps / cfg.R)


class TestBitCost:
    def test_values(self):
        assert bit_cost(1, 0.25, 1.0) == 3
        # M = ceil(R sqrt(d) / eps) + 2 = ceil(1.11) + 2 = 4
        assert QuantiserConfig(1, 0.9, 1.0).M == 4
        assert bit_cost(1, 0.9, 1.0) == 2

    def test_invalid(self):
        with pytest.raises(InvalidLambdaError):
            bit_cost(1, 1.0, 1.0)

    @given(st.integers(1, 64), st.floats(1e-3, 0.5), st.floats(0.01, 100))
    def test_formula_and_monotonicity(self, d, lam, R):
        eps = lam * R
        B = bit_cost(d, eps, R)
        assert B == d * math.ceil(math.log2(math.ceil(R * math.sqrt(d) / eps) + 2))
        assert bit_cost(d, eps * 1.5, R) <= B
        assert bit_cost(d, eps, R * 1.5) >= B
        assert bit_cost(d + 1, eps, R) >= B


class TestEncode:
    def test_hand_trace(self):
        cfg = QuantiserConfig(1, 0.25, 1.0)
        assert encode(cfg, [0.3]).bits == "100"

    def test_zero(self):
        cfg = QuantiserConfig(5, 0.1, 2.0)
        assert encode(cfg, np.zeros(5)).bits == "0" * cfg.B

    def test_round_half_up(self):
        cfg = QuantiserConfig(1, 0.25, 1.0)  # s = 0.5
        assert GRID.residues(cfg, [0.25])[0] == 1
        assert GRID.residues(cfg, [-0.25])[0] == 0
        assert GRID.residues(cfg, [-0.75])[0] == 5  # -1 mod 6

    def test_non_finite(self):
        cfg = QuantiserConfig(2, 0.1, 1.0)
        with pytest.raises(CodecDomainError):
            encode(cfg, [0.0, math.nan])
        with pytest.raises(CodecDomainError):
            encode(cfg, [math.inf, 0.0])

    def test_shape(self):
        with pytest.raises(ShapeError):
            encode(QuantiserConfig(2, 0.1, 1.0), [0.0])

    @given(cases())
    def test_matches_oracle_and_is_deterministic(self, case):
        cfg, x, _ = case
        bits = encode(cfg, x).bits
        assert bits == oracle_encode(cfg.d, cfg.eps, cfg.R, x)
        assert bits == encode(cfg, x.copy()).bits
        assert len(bits) == cfg.B


class TestDecode:
    def test_hand_trace(self):
        cfg = QuantiserConfig(1, 0.25, 1.0)
        y = decode(cfg, [0.0], encode(cfg, [0.3]))
        assert y[0] == 0.5
        assert abs(y[0] - 0.3) <= 0.25

    @given(cases())
    def test_self_decode_is_nearest_grid_point(self, case):
        cfg, _, q = case
        y = decode(cfg, q, encode(cfg, q))
        assert np.all(np.abs(y - q) <= cfg.s / 2 * (1 + 1e-12))

    def test_wrong_length(self):
        cfg = QuantiserConfig(2, 0.1, 1.0)
        with pytest.raises(FormatError):
            decode(cfg, [0.0, 0.0], EncodedVector("0" * (cfg.B - 1), cfg.fingerprint))

    def test_wrong_config(self):
        cfg = QuantiserConfig(1, 0.25, 1.0)
        other = QuantiserConfig(1, 0.2, 1.0)
        with pytest.raises(FormatError):
            decode(other, [0.0], encode(cfg, [0.3]))

    def test_residue_out_of_range(self):
        cfg = QuantiserConfig(1, 0.25, 1.0)  # M = 6, width 3
        with pytest.raises(FormatError):
            decode(cfg, [0.0], EncodedVector("111", cfg.fingerprint))

    def test_tie_goes_to_smaller_index(self):
        cfg = QuantiserConfig(1, 0.25, 1.0)  # s = 0.5, M = 6, class spacing 3
        # residue 0: candidates ... -6, 0, 6 ...; q = 1.5 is equidistant from 0 and 3
        msg = EncodedVector("000", cfg.fingerprint)
        assert decode(cfg, [1.5], msg)[0] == 0.0
        # residue 3 candidates -3 and 3 are equidistant from q = 0
        msg = EncodedVector("110", cfg.fingerprint)
        assert decode(cfg, [0.0], msg)[0] == -1.5

    @given(cases())
    def test_matches_oracle(self, case):
        cfg, x, q = case
        msg = encode(cfg, x)
        np.testing.assert_array_equal(decode(cfg, q, msg), oracle_decode(cfg.d, cfg.eps, cfg.R, q, msg.bits))


class TestQuantise:
    def test_zero(self):
        cfg = QuantiserConfig(3, 0.1, 1.0)
        np.testing.assert_array_equal(quantise(cfg, np.zeros(3), np.zeros(3)), np.zeros(3))

    def test_out_of_radius(self):
        cfg = QuantiserConfig(2, 0.1, 1.0)
        with pytest.raises(OutOfRadiusError):
            quantise(cfg, [1.0, 1.0], [0.0, 0.0])

    @given(cases())
    def test_contract(self, case):
        cfg, x, q = case
        y = quantise(cfg, x, q)
        np.testing.assert_array_equal(y, decode(cfg, q, encode(cfg, x)))
        assert np.linalg.norm(y - x) <= cfg.eps

    @given(cases(max_d=8))
    def test_boundary_radius(self, case):
        cfg, x, q = case
        u = x - q
        if np.linalg.norm(u) == 0:
            u = np.ones(cfg.d)
        x = q + u / np.linalg.norm(u) * cfg.R * (1 - 1e-12)
        assert np.linalg.norm(quantise(cfg, x, q) - x) <= cfg.eps


class TestFiles:
    def test_round_trip(self, tmp_path):
        cfg = QuantiserConfig(3, 0.01, 0.7)
        msg = encode(cfg, [0.1, -0.2, 0.3])
        data = to_bytes(msg)
        assert len(data) == 24 + (cfg.B + 7) // 8
        cfg2, msg2 = from_bytes(data)
        assert cfg2 == cfg and msg2 == msg
        write_encoded(msg, tmp_path / "m.bin")
        assert read_encoded(tmp_path / "m.bin") == (cfg, msg)

    def test_truncated(self):
        cfg = QuantiserConfig(3, 0.01, 0.7)
        data = to_bytes(encode(cfg, [0.1, -0.2, 0.3]))
        with pytest.raises(FormatError):
            from_bytes(data[:10])
        with pytest.raises(FormatError):
            from_bytes(data[:-1])


def test_registry():
    assert get_codec("grid") is GRID
    with pytest.raises(ValueError):
        get_codec("lattice")
