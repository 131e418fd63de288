"""Quantised gradient descent in the coordinator model, with a bit-metered
runtime and constructive lower-bound instances."""

__version__ = "0.1.0"

from .codec import GRID, EncodedVector, GridCodec, QuantiserConfig, bit_cost, decode, encode, quantise
from .errors import QgdlabError
from .geometry import (
    NetSet,
    PackingSet,
    codeword_to_point,
    epsilon_net,
    greedy_packing_oracle,
    grid_packing,
    packing_volume_bound,
)
from .objectives import ConeObjective, QuadraticSum, canonical_form, total
from .qgd import QgdParams, check_invariants, derive_params, random_instance, run_qgd
from .runtime import BitMeter, ProtocolSpec, qgd_as_protocol, run_protocol

__all__ = [
    "GRID",
    "EncodedVector",
    "GridCodec",
    "QuantiserConfig",
    "bit_cost",
    "decode",
    "encode",
    "quantise",
    "QgdlabError",
    "NetSet",
    "PackingSet",
    "codeword_to_point",
    "epsilon_net",
    "greedy_packing_oracle",
    "grid_packing",
    "packing_volume_bound",
    "ConeObjective",
    "QuadraticSum",
    "canonical_form",
    "total",
    "QgdParams",
    "check_invariants",
    "derive_params",
    "random_instance",
    "run_qgd",
    "BitMeter",
    "ProtocolSpec",
    "qgd_as_protocol",
    "run_protocol",
]
