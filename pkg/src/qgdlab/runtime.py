"""Bit-metered coordinator-model simulator.

Execution alternates strictly: the coordinator either outputs or sends one
message to a single node, and that node answers with one message. Endpoints
are built per run from factories so that repeated runs never share state;
each endpoint is a callable ``act(transcript) -> Send | Output`` and receives
its private random bits at construction.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from .bits import bits_to_hex, check_bits
from .codec import GRID, EncodedVector
from .errors import FormatError, NonTerminationError, ScheduleViolationError
from .qgd import ACK_BITS, POLL_BITS, RoundState, bootstrap_configs, gradient_bound, round_configs

COORDINATOR = 0
DEFAULT_MAX_MESSAGES = 10**7


@dataclass(frozen=True)
class Message:
    round: int
    src: int
    dst: int
    payload: str

    @property
    def direction(self) -> str:
        return "c2n" if self.src == COORDINATOR else "n2c"

    @property
    def node(self) -> int:
        return self.dst if self.src == COORDINATOR else self.src

    def __len__(self) -> int:
        return len(self.payload)


@dataclass(frozen=True)
class Send:
    to: int
    payload: str
    round: int | None = None


@dataclass(frozen=True)
class Output:
    value: Any


@dataclass
class Transcript:
    endpoint: int
    messages: list = field(default_factory=list)
    sent: int = 0
    received: int = 0

    def record(self, msg: Message) -> None:
        self.messages.append(msg)
        if msg.src == self.endpoint:
            self.sent += len(msg)
        else:
            self.received += len(msg)

    @property
    def last_received(self) -> Message | None:
        for msg in reversed(self.messages):
            if msg.dst == self.endpoint:
                return msg
        return None


@dataclass
class ProtocolSpec:
    """Factories for one run's endpoints.

    ``coordinator(N, randomness)`` and ``node(i, input, randomness)`` each
    return an ``act(transcript)`` callable; ``randomness_bits`` is the length c
    of every endpoint's private random string.
    """

    coordinator: Callable
    node: Callable
    randomness_bits: int = 0
    name: str = "protocol"


@dataclass
class BitMeter:
    total: int = 0
    per_endpoint: dict = field(default_factory=lambda: defaultdict(lambda: {"sent": 0, "received": 0}))
    per_round: dict = field(default_factory=lambda: defaultdict(int))

    def count(self, msg: Message) -> None:
        n = len(msg)
        self.total += n
        self.per_endpoint[msg.src]["sent"] += n
        self.per_endpoint[msg.dst]["received"] += n
        self.per_round[msg.round] += n

    def summary(self) -> dict:
        rounds = sorted(self.per_round)
        return {
            "total_bits": self.total,
            "coordinator": dict(self.per_endpoint[COORDINATOR]),
            "nodes": {str(k): dict(v) for k, v in sorted(self.per_endpoint.items()) if k != COORDINATOR},
            "per_round": [{"round": r, "bits": self.per_round[r]} for r in rounds],
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


@dataclass
class ProtocolResult:
    output: Any
    transcripts: dict
    meter: BitMeter
    log: list
    endpoints: dict


def endpoint_randomness(seed: int, N: int, c: int) -> list[str]:
    """Independent c-bit strings for the coordinator (index 0) and nodes 1..N."""
    children = np.random.SeedSequence(seed).spawn(N + 1)
    return ["".join(map(str, np.random.default_rng(ch).integers(0, 2, c))) for ch in children]


def run_protocol(spec: ProtocolSpec, inputs, seed: int = 0, max_messages: int = DEFAULT_MAX_MESSAGES) -> ProtocolResult:
    inputs = list(inputs)
    N = len(inputs)
    rand = endpoint_randomness(seed, N, spec.randomness_bits)
    coord = spec.coordinator(N, rand[0])
    nodes = {i: spec.node(i, inputs[i - 1], rand[i]) for i in range(1, N + 1)}
    transcripts = {i: Transcript(i) for i in range(N + 1)}
    meter = BitMeter()
    log = []

    def deliver(msg: Message) -> None:
        if len(log) >= max_messages:
            raise NonTerminationError(f"protocol exceeded {max_messages} messages")
        check_bits(msg.payload)
        log.append(msg)
        meter.count(msg)
        transcripts[msg.src].record(msg)
        transcripts[msg.dst].record(msg)

    while True:
        action = coord(transcripts[COORDINATOR])
        if isinstance(action, Output):
            endpoints = {COORDINATOR: coord, **nodes}
            return ProtocolResult(action.value, transcripts, meter, log, endpoints)
        if not isinstance(action, Send) or not 1 <= action.to <= N:
            raise ScheduleViolationError(f"coordinator must output or message a node in [1, {N}], got {action!r}")
        if not action.payload:
            raise ScheduleViolationError("messages must carry at least one bit")
        rnd = action.round if action.round is not None else 0
        deliver(Message(rnd, COORDINATOR, action.to, action.payload))

        reply = nodes[action.to](transcripts[action.to])
        if isinstance(reply, str):
            reply = Send(COORDINATOR, reply)
        if not isinstance(reply, Send) or reply.to != COORDINATOR:
            raise ScheduleViolationError(f"node {action.to} may only answer the coordinator, got {reply!r}")
        if not reply.payload:
            raise ScheduleViolationError(f"node {action.to} sent an empty message")
        deliver(Message(reply.round if reply.round is not None else rnd, action.to, COORDINATOR, reply.payload))


def bits_total(transcripts) -> int:
    """Total bits transmitted.

    Accepts the per-endpoint transcript mapping of a run (each message is
    counted once, from the node side) or any iterable of messages.
    """
    if isinstance(transcripts, dict):
        return sum(len(m) for k, tr in transcripts.items() if k != COORDINATOR for m in tr.messages)
    return sum(len(m) for m in transcripts)


def dumps_transcript(log: Iterable[Message]) -> str:
    """One line per message: ``round direction endpoint nbits hexpayload``."""
    return "".join(f"{m.round} {m.direction} {m.node} {len(m)} {bits_to_hex(m.payload)}\n" for m in log)


class GeneratorEndpoint:
    """Drive a generator as an endpoint.

    The generator yields ``Send`` actions and is sent the payload of each
    incoming message. A node generator starts with a bare ``yield`` to wait for
    its first message. When a coordinator generator returns, its return value
    becomes the run's output.
    """

    def __init__(self, gen, role: str):
        self.gen = gen
        self.role = role
        self.started = False

    def __call__(self, transcript: Transcript):
        last = transcript.last_received
        incoming = last.payload if last is not None else None
        try:
            if not self.started:
                self.started = True
                action = next(self.gen)
                if action is None:
                    action = self.gen.send(incoming)
            else:
                action = self.gen.send(incoming)
        except StopIteration as stop:
            if self.role == "coordinator":
                return Output(stop.value)
            raise ScheduleViolationError("node was messaged after it finished") from None
        return action


def echo_protocol(width: int = 8) -> ProtocolSpec:
    """Coordinator sends a 1-bit query to node 1, which answers with its input; output is that input."""

    def coordinator(N, r):
        def run():
            reply = yield Send(1, "1")
            return reply

        return GeneratorEndpoint(run(), "coordinator")

    def node(i, value, r):
        def act(transcript):
            return format(int(value), f"0{width}b")

        return act

    return ProtocolSpec(coordinator, node, name="echo")


def silent_protocol() -> ProtocolSpec:
    """Outputs immediately without communicating."""
    return ProtocolSpec(lambda N, r: (lambda tr: Output(None)), lambda i, v, r: (lambda tr: ""), name="silent")


def _decode(codec, cfg, q, payload: str) -> np.ndarray:
    if len(payload) != cfg.B:
        raise FormatError(f"expected a {cfg.B}-bit codec payload, got {len(payload)} bits")
    return codec.decode(cfg, q, EncodedVector(payload, cfg.fingerprint))


def qgd_as_protocol(params, objectives, codec=GRID, x0=None, G0=None, observer: Callable | None = None) -> ProtocolSpec:
    """Quantised gradient descent in the coordinator model.

    Schedule: round 0 polls every node (1 bit) and collects bootstrap gradients,
    then each broadcast of the round-t estimate is answered by that node's
    round-(t+1) gradient message. After the round-T broadcast every node answers
    with a 1-bit acknowledgement (metered as round T+1) and the coordinator
    outputs x^(T). ``observer`` receives the coordinator-side ``RoundState`` of
    every round, for invariant checking only.
    """
    objectives = list(objectives)
    N, d = len(objectives), objectives[0].d
    G0 = gradient_bound(objectives, params.W) if G0 is None else float(G0)
    x_init = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    boot_node, boot_coord = bootstrap_configs(params, N, d, G0, codec)
    T = params.T
    zero = np.zeros(d)

    def coordinator(n_nodes, r):
        if n_nodes != N:
            raise ScheduleViolationError(f"protocol was built for {N} nodes, got {n_nodes}")

        def run():
            boot = []
            for i in range(1, N + 1):
                boot.append(_decode(codec, boot_node, zero, (yield Send(i, "1" * POLL_BITS, 0))))
            q_local = np.stack(boot)
            msg = codec.encode(boot_coord, q_local.sum(axis=0))
            q = codec.decode(boot_coord, zero, msg)
            x = x_init.copy()
            if observer:
                observer(RoundState(0, x.copy(), q.copy(), q_local.copy(), params.radius(0)))
            for t in range(1, T + 1):
                node_cfg, coord_cfg = round_configs(params, t, N, d, codec)
                x = x - params.gamma * q
                replies = []
                for i in range(1, N + 1):
                    replies.append((yield Send(i, msg.bits, t - 1)))
                q_local = np.stack([_decode(codec, node_cfg, qi, p) for qi, p in zip(q_local, replies)])
                msg = codec.encode(coord_cfg, q_local.sum(axis=0))
                q = codec.decode(coord_cfg, q, msg)
                if observer:
                    observer(RoundState(t, x.copy(), q.copy(), q_local.copy(), params.radius(t)))
            for i in range(1, N + 1):
                ack = yield Send(i, msg.bits, T)
                if len(ack) != ACK_BITS:
                    raise ScheduleViolationError(f"node {i} sent a malformed acknowledgement")
            return x

        return GeneratorEndpoint(run(), "coordinator")

    def node(i, f, r):
        state = {"x": x_init.copy(), "q": None}

        def run():
            yield  # wait for the poll
            x = x_init.copy()
            incoming = yield Send(COORDINATOR, codec.encode(boot_node, f.grad(x)).bits, 0)
            q = _decode(codec, boot_coord, zero, incoming)
            for t in range(1, T + 1):
                x = x - params.gamma * q
                state["x"] = x
                node_cfg, coord_cfg = round_configs(params, t, N, d, codec)
                incoming = yield Send(COORDINATOR, codec.encode(node_cfg, f.grad(x)).bits, t)
                q = _decode(codec, coord_cfg, q, incoming)
                state["q"] = q
            yield Send(COORDINATOR, "1" * ACK_BITS, T + 1)

        endpoint = GeneratorEndpoint(run(), "node")
        endpoint.state = state
        return endpoint

    return ProtocolSpec(coordinator, node, 0, "qgd")
