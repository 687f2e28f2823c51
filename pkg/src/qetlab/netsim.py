"""Authenticated classical messaging around the measurement-feedback run.

Deterministic event loop for one distribution session: the supplier measures,
authenticates each consumer over a challenge-response exchange, shares
keystreams, broadcasts the outcome bit one-time-pad encrypted per consumer,
and the consumers apply their feedback.  Ledgers carry the branch-averaged
energies from the protocol engine, while the transcript fixes one concrete
sampled outcome so every classical message has definite bytes.

The crypto pieces (keyed PRF tags, nonces, pad bits) are simulation
stand-ins that preserve who-knows-what, not hardened primitives, and a
session transcript stores the seeds it used so it can be replayed.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import random
from dataclasses import dataclass, replace

from ._version import __version__
from .chain import ChainModel, build_hamiltonian, build_model, ground_state
from .errors import ConfigError
from .protocol import (
    PartyConfig,
    adversary_energy,
    measure_supplier,
    party_operator,
    run_qed,
    validate_placement,
)
from .serialize import canonical_json

TAG_BYTES = 8
NONCE_BYTES = 16
KEY_BYTES = 16
MESSAGE_TYPES = ("AUTH_REQ", "AUTH_OK", "AUTH_FAIL", "KEY_EXPAND", "OUTCOME", "ACK")
SCENARIOS = ("honest", "eavesdrop", "impersonate")

_ROLE_AXES = {
    "supplier": (0.0, 1.0, 0.0),
    "consumer": (1.0, 0.0, 0.0),
    "adversary": (1.0, 0.0, 0.0),
}

# default registry for ad-hoc expand_keys calls; sessions use their own
_ISSUED_STREAMS: set = set()


def reset_keystream_registry() -> None:
    _ISSUED_STREAMS.clear()


def prf_tag(seed: bytes, data: bytes) -> bytes:
    return hmac_mod.new(seed, data, hashlib.sha256).digest()[:TAG_BYTES]


def expand_keys(
    shared_seed: bytes | None,
    length: int,
    context: str = "session",
    registry: set | None = None,
) -> list[int]:
    """Derive `length` pad bits from a shared seed, once per (seed, context)."""
    if not shared_seed:
        raise ConfigError("key expansion refused: no shared seed (unauthenticated pair)")
    if length < 1:
        raise ConfigError("keystream length must be at least 1 bit")
    registry = _ISSUED_STREAMS if registry is None else registry
    handle = (hashlib.sha256(shared_seed).hexdigest(), context)
    if handle in registry:
        raise ConfigError(f"keystream for this seed and context {context!r} was already issued")
    registry.add(handle)
    bits: list[int] = []
    counter = 0
    while len(bits) < length:
        block = hmac_mod.new(
            shared_seed,
            context.encode() + counter.to_bytes(8, "little"),
            hashlib.sha256,
        ).digest()
        for byte in block:
            for k in range(8):
                bits.append((byte >> (7 - k)) & 1)
        counter += 1
    return bits[:length]


@dataclass
class Node:
    """One protocol party; the ledger moves only through recorded events."""

    id: str
    role: str
    site: int
    shared_key: bytes | None = None
    ledger: float = 0.0
    axis: tuple | None = None

    def __post_init__(self) -> None:
        if not self.id or not isinstance(self.id, str):
            raise ConfigError("node id must be a nonempty string")
        if self.role not in ("supplier", "consumer", "adversary"):
            raise ConfigError(f"unknown node role {self.role!r}")
        if self.role == "adversary" and self.shared_key is not None:
            raise ConfigError("an adversary node cannot hold a shared key")
        if self.axis is not None:
            self.axis = tuple(float(a) for a in self.axis)

    def party_config(self) -> PartyConfig:
        axis = self.axis if self.axis is not None else _ROLE_AXES[self.role]
        return PartyConfig(site=self.site, axis=axis, role=self.role)


@dataclass
class Message:
    type: str
    sender: str
    receiver: str
    payload: dict
    nonce: bytes
    tag: bytes

    def __post_init__(self) -> None:
        if self.type not in MESSAGE_TYPES:
            raise ConfigError(f"unknown message type {self.type!r}")

    def to_doc(self) -> dict:
        return {
            "event": "message",
            "type": self.type,
            "sender": self.sender,
            "receiver": self.receiver,
            "payload": dict(self.payload),
            "nonce": self.nonce.hex(),
            "tag": self.tag.hex(),
        }


def _message_tag(seed: bytes | None, mtype: str, sender: str, receiver: str,
                 payload: dict, nonce: bytes) -> bytes:
    body = canonical_json({"type": mtype, "sender": sender, "receiver": receiver,
                           "payload": payload}).encode()
    return prf_tag(seed or b"", body + nonce)


def make_message(seed: bytes | None, mtype: str, sender: str, receiver: str,
                 payload: dict, nonce: bytes) -> Message:
    tag = _message_tag(seed, mtype, sender, receiver, payload, nonce)
    return Message(mtype, sender, receiver, payload, nonce, tag)


def verify_message(msg: Message, seed: bytes | None) -> bool:
    expect = _message_tag(seed, msg.type, msg.sender, msg.receiver, msg.payload, msg.nonce)
    return hmac_mod.compare_digest(expect, msg.tag)


def auth_response_tag(shared_key: bytes | None, nonce: bytes, node_id: str) -> bytes:
    return prf_tag(shared_key or b"", nonce + node_id.encode())


def verify_auth(keyring: dict, node_id: str, nonce: bytes, tag: bytes,
                nonce_cache: set) -> bool:
    """Supplier-side check: fresh nonce and a tag keyed by this node's seed."""
    if nonce in nonce_cache:
        return False
    nonce_cache.add(nonce)
    seed = keyring.get(node_id)
    if seed is None:
        return False
    expect = auth_response_tag(seed, nonce, node_id)
    return hmac_mod.compare_digest(expect, tag)


def authenticate(
    node: Node,
    supplier: Node,
    keyring: dict,
    rng: random.Random,
    nonce_cache: set,
) -> tuple[str, list[Message]]:
    """Challenge-response exchange; returns the verdict and its messages."""
    challenge_nonce = rng.getrandbits(8 * NONCE_BYTES).to_bytes(NONCE_BYTES, "big")
    seed = keyring.get(node.id)
    challenge = make_message(seed, "AUTH_REQ", supplier.id, node.id,
                             {"challenge_for": node.id}, challenge_nonce)
    # the response tag answers the challenge nonce; the message itself still
    # travels under a fresh nonce of its own
    response_tag = auth_response_tag(node.shared_key, challenge_nonce, node.id)
    response_nonce = rng.getrandbits(8 * NONCE_BYTES).to_bytes(NONCE_BYTES, "big")
    response = Message(
        "ACK",
        node.id,
        supplier.id,
        {"phase": "auth", "challenge": challenge_nonce.hex()},
        response_nonce,
        response_tag,
    )
    ok = verify_auth(keyring, node.id, challenge_nonce, response_tag, nonce_cache)
    verdict = "AUTH_OK" if ok else "AUTH_FAIL"
    verdict_nonce = rng.getrandbits(8 * NONCE_BYTES).to_bytes(NONCE_BYTES, "big")
    verdict_msg = make_message(seed, verdict, supplier.id, node.id,
                               {"subject": node.id}, verdict_nonce)
    return verdict, [challenge, response, verdict_msg]


def encrypt_bit(bit: int, pad_bit: int) -> int:
    if bit not in (0, 1) or pad_bit not in (0, 1):
        raise ConfigError("pad encryption works on single bits")
    return bit ^ pad_bit


decrypt_bit = encrypt_bit


@dataclass
class SessionLog:
    """Replayable transcript: config echo, ordered events, final accounting."""

    config: dict
    events: list
    final_ledgers: dict
    report: dict
    deposit: float | None = None

    def to_json_lines(self) -> str:
        lines = [canonical_json({"event": "session_start", "config": self.config})]
        lines.extend(canonical_json(e) for e in self.events)
        lines.append(
            canonical_json(
                {
                    "event": "session_end",
                    "ledgers": self.final_ledgers,
                    "report": self.report,
                    "deposit": self.deposit,
                }
            )
        )
        return "\n".join(lines) + "\n"


def _derived_key(seed: int, node_id: str) -> bytes:
    return hashlib.sha256(f"netsim:{seed}:{node_id}".encode()).digest()[:KEY_BYTES]


def _split_roles(nodes: list) -> tuple[Node, list, Node | None]:
    suppliers = [n for n in nodes if n.role == "supplier"]
    consumers = [n for n in nodes if n.role == "consumer"]
    adversaries = [n for n in nodes if n.role == "adversary"]
    if len(suppliers) != 1:
        raise ConfigError(f"a session needs exactly one supplier, got {len(suppliers)}")
    if not consumers:
        raise ConfigError("a session needs at least one consumer")
    if len(adversaries) > 1:
        raise ConfigError("at most one adversary per session")
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ConfigError("node ids must be unique")
    return suppliers[0], consumers, adversaries[0] if adversaries else None


def run_session(
    model: ChainModel,
    nodes: list,
    scenario: str = "honest",
    seed: int = 0,
    forced_guess: int | None = None,
) -> SessionLog:
    """Execute the six-step flow once and account every energy movement.

    `forced_guess` pins the adversary's outcome guess for exhaustive sweeps;
    left unset it is sampled from the session PRNG.
    """
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; use one of {SCENARIOS}")
    if forced_guess not in (None, 0, 1):
        raise ConfigError("forced_guess must be 0, 1, or None")
    if forced_guess is not None and scenario == "honest":
        raise ConfigError("forced_guess only applies to adversary scenarios")
    supplier, consumers, adversary = _split_roles(nodes)
    if scenario in ("eavesdrop", "impersonate") and adversary is None:
        raise ConfigError(f"scenario {scenario!r} needs an adversary node")

    # copy and key the nodes; the caller's objects stay untouched
    supplier = replace(supplier)
    consumers = [
        replace(c, shared_key=c.shared_key or _derived_key(seed, c.id)) for c in consumers
    ]
    adversary = replace(adversary) if adversary is not None else None

    supplier_cfg = supplier.party_config()
    consumer_cfgs = [c.party_config() for c in consumers]
    adversary_cfg = adversary.party_config() if adversary is not None else None
    validate_placement(model, supplier_cfg, consumer_cfgs, adversary_cfg)

    rng = random.Random(seed)
    events: list = []
    clock = 0

    def emit(doc: dict) -> None:
        nonlocal clock
        doc = dict(doc)
        doc["t"] = clock
        events.append(doc)
        clock += 1

    def emit_ledger(node: Node, delta: float, reason: str) -> None:
        node.ledger += delta
        emit(
            {
                "event": "ledger",
                "node": node.id,
                "delta": delta,
                "balance": node.ledger,
                "reason": reason,
            }
        )

    report = run_qed(model, supplier_cfg, consumer_cfgs)

    # step 1: supplier measurement; one branch is sampled for the transcript
    g = ground_state(model)
    ensemble, e_s = measure_supplier(
        g, party_operator(model.n_sites, supplier_cfg), build_hamiltonian(model)
    )
    probs = {mu: prob for mu, prob, _ in ensemble.branches}
    mu = 0 if rng.random() < probs.get(0, 0.0) else 1
    emit({"event": "op", "op": "measure", "node": supplier.id, "mu": mu, "e_s": e_s})
    emit_ledger(supplier, -e_s, "measurement_cost")

    # step 2: authentication
    keyring = {c.id: c.shared_key for c in consumers}
    nonce_cache: set = set()
    authenticated = []
    for consumer in consumers:
        verdict, msgs = authenticate(consumer, supplier, keyring, rng, nonce_cache)
        for msg in msgs:
            emit(msg.to_doc())
        if verdict == "AUTH_OK":
            authenticated.append(consumer)
    if scenario == "impersonate":
        verdict, msgs = authenticate(adversary, supplier, keyring, rng, nonce_cache)
        for msg in msgs:
            emit(msg.to_doc())
        if verdict != "AUTH_FAIL":
            raise ConfigError("keyless node passed authentication")

    # step 3: keystream expansion per authenticated consumer
    registry: set = set()
    streams = {}
    for consumer in authenticated:
        context = f"session-{seed}:{consumer.id}"
        nonce = rng.getrandbits(8 * NONCE_BYTES).to_bytes(NONCE_BYTES, "big")
        emit(
            make_message(
                consumer.shared_key,
                "KEY_EXPAND",
                supplier.id,
                consumer.id,
                {"context": context, "length": 1},
                nonce,
            ).to_doc()
        )
        streams[consumer.id] = expand_keys(consumer.shared_key, 1, context, registry)

    # steps 4-5: encrypted broadcast and decryption
    ciphertexts = {}
    for consumer in authenticated:
        cipher = encrypt_bit(mu, streams[consumer.id][0])
        ciphertexts[consumer.id] = cipher
        nonce = rng.getrandbits(8 * NONCE_BYTES).to_bytes(NONCE_BYTES, "big")
        emit(
            make_message(
                consumer.shared_key,
                "OUTCOME",
                supplier.id,
                consumer.id,
                {"bit": cipher},
                nonce,
            ).to_doc()
        )
        decoded = decrypt_bit(cipher, streams[consumer.id][0])
        emit({"event": "op", "op": "decrypt", "node": consumer.id, "mu": decoded})
        nonce = rng.getrandbits(8 * NONCE_BYTES).to_bytes(NONCE_BYTES, "big")
        emit(
            make_message(
                consumer.shared_key,
                "ACK",
                consumer.id,
                supplier.id,
                {"phase": "receipt"},
                nonce,
            ).to_doc()
        )

    # step 6: feedback and credits; report entries keep the caller's order
    for node, entry in zip(consumers, report.consumers):
        emit(
            {
                "event": "op",
                "op": "feedback",
                "node": node.id,
                "site": entry.site,
                "theta": entry.theta,
                "e_m": entry.e_m_meas,
            }
        )
        emit_ledger(node, entry.e_m_meas, "feedback_credit")

    deposit = None
    if scenario in ("eavesdrop", "impersonate") and adversary is not None:
        guess = forced_guess if forced_guess is not None else rng.getrandbits(1)
        if scenario == "eavesdrop":
            emit(
                {
                    "event": "op",
                    "op": "eavesdrop",
                    "node": adversary.id,
                    "seen": dict(sorted(ciphertexts.items())),
                }
            )
        deposit = adversary_energy(
            model, supplier_cfg, consumer_cfgs, adversary_cfg, mu_prime=guess
        )
        emit(
            {
                "event": "op",
                "op": "blind_feedback",
                "node": adversary.id,
                "site": adversary.site,
                "guess": guess,
            }
        )
        emit_ledger(adversary, -deposit, "forced_deposit")

    all_nodes = [supplier, *consumers] + ([adversary] if adversary is not None else [])
    final_ledgers = {n.id: n.ledger for n in all_nodes}
    config = {
        "version": __version__,
        "model": {
            "n_sites": model.n_sites,
            "h": model.h,
            "j": model.j,
            "boundary": model.boundary,
        },
        "nodes": [
            {
                "id": n.id,
                "role": n.role,
                "site": n.site,
                "key": n.shared_key.hex() if n.shared_key else None,
                "axis": list(n.axis) if n.axis is not None else None,
            }
            for n in all_nodes
        ],
        "scenario": scenario,
        "seed": seed,
        "forced_guess": forced_guess,
    }
    return SessionLog(
        config=config,
        events=events,
        final_ledgers=final_ledgers,
        report=report.to_doc(),
        deposit=deposit,
    )


def replay_session(log: SessionLog) -> SessionLog:
    """Re-run a transcript from its embedded config; ledgers must match."""
    cfg = log.config
    model = build_model(
        cfg["model"]["n_sites"],
        cfg["model"]["h"],
        cfg["model"]["j"],
        cfg["model"]["boundary"],
    )
    nodes = [
        Node(
            id=doc["id"],
            role=doc["role"],
            site=doc["site"],
            shared_key=bytes.fromhex(doc["key"]) if doc["key"] else None,
            axis=tuple(doc["axis"]) if doc["axis"] else None,
        )
        for doc in cfg["nodes"]
    ]
    return run_session(model, nodes, cfg["scenario"], cfg["seed"], cfg["forced_guess"])


_SCENARIO_KEYS = {"model", "nodes", "scenario", "seed", "forced_guess", "version"}
_MODEL_KEYS = {"n_sites", "h", "j", "lambda", "boundary"}
_NODE_KEYS = {"id", "role", "site", "key", "axis"}


def parse_scenario(doc) -> dict:
    """Turn a scenario document into run_session keyword arguments.

    The model block takes exactly one of "j" or "lambda" (= J/h); node keys
    are hex strings.  Unknown keys are refused so typos fail loudly.
    """
    if not isinstance(doc, dict):
        raise ConfigError(f"scenario must be a JSON object, got {type(doc).__name__}")
    unknown = sorted(set(doc) - _SCENARIO_KEYS)
    if unknown:
        raise ConfigError(f"unknown scenario keys: {unknown}")
    model_doc = doc.get("model")
    if not isinstance(model_doc, dict):
        raise ConfigError("scenario needs a 'model' object")
    unknown = sorted(set(model_doc) - _MODEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown model keys: {unknown}")
    if "n_sites" not in model_doc:
        raise ConfigError("model needs 'n_sites'")
    h = model_doc.get("h", 1.0)
    if "j" in model_doc and "lambda" in model_doc:
        raise ConfigError("model takes 'j' or 'lambda', not both")
    if "j" in model_doc:
        j = model_doc["j"]
    elif "lambda" in model_doc:
        j = float(model_doc["lambda"]) * float(h)
    else:
        raise ConfigError("model needs 'j' or 'lambda'")
    model = build_model(model_doc["n_sites"], h, j, model_doc.get("boundary", "periodic"))

    node_docs = doc.get("nodes")
    if not isinstance(node_docs, list) or not node_docs:
        raise ConfigError("scenario needs a non-empty 'nodes' list")
    nodes = []
    for node_doc in node_docs:
        if not isinstance(node_doc, dict):
            raise ConfigError(f"each node must be an object, got {type(node_doc).__name__}")
        unknown = sorted(set(node_doc) - _NODE_KEYS)
        if unknown:
            raise ConfigError(f"unknown node keys: {unknown}")
        for key in ("id", "role", "site"):
            if key not in node_doc:
                raise ConfigError(f"node needs '{key}'")
        key_hex = node_doc.get("key")
        if key_hex is not None:
            try:
                shared_key = bytes.fromhex(key_hex)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"node key must be a hex string, got {key_hex!r}") from exc
        else:
            shared_key = None
        axis = node_doc.get("axis")
        nodes.append(
            Node(
                id=node_doc["id"],
                role=node_doc["role"],
                site=node_doc["site"],
                shared_key=shared_key,
                axis=tuple(axis) if axis is not None else None,
            )
        )

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return {
        "model": model,
        "nodes": nodes,
        "scenario": doc.get("scenario", "honest"),
        "seed": seed,
        "forced_guess": doc.get("forced_guess"),
    }
