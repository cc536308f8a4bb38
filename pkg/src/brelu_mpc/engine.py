"""Party runtime: secure forward pass, in-process and TCP sessions.

Model and input sharing happen before the session starts (the driver hands
each party its own share), so they are not part of the ledger. At desk scale
every party process receives the plaintext files and keeps only the share it
is entitled to; P2 never touches them.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .ledger import CommLedger
from .nn import ModelGraph, PatchPlan, apply_plan
from .protocols import (ProtocolContext, ProtocolError, secure_avgpool, secure_brelu, secure_conv2d,
                        secure_linear, secure_relu)
from .ring import RING64, FixedPointCodec
from .sharing import PartyId, PrfStream, SeedBook, derive_seed, reconstruct
from .transport import (InProcessHub, TcpTransport, Transport, default_addresses, handshake,
                        public_digest)


@dataclass
class SecureParams:
    """Public parameters every party must agree on."""

    frac_bits: int = 16
    ignore_msb: int = 0
    ignore_lsb: int = 0
    prime: int = 67

    def codec(self) -> FixedPointCodec:
        return FixedPointCodec(self.frac_bits)


def _share_split(secret: np.ndarray, master, label: str, party: PartyId) -> np.ndarray:
    """This party's share of ``secret``; P0's share is PRF output."""
    if party == PartyId.P2:
        return np.zeros(secret.shape, dtype=np.uint64)
    s0 = PrfStream(derive_seed(master, "driver"), label).words(secret.shape)
    return s0 if party == PartyId.P0 else RING64.sub(secret, s0)


def share_model(model: ModelGraph, master, party, codec: FixedPointCodec) -> list[dict]:
    party = PartyId(party)
    out = []
    for i, layer in enumerate(model.layers):
        out.append({name: _share_split(codec.encode(w), master, f"model/{i}/{name}", party)
                    for name, w in sorted(layer.weights.items())})
    return out


def share_input(x, master, party, codec: FixedPointCodec) -> np.ndarray:
    return _share_split(codec.encode(np.asarray(x, dtype=np.float64)), master, "input", PartyId(party))


def session_digest(model: ModelGraph, params: SecureParams, batch_shape) -> bytes:
    return public_digest({
        "model": model.digest(),
        "params": [params.frac_bits, params.ignore_msb, params.ignore_lsb, params.prime],
        "input": list(batch_shape),
    })


def secure_forward(ctx: ProtocolContext, model: ModelGraph, x, weights: list[dict]) -> np.ndarray:
    """Run ``model`` on shares; ``model`` must already carry its bReLU layers."""
    hist = []
    x_in = x
    for i, layer in enumerate(model.layers):
        p, k, w = layer.params, layer.kind, weights[i]
        if k == "conv2d":
            x = secure_conv2d(ctx, x, w["w"], w.get("b"), p.get("stride", 1), p.get("padding", 0), layer=i)
        elif k == "linear":
            x = secure_linear(ctx, x, w["w"], w.get("b"), layer=i)
        elif k == "avgpool":
            with ctx.scope(None, i):
                x = secure_avgpool(ctx, x, p["kernel"], p.get("stride", p["kernel"]))
        elif k == "relu":
            x = secure_relu(ctx, x, layer=i)
        elif k == "brelu":
            x = secure_brelu(ctx, x, p["patches"], layer=i)
        elif k == "flatten":
            x = x.reshape(x.shape[0], -1)
        elif k == "add":
            x = RING64.add(x, x_in if p["source"] == -1 else hist[p["source"]])
        else:
            raise ProtocolError(f"layer {i} ({k}) has no secure protocol; run transform_model first")
        hist.append(x)
    return x


@dataclass
class PartyResult:
    party: PartyId
    output_share: np.ndarray
    ledger: CommLedger
    drelu_counts: dict
    transcript: list | None = None


def run_party(party, transport: Transport, model: ModelGraph, x, master_seed, params: SecureParams,
              plan: PatchPlan | None = None, batch_shape=None, record_transcript: bool = False) -> PartyResult:
    """One party's side of a secure inference session.

    ``x`` is the plaintext batch (ignored on P2, which passes ``batch_shape``).
    The handshake aborts the session if the parties disagree on the model,
    plan or parameters.
    """
    party = PartyId(party)
    codec = params.codec()
    secured = apply_plan(model, plan) if plan is not None else model
    if party == PartyId.P2:
        shape = tuple(batch_shape if batch_shape is not None else np.shape(x))
        x_sh = np.zeros(shape, dtype=np.uint64)
    else:
        shape = np.shape(x)
        x_sh = share_input(x, master_seed, party, codec)
    if record_transcript:
        transport.transcript = []
    handshake(transport, session_digest(secured, params, shape))
    ctx = ProtocolContext(party, transport, SeedBook.from_master(master_seed, party), codec,
                          params.ignore_msb, params.ignore_lsb, params.prime)
    weights = share_model(secured, master_seed, party, codec)
    out = secure_forward(ctx, secured, x_sh, weights)
    return PartyResult(party, out, transport.ledger, dict(ctx.drelu_counts), transport.transcript)


@dataclass
class SecureResult:
    output: np.ndarray
    ledger: CommLedger
    party_ledgers: list
    drelu_counts: dict
    transcripts: list = field(default_factory=list)

    @property
    def drelu_total(self) -> int:
        return sum(self.drelu_counts.values())


def run_threads(targets) -> list:
    """Run one callable per party concurrently; re-raise the first failure."""
    results, errors = [None] * len(targets), [None] * len(targets)

    def wrap(i, fn):
        try:
            results[i] = fn()
        except BaseException as exc:  # noqa: BLE001 - re-raised below
            errors[i] = exc

    threads = [threading.Thread(target=wrap, args=(i, fn), daemon=True) for i, fn in enumerate(targets)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    # a party that failed first causes timeouts elsewhere; report the root cause
    for exc in errors:
        if exc is not None and not _is_timeout(exc):
            raise exc
    for exc in errors:
        if exc is not None:
            raise exc
    return results


def _is_timeout(exc) -> bool:
    from .transport import TransportError

    return isinstance(exc, TransportError)


def _collect(results: list[PartyResult], codec: FixedPointCodec) -> SecureResult:
    out = codec.decode(reconstruct(results[0].output_share, results[1].output_share))
    ledgers = [r.ledger for r in results]
    return SecureResult(out, CommLedger.merge(ledgers), ledgers, results[0].drelu_counts,
                        [r.transcript for r in results])


def secure_infer(model: ModelGraph, x, plan: PatchPlan | None = None, master_seed="00" * 32,
                 params: SecureParams | None = None, transport: str = "inprocess", base_port: int = 47100,
                 timeout: float = 60.0, record_transcript: bool = False, plans=None) -> SecureResult:
    """Three parties in this process (threads); ``transport`` selects queues or local TCP.

    ``plans`` optionally gives each party its own plan (used to test the
    handshake abort); otherwise all parties use ``plan``.
    """
    params = params or SecureParams(frac_bits=model.frac_bits)
    x = np.asarray(x, dtype=np.float64)
    plans = plans or [plan] * 3
    if transport == "inprocess":
        hub = InProcessHub(timeout)
        ends = [hub.endpoint(p) for p in PartyId]
    elif transport == "tcp":
        addrs = default_addresses(base_port)
        ends = [TcpTransport(p, addrs, timeout) for p in PartyId]
    else:
        raise ValueError(f"unknown transport {transport!r}")

    def job(p):
        def fn():
            t = ends[p]
            if isinstance(t, TcpTransport):
                t.connect()
            try:
                return run_party(p, t, model, None if p == PartyId.P2 else x, master_seed, params,
                                 plans[p], x.shape, record_transcript)
            finally:
                t.close()
        return fn

    results = run_threads([job(p) for p in PartyId])
    return _collect(results, params.codec())
