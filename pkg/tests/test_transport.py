import socket

import numpy as np
import pytest

from brelu_mpc.engine import run_threads, secure_infer
from brelu_mpc.ledger import CommLedger
from brelu_mpc.nn import PatchPlan, gen_toy_model
from brelu_mpc.protocols import PatchSpec
from brelu_mpc.sharing import PartyId
from brelu_mpc.transport import (HEADER_SIZE, Frame, HandshakeError, InProcessHub, TcpTransport, TransportError,
                                 default_addresses, handshake)


def free_base_port():
    for base in range(47300, 48000, 10):
        ok = True
        for off in range(3):
            with socket.socket() as s:
                try:
                    s.bind(("127.0.0.1", base + off))
                except OSError:
                    ok = False
        if ok:
            return base
    pytest.skip("no free local ports")


def test_frame_roundtrip():
    f = Frame("drelu", 3, b"abc")
    data = f.encode()
    assert len(data) == HEADER_SIZE + 3 == 10
    assert Frame.decode(data) == f


def test_frame_length_mismatch():
    data = Frame("relu", 0, b"abcd").encode()
    with pytest.raises(TransportError):
        Frame.decode(data[:-1])


def test_one_kib_frame_adds_1024_payload():
    hub = InProcessHub(5)
    a, b = hub.endpoint(0), hub.endpoint(1)
    a.send(1, bytes(1024), "echo", 0)
    assert a.ledger.payload() == 1024
    assert a.ledger.framed() == 1024 + HEADER_SIZE
    assert b.recv(0).payload == bytes(1024)


def test_inprocess_timeout():
    hub = InProcessHub(0.05)
    with pytest.raises(TransportError):
        hub.endpoint(0).recv(1)


def test_tcp_echo():
    addrs = default_addresses(free_base_port())
    ends = [TcpTransport(p, addrs, 10) for p in PartyId]

    def job(p):
        def fn():
            t = ends[p].connect()
            try:
                if p == 0:
                    t.send(1, b"ping" * 300, "echo")
                    return t.recv(1).payload
                if p == 1:
                    msg = t.recv(0).payload
                    t.send(0, msg[::-1], "echo")
                return None
            finally:
                t.close()
        return fn

    out = run_threads([job(p) for p in PartyId])
    assert out[0] == (b"ping" * 300)[::-1]
    assert ends[0].ledger.payload(protocol="echo") == 1200


def test_handshake_ok_and_mismatch():
    hub = InProcessHub(5)
    ends = [hub.endpoint(p) for p in PartyId]
    run_threads([lambda t=t: handshake(t, b"same") for t in ends])
    hub = InProcessHub(5)
    ends = [hub.endpoint(p) for p in PartyId]
    digests = [b"x", b"x", b"y"]
    with pytest.raises(HandshakeError):
        run_threads([lambda t=t, d=d: handshake(t, d) for t, d in zip(ends, digests)])


def test_plan_mismatch_aborts_session():
    model = gen_toy_model(0, hw=4, widths=(2, 2), classes=3)
    x = np.random.default_rng(0).normal(size=(1, 3, 4, 4))
    a = PatchPlan.uniform(model)
    b = PatchPlan.uniform(model, PatchSpec(2, 2))
    with pytest.raises(HandshakeError):
        secure_infer(model, x, plans=[a, a, b], timeout=5)


@pytest.fixture(scope="module")
def small_case():
    model = gen_toy_model(1, hw=4, widths=(2, 3), classes=4)
    x = np.random.default_rng(2).normal(size=(2, 3, 4, 4))
    return model, x


def test_tcp_matches_inprocess(small_case):
    model, x = small_case
    a = secure_infer(model, x, master_seed="ab" * 32)
    b = secure_infer(model, x, master_seed="ab" * 32, transport="tcp", base_port=free_base_port())
    assert np.array_equal(a.output, b.output)
    assert a.ledger == b.ledger


def test_transcript_deterministic(small_case):
    model, x = small_case
    a = secure_infer(model, x, master_seed="cd" * 32, record_transcript=True)
    b = secure_infer(model, x, master_seed="cd" * 32, record_transcript=True)
    assert a.transcripts == b.transcripts
    c = secure_infer(model, x, master_seed="ce" * 32, record_transcript=True)
    assert c.transcripts != a.transcripts


def test_ledger_json_roundtrip(small_case):
    model, x = small_case
    led = secure_infer(model, x).ledger
    assert CommLedger.from_json(led.to_json()) == led
    assert led.to_csv().splitlines()[0].startswith("layer,protocol,phase")


def test_ledger_rejects_unknown():
    led = CommLedger()
    with pytest.raises(KeyError):
        led.record(0, "nope", "online", 1, 8)
    with pytest.raises(ValueError):
        led.record(0, "relu", "online", 8, 1)
