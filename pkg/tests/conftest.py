import numpy as np
import pytest

from brelu_mpc.engine import run_threads
from brelu_mpc.ledger import CommLedger
from brelu_mpc.protocols import ProtocolContext
from brelu_mpc.ring import RING64
from brelu_mpc.sharing import PartyId, PrfStream, SeedBook
from brelu_mpc.transport import InProcessHub


class ThreeParty:
    """Three in-process parties that run the same protocol function."""

    def __init__(self, seed="5eed", timeout=30.0, **ctx_kw):
        self.hub = InProcessHub(timeout)
        self.ctxs = [ProtocolContext(p, self.hub.endpoint(p), SeedBook.from_master(seed, p), **ctx_kw)
                     for p in PartyId]

    def run(self, fn, *secrets):
        """Share each uint64 secret between P0 and P1, call ``fn(ctx, *shares)`` everywhere.

        Returns the per-party results (P2's entry included).
        """
        split = []
        for i, s in enumerate(secrets):
            s = np.asarray(s, dtype=np.uint64)
            s0 = PrfStream(b"test", f"split/{i}").words(s.shape)
            split.append((s0, RING64.sub(s, s0), np.zeros_like(s)))

        def job(ctx):
            return lambda: fn(ctx, *[sh[ctx.party] for sh in split])

        return run_threads([job(c) for c in self.ctxs])

    def open(self, fn, *secrets):
        r = self.run(fn, *secrets)
        return RING64.add(r[0], r[1])

    def ledger(self) -> CommLedger:
        return CommLedger.merge([c.ledger for c in self.ctxs])


@pytest.fixture
def three():
    return ThreeParty
