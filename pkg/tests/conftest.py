from __future__ import annotations

import hashlib

import pytest

from dhin import contracts, insurance
from dhin.identity import ClaimKind, IssuerRegistry, Resolver, generate_identity, issue_credential
from dhin.ledger import Chain
from dhin.phr import Clock, PhrStore


def seed(label: str) -> bytes:
    return hashlib.sha256(b"test/" + label.encode()).digest()


class Net:
    """A throwaway identity space, trust registry and clock for one test."""

    def __init__(self):
        self.resolver = Resolver()
        self.clock = Clock(0)
        self.registry = IssuerRegistry()
        self.keys = {}
        self.documents = []
        self.authority = self.key("authority")
        for claim in ClaimKind:
            self.registry.trust(claim, self.authority.did)

    def key(self, name: str):
        if name not in self.keys:
            _, key, doc = generate_identity(seed(name), resolver=self.resolver)
            self.keys[name] = key
            self.documents.append(doc)
        return self.keys[name]

    def license(self, name: str, claim: ClaimKind, issued_at: int = 0, expires_at: int = 10**6, publish=True):
        key = self.key(name)
        cred = issue_credential(self.authority, key.did, claim, issued_at, expires_at)
        if publish:
            self.resolver.publish(cred)
        return key, cred

    def store(self, name: str) -> PhrStore:
        return PhrStore(self.key(name).did, clock=self.clock, resolver=self.resolver)

    def chain(self, allocations: dict[str, int], *, tax_bps=100, epoch_length=1, insurance_epoch=1) -> Chain:
        specs = [
            ("anchors", "anchors", {}),
            (contracts.EVALUATORS, "evaluators", {"tax_rate_bps": tax_bps, "epoch_length": epoch_length}),
            (contracts.STUDIES, "studies", {}),
            (insurance.INSURANCE, "insurance", {"epoch_length": insurance_epoch, "registry": self.registry.canonical()}),
        ]
        alloc = {self.key(n).did: v for n, v in allocations.items()}
        return Chain.genesis(alloc, contracts=specs, resolver=self.resolver, documents=self.documents)


@pytest.fixture
def net() -> Net:
    return Net()


@pytest.fixture(scope="session")
def reference_run():
    import time

    from dhin import sim

    start = time.perf_counter()
    result = sim.run(sim.reference_scenario())
    result.elapsed = time.perf_counter() - start
    return result


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
