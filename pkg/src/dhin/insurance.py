"""Decentralized insurance pool funded by premiums, paying verified claims.

Claims carry their own evidence: the referenced health records and the
authors' credentials, as bytes. Verification is deterministic contract code
over that evidence, the DID documents known to the ledger, and the issuer
registry snapshot fixed at deployment, so replaying the chain reproduces
every verdict.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from dhin.identity import ClaimKind, Credential, CredentialError, Did, IssuerRegistry, KeyPair, verify_credential
from dhin.ledger import Context, Contract, ContractError, call, register_contract
from dhin.phr import HealthRecord, RecordKind

INSURANCE = "insurance"

CLAIMABLE_KINDS = frozenset({RecordKind.InsuranceClaimNote, RecordKind.Prescription, RecordKind.Dispense})
AUTHOR_CLAIMS = {
    RecordKind.InsuranceClaimNote: (ClaimKind.PhysicianLicense,),
    RecordKind.Prescription: (ClaimKind.PhysicianLicense,),
    RecordKind.Dispense: (ClaimKind.PharmacyLicense,),
}


class ClaimStatus(enum.Enum):
    Submitted = "Submitted"
    Verified = "Verified"
    Paid = "Paid"
    Rejected = "Rejected"


@dataclass
class Policy:
    holder: Did
    premium_per_epoch: int
    coverage_cap: int
    active_from: int
    paid_through: int
    claimed: int = 0
    premiums_paid: int = 0

    def active_at(self, t: int) -> bool:
        return self.active_from <= t <= self.paid_through

    def cap_remaining(self) -> int:
        return max(0, self.coverage_cap - self.claimed)

    def canonical(self):
        return [
            self.holder,
            self.premium_per_epoch,
            self.coverage_cap,
            self.active_from,
            self.paid_through,
            self.claimed,
            self.premiums_paid,
        ]


@dataclass
class Claim:
    claim_id: int
    holder: Did
    record_refs: list[tuple[Did, int]]
    amount: int
    evidence: list[list]  # [record bytes, [credential bytes, ...]] per ref
    submitted_at: int
    status: ClaimStatus = ClaimStatus.Submitted
    reason: str | None = None
    paid: int | None = None
    haircut: bool = False

    def canonical(self):
        return [
            self.claim_id,
            self.holder,
            [list(r) for r in self.record_refs],
            self.amount,
            self.evidence,
            self.submitted_at,
            self.status.name,
            self.reason,
            self.paid,
            self.haircut,
        ]

    def to_json(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "holder": str(self.holder),
            "record_refs": [[str(s), r] for s, r in self.record_refs],
            "amount": self.amount,
            "status": self.status.name,
            "reason": self.reason,
            "paid": self.paid,
            "haircut": self.haircut,
        }


def check_evidence(
    holder: Did,
    record_refs: list[tuple[Did, int]],
    evidence: list,
    registry: IssuerRegistry,
    resolver,
    used: set[tuple[Did, int]] = frozenset(),
) -> str | None:
    """Rejection reason for a claim's evidence, or None when every reference checks out."""
    if not record_refs or len(evidence) != len(record_refs):
        return "MissingEvidence"
    seen = set()
    for (store_id, record_id), item in zip(record_refs, evidence):
        if store_id != holder:
            return "NotHolderRecord"
        try:
            record_bytes, cred_blobs = item
            record = HealthRecord.from_bytes(record_bytes)
            creds = [Credential.from_bytes(c) for c in cred_blobs]
        except (ValueError, TypeError, KeyError):
            return "MalformedEvidence"
        if record.record_id != record_id:
            return "MissingEvidence"
        if record.subject != holder:
            return "NotHolderRecord"
        if record.kind not in CLAIMABLE_KINDS:
            return "WrongKind"
        if not record.verify_signature(resolver):
            return "BadSignature"
        if not _licensed(record, creds, registry, resolver):
            return "UntrustedAuthor"
        key = (store_id, record_id)
        if key in used or key in seen:
            return "DuplicateEvidence"
        seen.add(key)
    return None


def _licensed(record: HealthRecord, creds: list[Credential], registry: IssuerRegistry, resolver) -> bool:
    wanted = AUTHOR_CLAIMS[record.kind]
    for cred in creds:
        if cred.subject != record.author or cred.claim not in wanted:
            continue
        try:
            verify_credential(cred, registry, record.created_at, resolver)
        except CredentialError:
            continue
        return True
    return False


@register_contract
class InsurancePool(Contract):
    kind = "insurance"

    def __init__(self, init_args: dict):
        super().__init__(init_args)
        self.epoch_length: int = init_args.get("epoch_length", 1)
        self.registry = IssuerRegistry.from_canonical(init_args.get("registry", {}))
        self.reserves = 0
        self.premiums_collected = 0
        self.payouts_total = 0
        self.policies: dict[Did, Policy] = {}
        self.claims: list[Claim] = []
        self.used_evidence: set[tuple[Did, int]] = set()

    def held(self) -> int:
        return self.reserves

    def canonical(self):
        return [
            self.epoch_length,
            self.registry.canonical(),
            self.reserves,
            self.premiums_collected,
            self.payouts_total,
            {d: p.canonical() for d, p in self.policies.items()},
            [c.canonical() for c in self.claims],
            sorted(list(k) for k in self.used_evidence),
        ]

    def policy_active(self, holder: Did, t: int) -> bool:
        p = self.policies.get(holder)
        return p is not None and p.active_at(t)

    def claim(self, claim_id: int) -> Claim:
        if type(claim_id) is not int or not 0 <= claim_id < len(self.claims):
            raise ContractError(f"UnknownClaim({claim_id})")
        return self.claims[claim_id]

    def call_buy_policy(self, ctx: Context, premium_per_epoch: int, coverage_cap: int, epochs: int) -> None:
        if not all(type(v) is int for v in (premium_per_epoch, coverage_cap, epochs)):
            raise ContractError("BadArgs(policy terms)")
        if epochs < 1 or premium_per_epoch < 0 or coverage_cap < 0:
            raise ContractError("BadArgs(policy terms)")
        cost = premium_per_epoch * epochs
        if ctx.payment != cost:
            raise ContractError(f"InsufficientFunds(payment {ctx.payment} != {cost})")
        span = epochs * self.epoch_length
        now = ctx.height
        current = self.policies.get(ctx.sender)
        if current is not None and current.paid_through >= now:
            # renewal: extends the running term, never overlaps it
            current.paid_through += span
            current.premiums_paid += cost
            current.premium_per_epoch = premium_per_epoch
            current.coverage_cap = coverage_cap
        else:
            current = Policy(ctx.sender, premium_per_epoch, coverage_cap, now, now + span - 1, 0, cost)
            self.policies[ctx.sender] = current
        self.reserves += cost
        self.premiums_collected += cost
        ctx.emit(
            "PolicyBought",
            {"holder": ctx.sender, "premium": cost, "paid_through": current.paid_through},
        )

    def call_submit_claim(self, ctx: Context, record_refs: list, amount: int, evidence: list) -> None:
        ctx.require_no_payment()
        if not self.policy_active(ctx.sender, ctx.height):
            raise ContractError("NoActivePolicy")
        if type(amount) is not int or amount < 0:
            raise ContractError("BadArgs(amount)")
        try:
            refs = [(d, r) for d, r in record_refs]
        except (TypeError, ValueError):
            raise ContractError("BadArgs(record_refs)") from None
        if not all(isinstance(d, Did) and type(r) is int for d, r in refs) or not isinstance(evidence, list):
            raise ContractError("BadArgs(record_refs)")
        claim = Claim(len(self.claims), ctx.sender, refs, amount, evidence, ctx.height)
        self.claims.append(claim)
        ctx.emit("ClaimSubmitted", {"claim_id": claim.claim_id, "holder": ctx.sender, "amount": amount})

    def call_verify_claim(self, ctx: Context, claim_id: int) -> None:
        ctx.require_no_payment()
        claim = self.claim(claim_id)
        if claim.status is not ClaimStatus.Submitted:
            raise ContractError("WrongStatus")
        reason = check_evidence(
            claim.holder, claim.record_refs, claim.evidence, self.registry, ctx.resolver, self.used_evidence
        )
        if reason is None:
            claim.status = ClaimStatus.Verified
            self.used_evidence.update(claim.record_refs)
        else:
            claim.status = ClaimStatus.Rejected
            claim.reason = reason
        ctx.emit("ClaimVerified", {"claim_id": claim_id, "status": claim.status.name, "reason": reason})

    def call_settle_claim(self, ctx: Context, claim_id: int) -> None:
        ctx.require_no_payment()
        claim = self.claim(claim_id)
        if claim.status is not ClaimStatus.Verified:
            raise ContractError("WrongStatus")
        policy = self.policies[claim.holder]
        capped = min(claim.amount, policy.cap_remaining())
        paid = min(capped, self.reserves)
        ctx.pay(claim.holder, paid)
        self.reserves -= paid
        self.payouts_total += paid
        policy.claimed += paid
        claim.status = ClaimStatus.Paid
        claim.paid = paid
        claim.haircut = paid < capped
        ctx.emit("ClaimPaid", {"claim_id": claim_id, "holder": claim.holder, "amount": paid, "haircut": claim.haircut})


def claim_evidence(records: list[HealthRecord], credentials: dict[Did, list[Credential]]) -> list:
    """Evidence list for ``records``: each record's bytes plus its author's credentials."""
    return [[r.to_bytes(), [c.to_bytes() for c in credentials.get(r.author, [])]] for r in records]


def buy_policy(net, patient: KeyPair, premium_per_epoch: int, coverage_cap: int, epochs: int) -> bytes:
    return net.submit(
        patient,
        call(
            INSURANCE,
            "buy_policy",
            premium_per_epoch * epochs,
            premium_per_epoch=premium_per_epoch,
            coverage_cap=coverage_cap,
            epochs=epochs,
        ),
    )


def submit_claim(net, patient: KeyPair, records: list[HealthRecord], amount: int, evidence: list) -> bytes:
    refs = [[r.subject, r.record_id] for r in records]
    return net.submit(patient, call(INSURANCE, "submit_claim", record_refs=refs, amount=amount, evidence=evidence))


def verify_claim(net, caller: KeyPair, claim_id: int) -> bytes:
    return net.submit(caller, call(INSURANCE, "verify_claim", claim_id=claim_id))


def settle_claim(net, caller: KeyPair, claim_id: int) -> bytes:
    return net.submit(caller, call(INSURANCE, "settle_claim", claim_id=claim_id))
