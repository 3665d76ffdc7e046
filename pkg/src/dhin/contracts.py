"""Study coordination and evaluator staking contracts, plus the off-chain scoring duty.

``StudyRegistry`` runs each study through Enrolling -> RoundOpen -> Scoring ->
RoundOpen ... -> Finalized and pays rewards straight from the study escrow to
patient wallets. ``EvaluatorRegistry`` holds self-priced evaluator NFTs: the
declared price is the stake, a fixed share of it is taxed into the treasury
every epoch, and anyone may buy the NFT at that price. Evaluator fees come
out of the treasury only.

Scores travel on-chain as non-negative integers in units of 1e-12.
"""

from __future__ import annotations

import copy
import enum
import hashlib
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Protocol

from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from dhin import codec, fl, phr
from dhin.identity import Did, KeyPair, Resolver, key_agreement
from dhin.ledger import Context, Contract, ContractError, TxKind, call, register_contract
from dhin.phr import PhrStore
from dhin.storage import BlobStore, Cid

STUDIES = "studies"
EVALUATORS = "evaluators"

SCORE_SCALE = 10**12
MAD_FLOOR = 10**6  # 1e-6 in score units


class Submitter(Protocol):
    def submit(self, key: KeyPair, kind: TxKind) -> bytes: ...


class Status(enum.Enum):
    Enrolling = "Enrolling"
    RoundOpen = "RoundOpen"
    Scoring = "Scoring"
    Finalized = "Finalized"


class MissingBlob(Exception):
    pass


def _fail(reason: str) -> None:
    raise ContractError(reason)


def median_int(values: list[int]) -> int:
    s = sorted(values)
    n = len(s)
    mid = n // 2
    return s[mid] if n % 2 else (s[mid - 1] + s[mid]) // 2


def to_score_units(score: float) -> int:
    if not math.isfinite(score) or score <= 0:
        return 0
    return min(int(math.floor(score * SCORE_SCALE)), codec.INT_MAX)


def proportional_payouts(consensus: list[int], budget: int) -> list[int]:
    total = sum(consensus)
    if total == 0:
        return [0] * len(consensus)
    return [budget * c // total for c in consensus]


# ---------------------------------------------------------------------------
# Study contract
# ---------------------------------------------------------------------------


@dataclass
class Commitment:
    cid: bytes
    n_samples: int
    evaluator_cids: dict[Did, bytes]

    def canonical(self):
        return [self.cid, self.n_samples, self.evaluator_cids]


@dataclass
class RoundRecord:
    round: int
    roster: tuple[Did, ...]
    budget: int
    commitments: dict[Did, Commitment] = field(default_factory=dict)
    scores: dict[Did, tuple[int, ...]] = field(default_factory=dict)
    consensus: tuple[int, ...] = ()
    payouts: dict[Did, int] = field(default_factory=dict)
    fees: dict[Did, int] = field(default_factory=dict)
    global_cid: bytes | None = None
    outcome: str = "open"  # open | finalized | aborted

    def canonical(self):
        return [
            self.round,
            list(self.roster),
            self.budget,
            {d: c.canonical() for d, c in self.commitments.items()},
            {d: list(s) for d, s in self.scores.items()},
            list(self.consensus),
            self.payouts,
            self.fees,
            self.global_cid,
            self.outcome,
        ]


class _Sealed:
    """A closed RoundRecord: shared between state copies, digest computed once."""

    __slots__ = ("record", "digest")

    def __init__(self, record: RoundRecord):
        self.record = record
        self.digest = codec.digest(codec.encode(record.canonical()))

    def __deepcopy__(self, memo):
        return self


@dataclass
class Study:
    study_id: str
    owner: Did
    config_cid: bytes
    rounds: int
    budget_per_round: int
    fee_per_round: int
    quorum: int
    kappa: float
    deposited: int
    escrow: int
    global_cid: bytes
    status: Status = Status.Enrolling
    participants: set[Did] = field(default_factory=set)
    round: int = 0
    completed: int = 0
    carry: int = 0
    paid_rewards: int = 0
    refunded: int = 0
    current: RoundRecord | None = None
    history: tuple[_Sealed, ...] = ()

    def clone(self) -> Study:
        twin = copy.copy(self)
        twin.participants = set(self.participants)
        twin.current = copy.deepcopy(self.current)
        return twin

    def rounds_closed(self) -> list[RoundRecord]:
        return [s.record for s in self.history]

    def canonical(self):
        return [
            self.study_id,
            self.owner,
            self.config_cid,
            self.rounds,
            self.budget_per_round,
            self.fee_per_round,
            self.quorum,
            float(self.kappa),
            self.deposited,
            self.escrow,
            self.global_cid,
            self.status.name,
            sorted(self.participants),
            self.round,
            self.completed,
            self.carry,
            self.paid_rewards,
            self.refunded,
            None if self.current is None else self.current.canonical(),
            [s.digest for s in self.history],
        ]


@register_contract
class StudyRegistry(Contract):
    kind = "studies"

    def __init__(self, init_args: dict):
        super().__init__(init_args)
        self.studies: dict[str, Study] = {}
        self.evaluators_contract: str = init_args.get("evaluators", EVALUATORS)

    def clone(self) -> StudyRegistry:
        twin = copy.copy(self)
        twin.studies = {k: s.clone() for k, s in self.studies.items()}
        return twin

    def held(self) -> int:
        return sum(s.escrow for s in self.studies.values())

    def canonical(self):
        return {k: s.canonical() for k, s in self.studies.items()}

    def study(self, study_id: str) -> Study:
        try:
            return self.studies[study_id]
        except (KeyError, TypeError):
            raise ContractError(f"UnknownStudy({study_id})") from None

    # -- lifecycle -----------------------------------------------------------

    def call_create_study(self, ctx: Context, config: bytes, global_cid: bytes) -> None:
        try:
            cfg = fl.StudyConfig.from_bytes(config)
        except Exception as exc:  # any decode/validation failure
            raise ContractError(f"BadConfig({type(exc).__name__})") from None
        if cfg.study_id in self.studies:
            _fail("BadConfig(DuplicateStudy)")
        if not isinstance(global_cid, bytes) or len(global_cid) != 32:
            _fail("BadConfig(global_cid)")
        required = cfg.rounds * cfg.reward_budget_per_round
        if ctx.payment < required:
            _fail(f"InsufficientFunds(deposit {ctx.payment} < {required})")
        self.studies[cfg.study_id] = Study(
            study_id=cfg.study_id,
            owner=ctx.sender,
            config_cid=codec.digest(config),
            rounds=cfg.rounds,
            budget_per_round=cfg.reward_budget_per_round,
            fee_per_round=cfg.evaluator_fee_per_round,
            quorum=cfg.quorum,
            kappa=cfg.kappa,
            deposited=ctx.payment,
            escrow=ctx.payment,
            global_cid=global_cid,
        )
        ctx.emit("StudyCreated", {"study_id": cfg.study_id, "owner": ctx.sender, "deposit": ctx.payment})

    def call_opt_in(self, ctx: Context, study_id: str) -> None:
        ctx.require_no_payment()
        s = self.study(study_id)
        if s.status is not Status.Enrolling:
            _fail("WrongPhase")
        if ctx.sender in s.participants:
            _fail("AlreadyOptedIn")
        s.participants.add(ctx.sender)
        ctx.emit("OptIn", {"study_id": study_id, "patient": ctx.sender})

    def call_opt_out(self, ctx: Context, study_id: str) -> None:
        ctx.require_no_payment()
        s = self.study(study_id)
        if s.status not in (Status.Enrolling, Status.RoundOpen):
            _fail("WrongPhase")
        if ctx.sender not in s.participants:
            _fail("NotParticipant")
        s.participants.discard(ctx.sender)
        ctx.emit("OptOut", {"study_id": study_id, "patient": ctx.sender})

    def _open(self, ctx: Context, s: Study) -> None:
        s.round += 1
        s.current = RoundRecord(s.round, tuple(sorted(s.participants)), s.budget_per_round + s.carry)
        s.status = Status.RoundOpen
        ctx.emit(
            "RoundOpened",
            {"study_id": s.study_id, "round": s.round, "roster": list(s.current.roster), "budget": s.current.budget},
        )

    def _advance(self, ctx: Context, s: Study) -> None:
        if s.completed >= s.rounds:
            s.status = Status.Finalized
            s.current = None
            refund = s.escrow
            ctx.pay(s.owner, refund)
            s.escrow = 0
            s.refunded += refund
            ctx.emit("StudyClosed", {"study_id": s.study_id, "refund": refund})
        elif s.participants:
            self._open(ctx, s)
        else:
            s.status = Status.Enrolling
            s.current = None

    def call_open_round(self, ctx: Context, study_id: str) -> None:
        ctx.require_no_payment()
        s = self.study(study_id)
        if ctx.sender != s.owner:
            _fail("NotOwner")
        if s.status is not Status.Enrolling:
            _fail("WrongPhase")
        if not s.participants:
            _fail("NoParticipants")
        self._open(ctx, s)

    def call_abort_round(self, ctx: Context, study_id: str, round: int) -> None:
        """All-or-nothing dropout rule: discard the round, re-key under a new round number."""
        ctx.require_no_payment()
        s = self.study(study_id)
        if ctx.sender != s.owner:
            _fail("NotOwner")
        if s.status not in (Status.RoundOpen, Status.Scoring) or s.current is None:
            _fail("WrongPhase")
        if round != s.round:
            _fail("WrongRound")
        s.current.outcome = "aborted"
        s.history = s.history + (_Sealed(s.current),)
        ctx.emit("RoundAborted", {"study_id": study_id, "round": round})
        s.current = None
        self._advance(ctx, s)

    def call_submit_commitment(
        self,
        ctx: Context,
        study_id: str,
        round: int,
        cid: bytes,
        n_samples: int,
        evaluator_cids: dict | None = None,
    ) -> None:
        ctx.require_no_payment()
        s = self.study(study_id)
        if s.status is not Status.RoundOpen:
            _fail("WrongPhase")
        if round != s.round:
            _fail("WrongRound")
        rec = s.current
        if ctx.sender not in rec.roster:
            _fail("NotInRoster")
        if ctx.sender in rec.commitments:
            _fail("DuplicateCommitment")
        if type(n_samples) is not int or n_samples < 0 or not isinstance(cid, bytes) or len(cid) != 32:
            _fail("BadArgs(commitment)")
        evaluator_cids = evaluator_cids or {}
        if not all(isinstance(k, Did) and isinstance(v, bytes) for k, v in evaluator_cids.items()):
            _fail("BadArgs(evaluator_cids)")
        rec.commitments[ctx.sender] = Commitment(cid, n_samples, dict(evaluator_cids))
        ctx.emit("Committed", {"study_id": study_id, "round": round, "patient": ctx.sender, "cid": cid})
        if len(rec.commitments) == len(rec.roster):
            s.status = Status.Scoring

    def call_publish_global(self, ctx: Context, study_id: str, round: int, cid: bytes) -> None:
        ctx.require_no_payment()
        s = self.study(study_id)
        if ctx.sender != s.owner:
            _fail("NotOwner")
        if s.status is not Status.Scoring:
            _fail("WrongPhase")
        if round != s.round:
            _fail("WrongRound")
        if not isinstance(cid, bytes) or len(cid) != 32:
            _fail("BadArgs(cid)")
        s.current.global_cid = cid
        ctx.emit("GlobalPublished", {"study_id": study_id, "round": round, "cid": cid})

    def call_submit_scores(self, ctx: Context, study_id: str, round: int, scores: list) -> None:
        ctx.require_no_payment()
        s = self.study(study_id)
        registry = ctx.view(self.evaluators_contract)
        if not registry.is_active(ctx.sender):
            _fail("NotStaked")
        if s.status is not Status.Scoring:
            _fail("WrongPhase")
        if round != s.round:
            _fail("WrongRound")
        rec = s.current
        if not isinstance(scores, list) or len(scores) != len(rec.roster):
            _fail("BadLength")
        if not all(type(v) is int and v >= 0 for v in scores):
            _fail("BadScore")
        if ctx.sender in rec.scores:
            _fail("Duplicate")
        rec.scores[ctx.sender] = tuple(scores)
        ctx.emit("Scored", {"study_id": study_id, "round": round, "evaluator": ctx.sender})

    def call_finalize_round(self, ctx: Context, study_id: str, round: int) -> None:
        ctx.require_no_payment()
        s = self.study(study_id)
        if s.status is not Status.Scoring:
            _fail("WrongPhase")
        if round != s.round:
            _fail("WrongRound")
        rec = s.current
        if len(rec.scores) < s.quorum:
            _fail(f"QuorumNotMet({len(rec.scores)}<{s.quorum})")

        evaluators = sorted(rec.scores)
        n = len(rec.roster)
        consensus = [median_int([rec.scores[e][i] for e in evaluators]) for i in range(n)]
        amounts = proportional_payouts(consensus, rec.budget)
        rec.consensus = tuple(consensus)
        if sum(consensus) == 0:
            s.carry = rec.budget
        else:
            s.carry = 0
        for patient, amount in zip(rec.roster, amounts):
            if amount:
                ctx.pay(patient, amount)
                rec.payouts[patient] = amount
        paid = sum(amounts)
        s.escrow -= paid
        s.paid_rewards += paid

        kappa = Fraction(s.kappa)
        honest_on = {e: 0 for e in evaluators}
        for i in range(n):
            column = [rec.scores[e][i] for e in evaluators]
            med = consensus[i]
            mad = median_int([abs(v - med) for v in column])
            bound = kappa * max(mad, MAD_FLOOR)
            for e, v in zip(evaluators, column):
                if abs(v - med) <= bound:
                    honest_on[e] += 1
        need = (n + 1) // 2
        for e in evaluators:
            if honest_on[e] >= need and s.fee_per_round:
                before = ctx.balance(e)
                ctx.invoke(self.evaluators_contract, "pay_fee", to=e, amount=s.fee_per_round)
                rec.fees[e] = ctx.balance(e) - before

        rec.outcome = "finalized"
        if rec.global_cid is not None:
            s.global_cid = rec.global_cid
        ctx.emit(
            "RoundFinalized",
            {
                "study_id": study_id,
                "round": round,
                "payouts": rec.payouts,
                "consensus": list(consensus),
                "fees": rec.fees,
            },
        )
        s.history = s.history + (_Sealed(rec),)
        s.current = None
        s.completed += 1
        self._advance(ctx, s)


# ---------------------------------------------------------------------------
# Evaluator NFT proof of stake with Harberger tax
# ---------------------------------------------------------------------------


@dataclass
class EvaluatorNft:
    nft_id: int
    owner: Did
    self_price: int
    stake: int
    minted_at: int
    paid_through_epoch: int
    tax_paid: int = 0
    active: bool = True

    def canonical(self):
        return [
            self.nft_id,
            self.owner,
            self.self_price,
            self.stake,
            self.minted_at,
            self.paid_through_epoch,
            self.tax_paid,
            self.active,
        ]


@register_contract
class EvaluatorRegistry(Contract):
    kind = "evaluators"

    def __init__(self, init_args: dict):
        super().__init__(init_args)
        self.tax_rate_bps: int = init_args.get("tax_rate_bps", 100)
        self.epoch_length: int = init_args.get("epoch_length", 1)
        self.fee_callers: list[str] = list(init_args.get("fee_callers", [STUDIES]))
        self.nfts: dict[int, EvaluatorNft] = {}
        self.next_id = 1
        self.treasury = 0
        self.tax_collected = 0
        self.fees_paid = 0

    def held(self) -> int:
        return self.treasury + sum(n.stake for n in self.nfts.values())

    def canonical(self):
        return [
            self.tax_rate_bps,
            self.epoch_length,
            self.fee_callers,
            {i: n.canonical() for i, n in self.nfts.items()},
            self.next_id,
            self.treasury,
            self.tax_collected,
            self.fees_paid,
        ]

    def epoch(self, height: int) -> int:
        return height // self.epoch_length

    def tax_due(self, nft: EvaluatorNft) -> int:
        return nft.self_price * self.tax_rate_bps // 10_000

    def is_active(self, did: Did) -> bool:
        return any(n.active and n.owner == did for n in self.nfts.values())

    def active_owners(self) -> list[Did]:
        return sorted({n.owner for n in self.nfts.values() if n.active})

    def nft(self, nft_id: int) -> EvaluatorNft:
        try:
            return self.nfts[nft_id]
        except (KeyError, TypeError):
            raise ContractError(f"UnknownNft({nft_id})") from None

    def call_mint(self, ctx: Context, self_price: int) -> None:
        if type(self_price) is not int or self_price <= 0:
            _fail("BadPrice")
        if ctx.payment != self_price:
            _fail(f"InsufficientFunds(stake {ctx.payment} != self_price {self_price})")
        nft = EvaluatorNft(
            self.next_id, ctx.sender, self_price, self_price, ctx.height, self.epoch(ctx.height) - 1
        )
        self.nfts[nft.nft_id] = nft
        self.next_id += 1
        ctx.emit("NftMinted", {"nft_id": nft.nft_id, "owner": ctx.sender, "self_price": self_price})

    def call_set_price(self, ctx: Context, nft_id: int, new_price: int) -> None:
        nft = self.nft(nft_id)
        if nft.owner != ctx.sender:
            _fail("NotOwner")
        if not nft.active:
            _fail("Inactive")
        if type(new_price) is not int or new_price <= 0:
            _fail("BadPrice")
        top_up = max(0, new_price - nft.stake)
        if ctx.payment != top_up:
            _fail(f"InsufficientFunds(top-up {ctx.payment} != {top_up})")
        if new_price < nft.stake:
            ctx.pay(nft.owner, nft.stake - new_price)
        nft.stake = new_price
        nft.self_price = new_price
        ctx.emit("PriceSet", {"nft_id": nft_id, "self_price": new_price})

    def call_pay_tax(self, ctx: Context, nft_id: int, epoch: int) -> None:
        """Collect tax for every unpaid epoch up to ``epoch`` from the owner's wallet.

        Minting grants the registry a standing mandate for this debit. The
        first epoch the owner cannot cover deactivates the NFT and returns
        its stake; the call itself still applies.
        """
        ctx.require_no_payment()
        nft = self.nft(nft_id)
        if not nft.active:
            _fail("Inactive")
        if type(epoch) is not int or epoch > self.epoch(ctx.height):
            _fail("FutureEpoch")
        if epoch <= nft.paid_through_epoch:
            _fail("AlreadyPaid")
        while nft.paid_through_epoch < epoch:
            due = self.tax_due(nft)
            if not ctx.pull(nft.owner, due):
                nft.active = False
                refund, nft.stake = nft.stake, 0
                ctx.pay(nft.owner, refund)
                ctx.emit("NftDeactivated", {"nft_id": nft_id, "owner": nft.owner, "epoch": nft.paid_through_epoch + 1})
                return
            nft.paid_through_epoch += 1
            nft.tax_paid += due
            self.treasury += due
            self.tax_collected += due
            ctx.emit("TaxPaid", {"nft_id": nft_id, "epoch": nft.paid_through_epoch, "amount": due})

    def call_buyout(self, ctx: Context, nft_id: int, new_price: int | None = None) -> None:
        """Forced sale at the declared price; always available to a funded buyer."""
        nft = self.nft(nft_id)
        if not nft.active:
            _fail("Inactive")
        if ctx.sender == nft.owner:
            _fail("AlreadyOwner")
        price = nft.self_price
        new_price = price if new_price is None else new_price
        if type(new_price) is not int or new_price <= 0:
            _fail("BadPrice")
        top_up = max(0, new_price - nft.stake)
        if ctx.payment != price + top_up:
            _fail(f"InsufficientFunds(payment {ctx.payment} != {price + top_up})")
        seller = nft.owner
        ctx.pay(seller, price)
        if new_price < nft.stake:
            ctx.pay(ctx.sender, nft.stake - new_price)
        nft.stake = new_price
        nft.self_price = new_price
        nft.owner = ctx.sender
        ctx.emit("Buyout", {"nft_id": nft_id, "seller": seller, "buyer": ctx.sender, "price": price})

    def call_pay_fee(self, ctx: Context, to: Did, amount: int) -> None:
        if ctx.caller not in self.fee_callers:
            _fail("NotAuthorized")
        amount = min(amount, self.treasury)
        if amount <= 0:
            return
        ctx.pay(to, amount)
        self.treasury -= amount
        self.fees_paid += amount
        ctx.emit("EvaluatorFee", {"to": to, "amount": amount})


# ---------------------------------------------------------------------------
# Client-side transaction helpers (``net`` is a Chain or anything with submit)
# ---------------------------------------------------------------------------


def create_study(net: Submitter, owner: KeyPair, config: fl.StudyConfig, global_cid: Cid, deposit: int) -> bytes:
    return net.submit(owner, call(STUDIES, "create_study", deposit, config=config.to_bytes(), global_cid=global_cid.digest))


def opt_in(net: Submitter, patient: KeyPair, study_id: str, store: PhrStore | None = None) -> bytes:
    """Queue the opt-in; with ``store``, also file a ConsentReceipt in the patient's own PHR."""
    digest = net.submit(patient, call(STUDIES, "opt_in", study_id=study_id))
    if store is not None:
        write_consent_receipt(store, patient, study_id, "opt_in", digest)
    return digest


def write_consent_receipt(store: PhrStore, patient: KeyPair, study_id: str, action: str, tx_digest: bytes) -> int:
    body = {"study_id": study_id, "action": action, "tx_digest": tx_digest}
    return phr.write_record(store, patient, phr.draft_record(store, patient, phr.RecordKind.ConsentReceipt, body))


def opt_out(net: Submitter, patient: KeyPair, study_id: str, store: PhrStore | None = None) -> bytes:
    digest = net.submit(patient, call(STUDIES, "opt_out", study_id=study_id))
    if store is not None:
        write_consent_receipt(store, patient, study_id, "opt_out", digest)
    return digest


def open_round(net: Submitter, owner: KeyPair, study_id: str) -> bytes:
    return net.submit(owner, call(STUDIES, "open_round", study_id=study_id))


def abort_round(net: Submitter, owner: KeyPair, study_id: str, round: int) -> bytes:
    return net.submit(owner, call(STUDIES, "abort_round", study_id=study_id, round=round))


def submit_commitment(
    net: Submitter,
    patient: KeyPair,
    study_id: str,
    round: int,
    cid: Cid,
    n_samples: int,
    evaluator_cids: dict[Did, Cid] | None = None,
) -> bytes:
    return net.submit(
        patient,
        call(
            STUDIES,
            "submit_commitment",
            study_id=study_id,
            round=round,
            cid=cid.digest,
            n_samples=n_samples,
            evaluator_cids={d: c.digest for d, c in (evaluator_cids or {}).items()},
        ),
    )


def publish_global(net: Submitter, owner: KeyPair, study_id: str, round: int, cid: Cid) -> bytes:
    return net.submit(owner, call(STUDIES, "publish_global", study_id=study_id, round=round, cid=cid.digest))


def submit_scores(net: Submitter, evaluator: KeyPair, study_id: str, round: int, scores: list[int]) -> bytes:
    return net.submit(evaluator, call(STUDIES, "submit_scores", study_id=study_id, round=round, scores=list(scores)))


def finalize_round(net: Submitter, caller: KeyPair, study_id: str, round: int) -> bytes:
    return net.submit(caller, call(STUDIES, "finalize_round", study_id=study_id, round=round))


def mint_evaluator_nft(net: Submitter, owner: KeyPair, self_price: int, stake_payment: int | None = None) -> bytes:
    stake = self_price if stake_payment is None else stake_payment
    return net.submit(owner, call(EVALUATORS, "mint", stake, self_price=self_price))


def set_price(net: Submitter, owner: KeyPair, nft_id: int, new_price: int, top_up: int = 0) -> bytes:
    return net.submit(owner, call(EVALUATORS, "set_price", top_up, nft_id=nft_id, new_price=new_price))


def pay_tax(net: Submitter, caller: KeyPair, nft_id: int, epoch: int) -> bytes:
    return net.submit(caller, call(EVALUATORS, "pay_tax", nft_id=nft_id, epoch=epoch))


def buyout(net: Submitter, buyer: KeyPair, nft_id: int, price: int, new_price: int | None = None) -> bytes:
    new = price if new_price is None else new_price
    payment = price + max(0, new - price)
    return net.submit(buyer, call(EVALUATORS, "buyout", payment, nft_id=nft_id, new_price=new))


# ---------------------------------------------------------------------------
# Off-chain evaluator duty
# ---------------------------------------------------------------------------


def _blob_key(shared: bytes, study_id: str, round: int) -> bytes:
    return hashlib.sha256(b"dhin/eval-blob/" + shared + study_id.encode() + struct.pack(">I", round)).digest()


def seal_for_evaluator(
    patient_key: KeyPair,
    evaluator: Did,
    study_id: str,
    round: int,
    update: fl.LocalUpdate,
    resolver: Resolver | None = None,
) -> bytes:
    """Encrypt the raw update so only ``evaluator`` can score it."""
    key = _blob_key(key_agreement(patient_key, evaluator, resolver), study_id, round)
    plaintext = codec.encode([update.delta.to_bytes(), update.n_samples])
    aad = codec.encode([study_id, round, patient_key.did, evaluator])
    return ChaCha20Poly1305(key).encrypt(bytes(12), plaintext, aad)


def open_sealed_update(
    evaluator_key: KeyPair,
    patient: Did,
    study_id: str,
    round: int,
    blob: bytes,
    resolver: Resolver | None = None,
) -> tuple[fl.FixedVec, int]:
    key = _blob_key(key_agreement(evaluator_key, patient, resolver), study_id, round)
    aad = codec.encode([study_id, round, patient, evaluator_key.did])
    delta, n = codec.decode(ChaCha20Poly1305(key).decrypt(bytes(12), blob, aad))
    return fl.FixedVec.from_bytes(delta), n


def score_contribution(
    evaluator_key: KeyPair,
    record: RoundRecord,
    global_params: fl.ModelParams,
    store: BlobStore,
    validation_cid: Cid,
    config: fl.StudyConfig,
    study_id: str | None = None,
    resolver: Resolver | None = None,
) -> list[float]:
    """Per-roster-member validation-loss improvement, in roster order."""
    study_id = config.study_id if study_id is None else study_id
    try:
        validation = fl.FeatureMatrix.from_bytes(store.get(validation_cid))
    except KeyError:
        raise MissingBlob(f"validation set {validation_cid}") from None
    scores = []
    for patient in record.roster:
        commitment = record.commitments.get(patient)
        cid = None if commitment is None else commitment.evaluator_cids.get(evaluator_key.did)
        if cid is None or Cid(cid) not in store:
            raise MissingBlob(f"no evaluator blob from {patient}")
        delta, n = open_sealed_update(evaluator_key, patient, study_id, record.round, store.get(Cid(cid)), resolver)
        scores.append(fl.score_update(global_params, delta, n, validation, config.lr_global))
    return scores
