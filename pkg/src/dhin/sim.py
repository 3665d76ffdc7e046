"""Deterministic scenario harness driving the whole network tick by tick.

One tick produces one block. A study round spans ``ticks_per_round`` ticks:

    0  tax, clinical events, local training, masked + sealed commitments
    1  owner aggregates and publishes the global model; evaluators score
    2  finalize: rewards to patients, fees to honest evaluators
    3  economy: premiums bought from reward balances, scripted claims filed
    4  claims verified and settled

Every key, nonce and random draw derives from the scenario seed, so equal
seeds give byte-identical chains and reports.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints

import numpy as np

from dhin import clinical, contracts, fl, insurance, phr
from dhin.identity import (
    ClaimKind,
    Credential,
    Did,
    DidDocument,
    IssuerRegistry,
    KeyPair,
    Resolver,
    generate_identity,
    issue_credential,
)
from dhin.ledger import Block, Chain, Transaction, TxKind
from dhin.phr import Clock, PhrStore, RecordKind, Right
from dhin.storage import BlobStore, Cid

STUDY_ID = "study-1"
PANEL = "cardio"
MIN_TICKS_PER_ROUND = 5
FOREVER = 10**9


class ScenarioError(ValueError):
    pass


class SimulationError(RuntimeError):
    def __init__(self, tick: int, actor: str, cause: object):
        self.tick = tick
        self.actor = actor
        self.cause = cause
        super().__init__(f"tick {tick}, actor {actor}: {cause}")


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    seed: int = 42
    n_patients: int = 20
    n_physicians: int = 3
    n_pharmacies: int = 1
    n_evaluators: int = 3
    n_devices: int = 1
    dishonest_evaluators: int = 0
    feature_dim: int = 8
    margin: float = 3.0
    sample_counts: tuple[int, ...] = (200,) * 5 + (50,) * 15
    rotation: float = 0.2  # max per-patient rotation angle, radians
    test_rows: int = 4000
    validation_rows: int = 1000
    rounds: int = 30
    local_epochs: int = 1
    batch_size: int = 10
    lr_local: float = 0.1
    lr_global: float = 1.0
    budget: int = 1000
    evaluator_fee: int = 10
    quorum: int = 3
    kappa: float = 3.0
    tax_rate_bps: int = 100
    evaluator_price: int = 1000
    evaluator_funds: int = 3000
    owner_funds: int = 100_000
    premium: int = 50
    coverage_cap: int = 1000
    policy_epochs: int = 3
    claim_every: int = 4  # every k-th patient is scripted to file claims
    claim_interval: int = 10  # rounds between a scripted patient's claims
    claim_amount: int = 300
    ticks_per_round: int = 5

    def validate(self) -> Scenario:
        if self.n_patients < 2:
            raise ScenarioError("need at least 2 patients")
        if self.n_evaluators < self.quorum:
            raise ScenarioError(f"{self.n_evaluators} evaluators cannot meet quorum {self.quorum}")
        if self.dishonest_evaluators > self.n_evaluators:
            raise ScenarioError("more dishonest evaluators than evaluators")
        if min(self.n_physicians, self.n_pharmacies, self.n_devices) < 0 or self.n_physicians < 1:
            raise ScenarioError("need at least one physician")
        if len(self.sample_counts) != self.n_patients or any(n < 0 for n in self.sample_counts):
            raise ScenarioError("sample_counts must list one non-negative count per patient")
        if self.ticks_per_round < MIN_TICKS_PER_ROUND:
            raise ScenarioError(f"ticks_per_round must be >= {MIN_TICKS_PER_ROUND}")
        if self.feature_dim < 1 or self.rounds < 1 or self.budget < 1:
            raise ScenarioError("feature_dim, rounds and budget must be positive")
        if self.evaluator_funds < self.evaluator_price:
            raise ScenarioError("evaluators cannot afford their stake")
        if self.owner_funds < self.rounds * self.budget:
            raise ScenarioError("model owner cannot fund the reward escrow")
        if self.test_rows < 1 or self.validation_rows < 1:
            raise ScenarioError("test and validation sets must be non-empty")
        return self

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["sample_counts"] = list(self.sample_counts)
        return out


def reference_scenario() -> Scenario:
    """The fixed fixture: 20 patients (5 x 200 rows, 15 x 50), d=8, 30 rounds."""
    return Scenario().validate()


def _parse_counts(text: str) -> tuple[int, ...]:
    out: list[int] = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        value, _, repeat = part.partition("x")
        out.extend([int(value)] * (int(repeat) if repeat else 1))
    return tuple(out)


def parse_scenario(text: str) -> Scenario:
    """Read a ``[scenario]`` key = value file; unspecified keys keep reference values."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from None
    if not parser.has_section("scenario"):
        raise ScenarioError("missing [scenario] section")
    hints = get_type_hints(Scenario)
    values: dict[str, Any] = {}
    for key, raw in parser.items("scenario"):
        if key not in hints:
            raise ScenarioError(f"unknown scenario key {key!r}")
        kind = hints[key]
        try:
            if kind is int:
                values[key] = int(raw)
            elif kind is float:
                values[key] = float(raw)
            elif kind is str:
                values[key] = raw
            else:
                values[key] = _parse_counts(raw)
        except ValueError:
            raise ScenarioError(f"bad value for {key}: {raw!r}") from None
    if "n_patients" in values and "sample_counts" not in values:
        base = Scenario().sample_counts
        values["sample_counts"] = tuple(base[i % len(base)] for i in range(values["n_patients"]))
    return Scenario(**values).validate()


def load_scenario(path: str | Path) -> Scenario:
    if str(path) == "reference":
        return reference_scenario()
    return parse_scenario(Path(path).read_text())


# ---------------------------------------------------------------------------
# World
# ---------------------------------------------------------------------------


def _seed_bytes(seed: int, *label: object) -> bytes:
    h = hashlib.sha256(b"dhin/sim/" + struct.pack(">q", seed))
    for part in label:
        h.update(b"/" + str(part).encode())
    return h.digest()


def _rng(seed: int, *label: object) -> np.random.Generator:
    return np.random.default_rng(np.frombuffer(_seed_bytes(seed, *label), dtype=np.uint32))


@dataclass
class Licensed:
    name: str
    key: KeyPair
    credential: Credential

    @property
    def did(self) -> Did:
        return self.key.did


@dataclass
class Patient:
    index: int
    key: KeyPair
    store: PhrStore
    data: fl.FeatureMatrix | None = None  # retained generator matrix (oracle)
    physician: int = 0

    @property
    def did(self) -> Did:
        return self.key.did

    @property
    def name(self) -> str:
        return f"patient[{self.index}]"



@dataclass
class World:
    scenario: Scenario
    resolver: Resolver
    registry: IssuerRegistry
    clock: Clock
    blobs: BlobStore
    authority: KeyPair
    owner: KeyPair
    patients: list[Patient]
    physicians: list[Licensed]
    pharmacies: list[Licensed]
    devices: list[clinical.MedicalDevice]
    evaluators: list[KeyPair]
    config: fl.StudyConfig
    test: fl.FeatureMatrix
    validation: fl.FeatureMatrix
    truth: np.ndarray
    documents: list[DidDocument]
    chain: Chain | None = None
    bus: Bus | None = None

    @property
    def schema(self) -> fl.StudySchema:
        return self.config.schema

    def patient(self, did: Did) -> Patient:
        for p in self.patients:
            if p.did == did:
                return p
        raise KeyError(str(did))

    def credentials(self) -> dict[Did, list[Credential]]:
        out: dict[Did, list[Credential]] = {}
        for actor in self.physicians + self.pharmacies:
            out.setdefault(actor.did, []).append(actor.credential)
        for dev in self.devices:
            out.setdefault(dev.did, []).append(dev.credential)
        return out


def feature_names(dim: int) -> tuple[str, ...]:
    return tuple(f"f{i}" for i in range(dim))


def _rotation(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Rotation by ``angle`` in a random 2-plane."""
    if dim < 2 or angle == 0.0:
        return np.eye(dim)
    q, _ = np.linalg.qr(rng.standard_normal((dim, 2)))
    a, b = q[:, 0:1], q[:, 1:2]
    c, s = math.cos(angle), math.sin(angle)
    return np.eye(dim) + (c - 1) * (a @ a.T + b @ b.T) + s * (b @ a.T - a @ b.T)


def sample_rows(
    truth: np.ndarray, n: int, margin: float, rng: np.random.Generator, rotation: np.ndarray | None = None
) -> fl.FeatureMatrix:
    d = truth.shape[0]
    z = rng.standard_normal((n, d))
    p = fl.sigmoid(margin * (z @ truth))
    y = (rng.random(n) < p).astype(np.uint8)
    x = z if rotation is None else z @ rotation.T
    return fl.FeatureMatrix(x, y)


def generate_population(scenario: Scenario) -> World:
    """Identities, credentials and PHR stores seeded with Observation rows.

    Patient i gets ``sample_counts[i]`` rows from a shared logistic ground
    truth, seen through a patient-specific rotation of feature space. The
    generated matrices stay on ``Patient.data`` as the training oracle.
    """
    sc = scenario.validate()
    resolver = Resolver()
    documents: list[DidDocument] = []
    clock = Clock(0)

    def identity(*label) -> KeyPair:
        _, key, doc = generate_identity(_seed_bytes(sc.seed, "key", *label), resolver=resolver)
        documents.append(doc)
        return key

    authority = identity("authority")
    registry = IssuerRegistry()
    for claim in ClaimKind:
        registry.trust(claim, authority.did)

    def licensed(role: str, i: int, claim: ClaimKind) -> Licensed:
        key = identity(role, i)
        cred = issue_credential(authority, key.did, claim, 0, FOREVER)
        resolver.publish(cred)
        return Licensed(f"{role}[{i}]", key, cred)

    owner = identity("owner")
    physicians = [licensed("physician", i, ClaimKind.PhysicianLicense) for i in range(sc.n_physicians)]
    pharmacies = [licensed("pharmacy", i, ClaimKind.PharmacyLicense) for i in range(sc.n_pharmacies)]
    evaluators = [identity("evaluator", i) for i in range(sc.n_evaluators)]

    names = feature_names(sc.feature_dim)
    schema = fl.StudySchema(PANEL, names)
    devices = []
    for i in range(sc.n_devices):
        d = licensed("device", i, ClaimKind.DeviceApproval)
        devices.append(clinical.MedicalDevice(d.key, d.credential, f"risk-model-{i}", schema))

    rng = _rng(sc.seed, "truth")
    truth = rng.standard_normal(sc.feature_dim)
    truth /= np.linalg.norm(truth)
    test = sample_rows(truth, sc.test_rows, sc.margin, _rng(sc.seed, "test"))
    validation = sample_rows(truth, sc.validation_rows, sc.margin, _rng(sc.seed, "validation"))

    blobs = BlobStore()
    validation_cid = blobs.put(validation.to_bytes())
    config = fl.StudyConfig(
        study_id=STUDY_ID,
        schema=schema,
        local_epochs=sc.local_epochs,
        batch_size=sc.batch_size,
        lr_local=sc.lr_local,
        lr_global=sc.lr_global,
        rounds=sc.rounds,
        reward_budget_per_round=sc.budget,
        evaluator_fee_per_round=sc.evaluator_fee,
        validation_cid=validation_cid.digest,
        init_seed=_seed_bytes(sc.seed, "init"),
        quorum=sc.quorum,
        kappa=sc.kappa,
    )

    patients = []
    for i, n in enumerate(sc.sample_counts):
        key = identity("patient", i)
        store = PhrStore(key.did, clock=clock, resolver=resolver)
        prng = _rng(sc.seed, "patient", i)
        angle = float(prng.uniform(-sc.rotation, sc.rotation))
        data = sample_rows(truth, n, sc.margin, prng, _rotation(sc.feature_dim, angle, prng))
        patients.append(Patient(i, key, store, data, i % sc.n_physicians))

    return World(
        scenario=sc,
        resolver=resolver,
        registry=registry,
        clock=clock,
        blobs=blobs,
        authority=authority,
        owner=owner,
        patients=patients,
        physicians=physicians,
        pharmacies=pharmacies,
        devices=devices,
        evaluators=evaluators,
        config=config,
        test=test,
        validation=validation,
        truth=truth,
        documents=documents,
    )


def seed_records(world: World) -> None:
    """Grants for every care-team member, then the Observation rows at tick 0."""
    names = world.schema.feature_fields
    t = world.clock()
    for p in world.patients:
        doc = world.physicians[p.physician]
        phr.grant_access(p.store, p.key, phr.policy(doc.did, phr.ALL_KINDS - {RecordKind.Dispense}, Right, t))
        for ph in world.pharmacies:
            phr.grant_access(
                p.store, p.key, phr.policy(ph.did, {RecordKind.Dispense}, [Right.Write], t)
            )
        for dev in world.devices:
            phr.grant_access(p.store, p.key, phr.policy(dev.did, {RecordKind.Observation}, [Right.Read], t))
            phr.grant_access(p.store, p.key, phr.policy(dev.did, {RecordKind.AiOutput}, [Right.Write], t))
        for row, label in zip(p.data.X, p.data.y):
            payload = phr.observation_payload(PANEL, row, {"label": int(label)}, names)
            phr.write_record(p.store, doc.key, phr.draft_record(p.store, doc.key, RecordKind.Observation, payload))


# ---------------------------------------------------------------------------
# Message seam
# ---------------------------------------------------------------------------


class Bus:
    """In-memory transport between actors and the block producer.

    Transactions are signed on submit and delivered in submission order at
    the tick boundary. A networked transport would replace this class.
    """

    def __init__(self, chain: Chain):
        self.chain = chain
        self.outbox: list[tuple[str, Transaction]] = []
        self._nonces: dict[Did, int] = {}
        self.actor = "harness"

    def submit(self, key: KeyPair, kind: TxKind) -> bytes:
        nonce = max(self.chain.next_nonce(key.did), self._nonces.get(key.did, 0) + 1)
        self._nonces[key.did] = nonce
        tx = Transaction.create(key, nonce, kind)
        self.outbox.append((self.actor, tx))
        return tx.digest

    def deliver(self) -> tuple[Block, dict[bytes, str]]:
        senders = {}
        for actor, tx in self.outbox:
            self.chain.submit_tx(tx)
            senders[tx.digest] = actor
        self.outbox.clear()
        return self.chain.produce_block(), senders


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def gini(values) -> float:
    """Mean absolute difference over twice the mean; 0 for all-equal or all-zero."""
    x = np.asarray(values, dtype=np.float64)
    n = x.size
    total = x.sum()
    if n == 0 or total == 0:
        return 0.0
    diffs = np.abs(x[:, None] - x[None, :]).sum()
    return float(diffs / (2 * n * total))


@dataclass
class RoundMetrics:
    round: int
    accuracy: float
    loss: float
    payouts: dict[Did, int]
    fees: dict[Did, int]
    escrow: int
    treasury: int
    reserves: int = 0

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "accuracy": self.accuracy,
            "loss": self.loss,
            "payouts": {str(d): v for d, v in sorted(self.payouts.items())},
            "evaluator_fees": {str(d): v for d, v in sorted(self.fees.items())},
            "escrow": self.escrow,
            "treasury": self.treasury,
            "reserves": self.reserves,
        }


@dataclass
class PatientMetrics:
    did: Did
    samples: int
    rewards: int = 0
    premiums_paid: int = 0
    claims_paid: int = 0
    balance: int = 0
    reward_funded_premiums: int = 0

    def to_json(self) -> dict:
        return {
            "did": str(self.did),
            "samples": self.samples,
            "rewards": self.rewards,
            "premiums_paid": self.premiums_paid,
            "claims_paid": self.claims_paid,
            "balance": self.balance,
            "reward_funded_premiums": self.reward_funded_premiums,
        }


@dataclass
class MetricsReport:
    scenario: Scenario
    rounds: list[RoundMetrics]
    patients: list[PatientMetrics]
    gini: float
    final_reserves: int
    treasury: int
    tax_collected: int
    evaluator_fees_paid: int
    deposit: int
    rewards_paid: int
    escrow_remaining: int
    refunded: int
    total_supply: int
    chain_height: int
    determinism_digest: str
    claims: list[dict]
    cycle_closed_by: list[str]
    reserves_series: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario.to_json(),
            "determinism_digest": self.determinism_digest,
            "chain_height": self.chain_height,
            "total_supply": self.total_supply,
            "rounds": [r.to_json() for r in self.rounds],
            "patients": [p.to_json() for p in self.patients],
            "gini": self.gini,
            "study": {
                "deposit": self.deposit,
                "rewards_paid": self.rewards_paid,
                "escrow_remaining": self.escrow_remaining,
                "refunded": self.refunded,
            },
            "treasury": {
                "balance": self.treasury,
                "tax_collected": self.tax_collected,
                "evaluator_fees_paid": self.evaluator_fees_paid,
            },
            "insurance": {
                "final_reserves": self.final_reserves,
                "reserves_series": self.reserves_series,
                "claims": self.claims,
            },
            "cycle_closed_by": self.cycle_closed_by,
        }

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True, indent=2).encode() + b"\n"

    def csv_header(self) -> list[str]:
        fixed = ["round", "accuracy", "loss", "escrow", "treasury", "reserves", "paid"]
        return fixed + [f"payout_p{i}" for i in range(len(self.patients))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.csv_header())
        order = [p.did for p in self.patients]
        for r in self.rounds:
            writer.writerow(
                [r.round, f"{r.accuracy:.6f}", f"{r.loss:.6f}", r.escrow, r.treasury, r.reserves, sum(r.payouts.values())]
                + [r.payouts.get(d, 0) for d in order]
            )
        return buf.getvalue()

    def cumulative_rewards(self, through_round: int | None = None) -> list[int]:
        order = [p.did for p in self.patients]
        totals = dict.fromkeys(order, 0)
        for r in self.rounds:
            if through_round is not None and r.round > through_round:
                break
            for d, v in r.payouts.items():
                totals[d] += v
        return [totals[d] for d in order]


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


class Runner:
    def __init__(self, world: World):
        self.w = world
        self.sc = world.scenario
        self.tick = 0
        self.params = fl.init_model(world.config)
        self.rounds: list[RoundMetrics] = []
        self.reserves_series: list[int] = []
        self.pending_claims: list[int] = []
        self.last_claim_round: dict[Did, int] = {}
        self.claim_notes: dict[Did, list[int]] = {}
        self.nft_ids: dict[Did, int] = {}
        self.patient_stats = {p.did: PatientMetrics(p.did, p.data.rows) for p in world.patients}
        self.finalized_rounds = 0

    # -- plumbing ------------------------------------------------------------

    @property
    def chain(self) -> Chain:
        return self.w.chain

    @property
    def bus(self) -> Bus:
        return self.w.bus

    def as_actor(self, name: str) -> Bus:
        self.bus.actor = name
        return self.bus

    def end_tick(self) -> Block:
        block, senders = self.bus.deliver()
        for receipt in block.tx_results:
            if not receipt.applied:
                raise SimulationError(block.height, senders.get(receipt.tx_digest, "?"), receipt.reason)
        self.tick = block.height + 1
        self.w.clock.t = self.tick
        self._observe(block)
        return block

    def _observe(self, block: Block) -> None:
        for receipt in block.tx_results:
            for topic, payload in receipt.decoded_events():
                if topic == "NftMinted":
                    self.nft_ids[payload["owner"]] = payload["nft_id"]
                elif topic == "PolicyBought" and payload["holder"] in self.patient_stats:
                    stats = self.patient_stats[payload["holder"]]
                    stats.premiums_paid += payload["premium"]
                    if stats.premiums_paid <= stats.rewards:
                        stats.reward_funded_premiums += payload["premium"]
                elif topic == "ClaimSubmitted":
                    self.pending_claims.append(payload["claim_id"])
                elif topic == "ClaimPaid" and payload["holder"] in self.patient_stats:
                    self.patient_stats[payload["holder"]].claims_paid += payload["amount"]
                elif topic == "RoundFinalized":
                    for d, v in payload["payouts"].items():
                        self.patient_stats[d].rewards += v

    def guarded(self, actor: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SimulationError:
            raise
        except Exception as exc:
            raise SimulationError(self.tick, actor, f"{type(exc).__name__}: {exc}") from exc

    def study(self) -> contracts.Study:
        return self.chain.contract(contracts.STUDIES).study(STUDY_ID)

    def evaluator_registry(self) -> contracts.EvaluatorRegistry:
        return self.chain.contract(contracts.EVALUATORS)

    def pool(self) -> insurance.InsurancePool:
        return self.chain.contract(insurance.INSURANCE)

    # -- setup -------------------------------------------------------------------

    def setup(self) -> None:
        w, sc = self.w, self.sc
        seed_records(w)
        allocations = {w.owner.did: sc.owner_funds}
        for ev in w.evaluators:
            allocations[ev.did] = sc.evaluator_funds
        contract_specs = [
            ("anchors", "anchors", {}),
            (contracts.EVALUATORS, "evaluators", {
                "tax_rate_bps": sc.tax_rate_bps,
                "epoch_length": sc.ticks_per_round,
                "fee_callers": [contracts.STUDIES],
            }),
            (contracts.STUDIES, "studies", {"evaluators": contracts.EVALUATORS}),
            (insurance.INSURANCE, "insurance", {
                "epoch_length": sc.ticks_per_round,
                "registry": w.registry.canonical(),
            }),
        ]
        w.chain = Chain.genesis(allocations, contracts=contract_specs, resolver=w.resolver, documents=w.documents)
        w.bus = Bus(w.chain)
        self.tick = 1
        w.clock.t = 1

        # tick 1: evaluators stake, owner funds the study
        for i, ev in enumerate(w.evaluators):
            contracts.mint_evaluator_nft(self.as_actor(f"evaluator[{i}]"), ev, sc.evaluator_price)
        global_cid = w.blobs.put(self.params.to_bytes())
        contracts.create_study(self.as_actor("owner"), w.owner, w.config, global_cid, sc.rounds * sc.budget)
        self.end_tick()

        # tick 2: patients opt in and file consent receipts
        for p in w.patients:
            self.guarded(p.name, contracts.opt_in, self.as_actor(p.name), p.key, STUDY_ID, p.store)
        self.end_tick()

        # tick 3: roster frozen
        contracts.open_round(self.as_actor("owner"), w.owner, STUDY_ID)
        self.end_tick()

    # -- round phases ----------------------------------------------------------

    def phase_commit(self, rnd: int) -> None:
        w = self.w
        self.pay_taxes()
        self.clinical_events(rnd)
        study = self.study()
        record = study.current
        evaluators = self.evaluator_registry().active_owners()
        global_params = fl.ModelParams.from_bytes(w.blobs.get(Cid(study.global_cid)))
        for did in record.roster:
            p = w.patient(did)
            self.guarded(p.name, self._commit_one, p, record, global_params, evaluators)
        self.end_tick()

    def _commit_one(self, p: Patient, record: contracts.RoundRecord, global_params, evaluators) -> None:
        w = self.w
        data = phr.export_training_set(p.store, p.key, w.schema)
        update = fl.local_train(global_params, data, w.config, patient=p.did, round=record.round)
        masked = fl.mask_update(
            update, p.key, list(record.roster), record.round, resolver=w.resolver, context=STUDY_ID.encode()
        )
        cid = w.blobs.put(masked.to_bytes())
        sealed = {
            ev: w.blobs.put(contracts.seal_for_evaluator(p.key, ev, STUDY_ID, record.round, update, w.resolver))
            for ev in evaluators
        }
        contracts.submit_commitment(self.as_actor(p.name), p.key, STUDY_ID, record.round, cid, update.n_samples, sealed)

    def phase_score(self, rnd: int) -> None:
        w = self.w
        study = self.study()
        record = study.current
        global_params = fl.ModelParams.from_bytes(w.blobs.get(Cid(study.global_cid)))

        def aggregate():
            masked = [fl.MaskedUpdate.from_bytes(w.blobs.get(Cid(record.commitments[d].cid))) for d in record.roster]
            total, n = fl.aggregate(masked, list(record.roster))
            if n == 0:
                return global_params
            return fl.apply_global(global_params, total, n, w.config.lr_global)

        self.params = self.guarded("owner", aggregate)
        cid = w.blobs.put(self.params.to_bytes())
        contracts.publish_global(self.as_actor("owner"), w.owner, STUDY_ID, record.round, cid)

        dishonest = set(range(self.sc.n_evaluators - self.sc.dishonest_evaluators, self.sc.n_evaluators))
        for i, ev in enumerate(w.evaluators):
            name = f"evaluator[{i}]"
            if not self.evaluator_registry().is_active(ev.did):
                continue
            raw = self.guarded(
                name,
                contracts.score_contribution,
                ev,
                record,
                global_params,
                w.blobs,
                Cid(w.config.validation_cid),
                w.config,
                STUDY_ID,
                w.resolver,
            )
            scores = [contracts.to_score_units(s) for s in raw]
            if i in dishonest:
                # inflate the first roster member's score to steer rewards
                scores[0] = scores[0] * 10 + contracts.SCORE_SCALE
            contracts.submit_scores(self.as_actor(name), ev, STUDY_ID, record.round, scores)
        self.end_tick()

    def phase_finalize(self, rnd: int) -> None:
        study = self.study()
        round_no = study.round
        contracts.finalize_round(self.as_actor("owner"), self.w.owner, STUDY_ID, round_no)
        self.end_tick()
        study = self.study()
        closed = study.history[-1].record
        metrics = fl.evaluate_model(self.params, self.w.test)
        reg = self.evaluator_registry()
        self.rounds.append(
            RoundMetrics(
                rnd,
                metrics["accuracy"],
                metrics["loss"],
                dict(closed.payouts),
                dict(closed.fees),
                study.escrow,
                reg.treasury,
            )
        )
        for dev in self.w.devices:
            dev.params = self.params

    def phase_economy(self, rnd: int) -> None:
        w, sc = self.w, self.sc
        pool = self.pool()
        next_round_start = self.tick + sc.ticks_per_round
        cost = sc.premium * sc.policy_epochs
        for p in w.patients:
            policy = pool.policies.get(p.did)
            covered = policy is not None and policy.paid_through >= next_round_start
            if not covered and self.chain.balance(p.did) >= cost:
                insurance.buy_policy(self.as_actor(p.name), p.key, sc.premium, sc.coverage_cap, sc.policy_epochs)
        for did, note_ids in sorted(self.claim_notes.items()):
            p = w.patient(did)
            if not note_ids or not pool.policy_active(did, self.tick):
                continue
            notes = phr.read_records(p.store, p.key, [RecordKind.InsuranceClaimNote], record_ids=note_ids)
            evidence = insurance.claim_evidence(notes, w.credentials())
            insurance.submit_claim(self.as_actor(p.name), p.key, notes, sc.claim_amount, evidence)
            self.claim_notes[did] = []
        self.end_tick()

    def phase_settle(self, rnd: int) -> None:
        w = self.w
        for claim_id in self.pending_claims:
            claim = self.pool().claims[claim_id]
            p = w.patient(claim.holder)
            insurance.verify_claim(self.as_actor(p.name), p.key, claim_id)
            insurance.settle_claim(self.as_actor(p.name), p.key, claim_id)
        self.pending_claims = []
        self.end_tick()
        self.rounds[-1].reserves = self.pool().reserves
        self.reserves_series.append(self.pool().reserves)

    def pay_taxes(self) -> None:
        reg = self.evaluator_registry()
        epoch = reg.epoch(self.tick)
        for i, ev in enumerate(self.w.evaluators):
            nft_id = self.nft_ids.get(ev.did)
            if nft_id is None:
                continue
            nft = reg.nfts[nft_id]
            if nft.active and nft.paid_through_epoch < epoch:
                contracts.pay_tax(self.as_actor(f"evaluator[{i}]"), ev, nft_id, epoch)

    def clinical_events(self, rnd: int) -> None:
        """Prescriptions, dispensing, device inference and scripted claim notes."""
        w, sc = self.w, self.sc
        n = len(w.patients)
        for j, doc in enumerate(w.physicians):
            panel = [p for p in w.patients if p.physician == j]
            if not panel:
                continue
            p = panel[rnd % len(panel)]
            nonce = _seed_bytes(sc.seed, "rx", rnd, j)[:16]
            payload = clinical.PrescriptionPayload("atorvastatin", "20mg", 0, nonce)
            rx_id = self.guarded(doc.name, clinical.prescribe, doc.key, doc.credential, p.store, payload, w.registry)
            if w.pharmacies:
                ph = w.pharmacies[(rnd + j) % len(w.pharmacies)]
                challenge = _seed_bytes(sc.seed, "challenge", rnd, j)
                self.guarded(
                    ph.name,
                    clinical.fill_prescription,
                    ph.key,
                    ph.credential,
                    p.store,
                    p.key,
                    rx_id,
                    w.registry,
                    challenge=challenge,
                )
        for k, dev in enumerate(w.devices):
            if dev.params is None:
                continue
            p = w.patients[(rnd + k) % n]
            if p.data.rows == 0:
                continue
            out = self.guarded(f"device[{k}]", clinical.device_infer, dev, p.store)
            self.guarded(f"device[{k}]", clinical.device_write, dev.key, dev.credential, p.store, out, w.registry)

        pool = self.pool()
        for p in w.patients:
            if sc.claim_every <= 0 or p.index % sc.claim_every:
                continue
            last = self.last_claim_round.get(p.did)
            if not pool.policy_active(p.did, self.tick) or (last is not None and rnd - last < sc.claim_interval):
                continue
            doc = w.physicians[p.physician]
            note = {"diagnosis": "acute care visit", "amount": sc.claim_amount, "round": rnd}
            note_id = self.guarded(doc.name, clinical.write_claim_note, doc.key, doc.credential, p.store, note, w.registry)
            self.claim_notes.setdefault(p.did, []).append(note_id)
            self.last_claim_round[p.did] = rnd

    def idle(self) -> None:
        self.end_tick()

    # -- main loop -----------------------------------------------------------------

    def run(self) -> MetricsReport:
        self.setup()
        phases = [self.phase_commit, self.phase_score, self.phase_finalize, self.phase_economy, self.phase_settle]
        for rnd in range(1, self.sc.rounds + 1):
            if self.study().status is not contracts.Status.RoundOpen:
                raise SimulationError(self.tick, "owner", f"study not open for round {rnd}")
            for phase in phases:
                phase(rnd)
            for _ in range(self.sc.ticks_per_round - len(phases)):
                self.idle()
        return self.report()

    def report(self) -> MetricsReport:
        w, chain = self.w, self.chain
        study = self.study()
        reg = self.evaluator_registry()
        pool = self.pool()
        for p in w.patients:
            self.patient_stats[p.did].balance = chain.balance(p.did)
        stats = [self.patient_stats[p.did] for p in w.patients]
        closed = [
            str(s.did)
            for s in stats
            if s.reward_funded_premiums > 0 and s.claims_paid > 0
        ]
        return MetricsReport(
            scenario=self.sc,
            rounds=self.rounds,
            patients=stats,
            gini=gini([s.rewards for s in stats]),
            final_reserves=pool.reserves,
            treasury=reg.treasury,
            tax_collected=reg.tax_collected,
            evaluator_fees_paid=reg.fees_paid,
            deposit=study.deposited,
            rewards_paid=study.paid_rewards,
            escrow_remaining=study.escrow,
            refunded=study.refunded,
            total_supply=chain.total_supply,
            chain_height=chain.height,
            determinism_digest=chain.digest().hex(),
            claims=[c.to_json() for c in pool.claims],
            cycle_closed_by=closed,
            reserves_series=self.reserves_series,
        )


@dataclass
class RunResult:
    world: World
    report: MetricsReport

    @property
    def chain(self) -> Chain:
        return self.world.chain


def run(scenario: Scenario | None = None) -> RunResult:
    scenario = (scenario or reference_scenario()).validate()
    world = generate_population(scenario)
    runner = Runner(world)
    report = runner.run()
    return RunResult(world, report)


def centralized_oracle(world: World, rounds: int | None = None) -> fl.ModelParams:
    """Plain mini-batch SGD on the pooled retained matrices, one epoch per round."""
    parts = [p.data for p in world.patients if p.data.rows]
    pooled = fl.FeatureMatrix.concat(parts)
    cfg = world.config
    epochs = (cfg.rounds if rounds is None else rounds) * cfg.local_epochs
    w0 = fl.init_model(cfg).weights
    seed = np.frombuffer(_seed_bytes(world.scenario.seed, "central"), dtype=np.uint32)
    return fl.ModelParams(fl.sgd(w0, pooled, epochs, cfg.batch_size, cfg.lr_local, seed))


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def phr_json(world: World) -> dict:
    return {str(p.did): {"index": p.index, **p.store.to_json()} for p in world.patients}


def blobs_jsonl(blobs: BlobStore) -> str:
    return "".join(json.dumps({"cid": str(c), "data": b.hex()}) + "\n" for c, b in blobs.items())


def write_outputs(result: RunResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report.json": result.report.to_bytes(),
        "rounds.csv": result.report.to_csv().encode(),
        "chain.jsonl": result.chain.to_jsonl().encode(),
        "phr.json": (json.dumps(phr_json(result.world), sort_keys=True) + "\n").encode(),
        "blobs.jsonl": blobs_jsonl(result.world.blobs).encode(),
    }
    paths = {}
    for name, data in files.items():
        path = out / name
        path.write_bytes(data)
        paths[name] = path
    return paths
