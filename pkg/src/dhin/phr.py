"""Patient-owned personal health record with grant/revoke policies and an audit trail.

Every gated operation (grant, revoke, read, write, training export) appends
exactly one ``AuditEntry``, denials included. Records are append-only;
corrections are new records whose ``amends`` field points at the superseded id.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from typing import Callable, Iterable

import numpy as np

from dhin import codec
from dhin.fl import FeatureMatrix, SchemaMismatch, StudySchema
from dhin.identity import Did, KeyPair, Resolver, UnknownDid, default_resolver, sign, verify

POLICY_ANCHOR_KEY = "phr/policies"


class RecordKind(enum.Enum):
    Prescription = "Prescription"
    Dispense = "Dispense"
    LabResult = "LabResult"
    Observation = "Observation"
    Referral = "Referral"
    AiOutput = "AiOutput"
    ConsentReceipt = "ConsentReceipt"
    InsuranceClaimNote = "InsuranceClaimNote"


ALL_KINDS = frozenset(RecordKind)


class Right(enum.Enum):
    Read = "Read"
    Write = "Write"


class AuditAction(enum.Enum):
    Read = "Read"
    Write = "Write"
    Grant = "Grant"
    Revoke = "Revoke"
    ExportForTraining = "ExportForTraining"


class AnchorMode(enum.Enum):
    OffChain = "OffChain"
    OnChain = "OnChain"


class PhrError(Exception):
    pass


class NotOwner(PhrError):
    pass


class NoSuchPolicy(PhrError):
    pass


class AccessDenied(PhrError):
    """Gated access refused; ``reason`` is NoPolicy, Expired, Revoked or WrongKind."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"Denied({reason})" + (f": {detail}" if detail else ""))


class BadRecordSignature(PhrError):
    pass


class InvalidRecord(PhrError):
    pass


class Clock:
    """Shared integer tick source."""

    def __init__(self, t: int = 0):
        self.t = t

    def __call__(self) -> int:
        return self.t

    def advance(self, n: int = 1) -> int:
        self.t += n
        return self.t


@dataclass(frozen=True)
class HealthRecord:
    record_id: int
    kind: RecordKind
    author: Did
    subject: Did
    payload: bytes
    created_at: int
    author_signature: bytes
    amends: int | None = None

    def signing_bytes(self) -> bytes:
        return codec.encode(
            [self.record_id, self.kind.name, self.subject, self.payload, self.created_at, self.amends]
        )

    def fields(self) -> dict:
        return codec.decode(self.payload)

    def canonical(self):
        return [
            self.record_id,
            self.kind.name,
            self.author,
            self.subject,
            self.payload,
            self.created_at,
            self.author_signature,
            self.amends,
        ]

    def to_bytes(self) -> bytes:
        return codec.encode(self.canonical())

    @classmethod
    def from_bytes(cls, data: bytes) -> HealthRecord:
        obj = codec.decode(data)
        try:
            record_id, kind, author, subject, payload, created_at, sig, amends = obj
            record = cls(record_id, RecordKind[kind], author, subject, payload, created_at, sig, amends)
        except (TypeError, ValueError, KeyError) as exc:
            raise codec.DecodeError(f"malformed record: {exc}") from None
        if not (
            type(record_id) is int
            and isinstance(author, Did)
            and isinstance(subject, Did)
            and isinstance(payload, bytes)
            and type(created_at) is int
            and isinstance(sig, bytes)
            and (amends is None or type(amends) is int)
        ):
            raise codec.DecodeError("malformed record field types")
        return record

    def verify_signature(self, resolver: Resolver | None = None) -> bool:
        try:
            return verify(self.author, self.signing_bytes(), self.author_signature, resolver)
        except UnknownDid:
            return False

    def to_json(self) -> dict:
        try:
            payload = _jsonable(self.fields())
        except codec.DecodeError:
            payload = self.payload.hex()
        return {
            "record_id": self.record_id,
            "kind": self.kind.name,
            "author": str(self.author),
            "subject": str(self.subject),
            "payload": payload,
            "created_at": self.created_at,
            "amends": self.amends,
            "author_signature": self.author_signature.hex(),
        }


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, Did):
        return str(value)
    return value


@dataclass(frozen=True)
class AccessPolicy:
    grantee: Did
    kinds: frozenset[RecordKind]
    rights: frozenset[Right]
    granted_at: int
    expires_at: int | None = None  # None: never expires
    revoked_at: int | None = None

    def end(self) -> float:
        ends = [t for t in (self.expires_at, self.revoked_at) if t is not None]
        return min(ends) if ends else float("inf")

    def effective(self, t: int) -> bool:
        return self.granted_at <= t < self.end()

    def inactive_reason(self, t: int) -> str:
        if t < self.granted_at:
            return "NoPolicy"
        if self.revoked_at is not None and self.revoked_at <= t and (
            self.expires_at is None or self.revoked_at <= self.expires_at
        ):
            return "Revoked"
        return "Expired"

    def canonical(self):
        return [
            self.grantee,
            sorted(k.name for k in self.kinds),
            sorted(r.name for r in self.rights),
            self.granted_at,
            self.expires_at,
            self.revoked_at,
        ]

    def to_json(self) -> dict:
        return {
            "grantee": str(self.grantee),
            "kinds": sorted(k.name for k in self.kinds),
            "rights": sorted(r.name for r in self.rights),
            "granted_at": self.granted_at,
            "expires_at": self.expires_at,
            "revoked_at": self.revoked_at,
        }


def policy(
    grantee: Did,
    kinds: Iterable[RecordKind],
    rights: Iterable[Right],
    granted_at: int,
    expires_at: int | None = None,
) -> AccessPolicy:
    return AccessPolicy(grantee, frozenset(kinds), frozenset(rights), granted_at, expires_at)


@dataclass(frozen=True)
class AuditEntry:
    actor: Did
    action: AuditAction
    record_ids: tuple[int, ...]
    at: int
    outcome: str  # "Allowed" or "Denied"
    reason: str | None = None

    @property
    def allowed(self) -> bool:
        return self.outcome == "Allowed"

    def to_json(self) -> dict:
        return {
            "actor": str(self.actor),
            "action": self.action.name,
            "record_ids": list(self.record_ids),
            "at": self.at,
            "outcome": self.outcome if self.allowed else f"Denied({self.reason})",
        }


def policy_digest(policies: Iterable[AccessPolicy]) -> bytes:
    return codec.digest(codec.encode([p.canonical() for p in policies]))


class PhrStore:
    def __init__(
        self,
        owner: Did,
        *,
        mode: AnchorMode = AnchorMode.OffChain,
        clock: Callable[[], int] | None = None,
        resolver: Resolver | None = None,
        anchor: Callable[[KeyPair, bytes], None] | None = None,
    ):
        if mode is AnchorMode.OnChain and anchor is None:
            raise ValueError("OnChain mode needs an anchor callback")
        self.owner = owner
        self.mode = mode
        self.clock = clock or Clock()
        self.resolver = resolver or default_resolver
        self.anchor = anchor
        self.records: list[HealthRecord] = []
        self.policies: list[AccessPolicy] = []
        self.audit: list[AuditEntry] = []

    # -- helpers -----------------------------------------------------------

    def now(self) -> int:
        return self.clock()

    def next_record_id(self) -> int:
        return len(self.records) + 1

    def record(self, record_id: int) -> HealthRecord:
        if not 1 <= record_id <= len(self.records):
            raise KeyError(record_id)
        return self.records[record_id - 1]

    def _log(self, actor: Did, action: AuditAction, ids=(), *, denied: str | None = None) -> None:
        self.audit.append(
            AuditEntry(
                actor,
                action,
                tuple(ids),
                self.now(),
                "Denied" if denied else "Allowed",
                denied,
            )
        )

    def _prove_possession(self, key: KeyPair) -> Did:
        challenge = codec.encode(["phr-auth", self.owner, self.now(), len(self.audit)])
        if not verify(key.did, challenge, sign(key, challenge), self.resolver):
            raise BadRecordSignature("key does not match its DID document")
        return key.did

    def scope(self, actor: Did, right: Right, t: int | None = None) -> frozenset[RecordKind]:
        """Record kinds ``actor`` may exercise ``right`` on at tick ``t``."""
        if actor == self.owner:
            return ALL_KINDS
        t = self.now() if t is None else t
        kinds: set[RecordKind] = set()
        for p in self.policies:
            if p.grantee == actor and right in p.rights and p.effective(t):
                kinds |= p.kinds
        return frozenset(kinds)

    def _authorize(self, actor: Did, right: Right, wanted: frozenset[RecordKind]) -> frozenset[RecordKind]:
        t = self.now()
        allowed = self.scope(actor, right, t) & wanted
        if allowed:
            return allowed
        held = [p for p in self.policies if p.grantee == actor and right in p.rights]
        covering = [p for p in held if p.kinds & wanted]
        if covering:
            latest = max(covering, key=lambda p: (p.granted_at, self.policies.index(p)))
            raise AccessDenied(latest.inactive_reason(t))
        if self.scope(actor, right, t):
            raise AccessDenied("WrongKind")
        if held:
            latest = max(held, key=lambda p: (p.granted_at, self.policies.index(p)))
            raise AccessDenied(latest.inactive_reason(t))
        raise AccessDenied("NoPolicy")

    def _anchor_policies(self, owner_key: KeyPair) -> None:
        if self.mode is AnchorMode.OnChain:
            self.anchor(owner_key, policy_digest(self.policies))

    def to_json(self) -> dict:
        return {
            "owner": str(self.owner),
            "mode": self.mode.name,
            "records": [r.to_json() for r in self.records],
            "policies": [p.to_json() for p in self.policies],
            "audit": [a.to_json() for a in self.audit],
        }


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def grant_access(store: PhrStore, owner_key: KeyPair, granted: AccessPolicy) -> None:
    actor = owner_key.did
    if actor != store.owner:
        store._log(actor, AuditAction.Grant, denied="NotOwner")
        raise NotOwner(str(actor))
    store._prove_possession(owner_key)
    store.policies.append(granted)
    store._log(actor, AuditAction.Grant)
    store._anchor_policies(owner_key)


def revoke_access(
    store: PhrStore,
    owner_key: KeyPair,
    grantee: Did,
    kinds: Iterable[RecordKind] | None = None,
) -> None:
    """Revoke ``grantee``'s active policies touching ``kinds`` (all kinds if None).

    Kinds of a revoked policy outside ``kinds`` stay granted through a
    replacement policy starting now.
    """
    actor = owner_key.did
    if actor != store.owner:
        store._log(actor, AuditAction.Revoke, denied="NotOwner")
        raise NotOwner(str(actor))
    store._prove_possession(owner_key)
    t = store.now()
    target = ALL_KINDS if kinds is None else frozenset(kinds)
    hits = [
        i
        for i, p in enumerate(store.policies)
        if p.grantee == grantee and p.kinds & target and p.revoked_at is None and t < p.end()
    ]
    if not hits:
        store._log(actor, AuditAction.Revoke, denied="NoSuchPolicy")
        raise NoSuchPolicy(f"no active policy for {grantee}")
    for i in hits:
        old = store.policies[i]
        store.policies[i] = replace(old, revoked_at=t)
        remaining = old.kinds - target
        if remaining:
            store.policies.append(
                AccessPolicy(grantee, remaining, old.rights, max(t, old.granted_at), old.expires_at)
            )
    store._log(actor, AuditAction.Revoke)
    store._anchor_policies(owner_key)


def draft_record(
    store: PhrStore,
    author_key: KeyPair,
    kind: RecordKind,
    payload: dict | bytes,
    *,
    amends: int | None = None,
    created_at: int | None = None,
) -> HealthRecord:
    """Build and sign the next record for ``store`` (not yet written)."""
    body = payload if isinstance(payload, bytes) else codec.encode(payload)
    unsigned = HealthRecord(
        store.next_record_id(),
        kind,
        author_key.did,
        store.owner,
        body,
        store.now() if created_at is None else created_at,
        b"",
        amends,
    )
    return replace(unsigned, author_signature=sign(author_key, unsigned.signing_bytes()))


def write_record(store: PhrStore, author_key: KeyPair, record: HealthRecord) -> int:
    actor = author_key.did
    if record.author != actor or not record.verify_signature(store.resolver):
        store._log(actor, AuditAction.Write, denied="BadSignature")
        raise BadRecordSignature(f"record by {record.author} not signed by {actor}")
    problem = None
    if record.subject != store.owner:
        problem = "WrongSubject"
    elif record.record_id != store.next_record_id():
        problem = "StaleRecordId"
    elif record.created_at > store.now():
        problem = "FutureDated"
    elif record.amends is not None and not 1 <= record.amends < record.record_id:
        problem = "BadAmends"
    if problem:
        store._log(actor, AuditAction.Write, denied=problem)
        raise InvalidRecord(problem)
    try:
        store._authorize(actor, Right.Write, frozenset([record.kind]))
    except AccessDenied as exc:
        store._log(actor, AuditAction.Write, denied=exc.reason)
        raise
    store.records.append(record)
    store._log(actor, AuditAction.Write, [record.record_id])
    return record.record_id


def read_records(
    store: PhrStore,
    reader_key: KeyPair,
    kinds: Iterable[RecordKind] | None = None,
    since: int | None = None,
    until: int | None = None,
    record_ids: Iterable[int] | None = None,
) -> list[HealthRecord]:
    """Records of the requested kinds the reader may see, ``since <= created_at < until``."""
    actor = reader_key.did
    wanted = ALL_KINDS if kinds is None else frozenset(kinds)
    try:
        store._prove_possession(reader_key)
        allowed = store._authorize(actor, Right.Read, wanted)
    except AccessDenied as exc:
        store._log(actor, AuditAction.Read, denied=exc.reason)
        raise
    ids = None if record_ids is None else set(record_ids)
    out = [
        r
        for r in store.records
        if r.kind in allowed
        and (since is None or r.created_at >= since)
        and (until is None or r.created_at < until)
        and (ids is None or r.record_id in ids)
    ]
    store._log(actor, AuditAction.Read, [r.record_id for r in out])
    return out


def extract_features(records: Iterable[HealthRecord], schema: StudySchema) -> tuple[FeatureMatrix, list[int]]:
    """Rows from records of the schema's kind and panel; superseded records are skipped."""
    records = list(records)
    superseded = {r.amends for r in records if r.amends is not None}
    rows, labels, ids = [], [], []
    for r in records:
        if r.kind.name != schema.kind or r.record_id in superseded:
            continue
        fields = r.fields()
        if not isinstance(fields, dict) or fields.get("panel") != schema.panel:
            continue
        try:
            rows.append([float(fields[name]) for name in schema.feature_fields])
            labels.append(int(fields[schema.label_field]))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaMismatch(f"record {r.record_id}: {exc}") from None
        ids.append(r.record_id)
    if not rows:
        return FeatureMatrix.empty(schema.dim), []
    return FeatureMatrix(np.array(rows, dtype=np.float64), np.array(labels, dtype=np.uint8)), ids


def export_training_set(store: PhrStore, owner_key: KeyPair, schema: StudySchema) -> FeatureMatrix:
    actor = owner_key.did
    if actor != store.owner:
        store._log(actor, AuditAction.ExportForTraining, denied="NotOwner")
        raise NotOwner(str(actor))
    store._prove_possession(owner_key)
    try:
        matrix, ids = extract_features(store.records, schema)
    except SchemaMismatch:
        store._log(actor, AuditAction.ExportForTraining, denied="SchemaMismatch")
        raise
    store._log(actor, AuditAction.ExportForTraining, ids)
    return matrix


def audit_log(store: PhrStore, caller_key: KeyPair) -> list[AuditEntry]:
    if caller_key.did != store.owner:
        raise NotOwner(str(caller_key.did))
    return list(store.audit)


def audit_jsonl(entries: Iterable[AuditEntry]) -> str:
    return "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in entries)


def observation_payload(panel: str, features: Iterable[float], labels: dict[str, int], names: Iterable[str]) -> dict:
    payload: dict = {"panel": panel}
    for name, value in zip(names, features):
        payload[name] = float(value)
    payload.update(labels)
    return payload


def chain_anchor(chain) -> Callable[[KeyPair, bytes], None]:
    """Anchor callback that queues a policy-digest tx on ``chain``."""
    from dhin.ledger import call

    def _anchor(owner_key: KeyPair, digest: bytes) -> None:
        chain.submit(owner_key, call("anchors", "anchor", key=POLICY_ANCHOR_KEY, digest=digest))

    return _anchor
