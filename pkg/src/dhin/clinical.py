"""Credential-checked clinical workflows on top of the PHR.

Prescriptions, referrals and claim notes are physician-signed records;
pharmacies dispense only after checking the patient, the prescriber's
signature and the prescriber's license at issue time. Medical AI devices
read inputs and write their outputs back under their own DID.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from dhin import codec, fl, phr
from dhin.identity import (
    ClaimKind,
    Credential,
    CredentialError,
    Did,
    IssuerRegistry,
    KeyPair,
    check_holder_credential,
    find_valid_credential,
    sign,
    verify,
)
from dhin.phr import AccessDenied, PhrStore, RecordKind


class ClinicalError(Exception):
    pass


class ClinicalCredentialError(ClinicalError):
    def __init__(self, cause: CredentialError):
        self.cause = cause
        self.reason = cause.reason
        super().__init__(f"CredentialError({cause.reason})")


class PatientProofFailed(ClinicalError):
    pass


class BadPhysicianSignature(ClinicalError):
    pass


class UntrustedPhysician(ClinicalError):
    pass


class AlreadyDispensed(ClinicalError):
    pass


class RecordNotFound(ClinicalError):
    pass


class InputNotReadable(ClinicalError):
    pass


class ReplayedPrescription(ClinicalError):
    pass


@dataclass(frozen=True)
class PrescriptionPayload:
    drug: str
    dose: str
    refills: int = 0
    rx_nonce: bytes = field(default_factory=lambda: os.urandom(16))

    def __post_init__(self):
        if not 0 <= self.refills <= 255:
            raise ValueError("refills must fit in a u8")
        if len(self.rx_nonce) != 16:
            raise ValueError("rx_nonce must be 16 bytes")

    def canonical(self):
        return {"drug": self.drug, "dose": self.dose, "refills": self.refills, "rx_nonce": self.rx_nonce}

    @classmethod
    def from_fields(cls, fields: dict) -> PrescriptionPayload:
        return cls(fields["drug"], fields["dose"], fields["refills"], fields["rx_nonce"])


@dataclass(frozen=True)
class DispenseReceipt:
    rx_record_id: int
    pharmacy: Did
    at: int
    patient_ok: bool
    physician_sig_ok: bool
    physician_cred_ok: bool
    dispense_record_id: int

    def to_json(self) -> dict:
        return {
            "rx_record_id": self.rx_record_id,
            "pharmacy": str(self.pharmacy),
            "at": self.at,
            "verification": {
                "patient_ok": self.patient_ok,
                "physician_sig_ok": self.physician_sig_ok,
                "physician_cred_ok": self.physician_cred_ok,
            },
            "dispense_record_id": self.dispense_record_id,
        }


@dataclass(frozen=True)
class DeviceOutputPayload:
    device_model: str
    input_record_ids: tuple[int, ...]
    result: bytes
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    def canonical(self):
        return {
            "device_model": self.device_model,
            "input_record_ids": list(self.input_record_ids),
            "result": self.result,
            "confidence": float(self.confidence),
        }


@dataclass
class MedicalDevice:
    key: KeyPair
    credential: Credential
    model_name: str
    schema: fl.StudySchema | None = None
    params: fl.ModelParams | None = None

    @property
    def did(self) -> Did:
        return self.key.did


def _check(cred: Credential, holder: Did, claim: ClaimKind, registry: IssuerRegistry, now: int, resolver) -> None:
    try:
        check_holder_credential(cred, holder, claim, registry, now, resolver)
    except CredentialError as exc:
        raise ClinicalCredentialError(exc) from None


def _licensed_write(
    key: KeyPair,
    cred: Credential,
    store: PhrStore,
    kind: RecordKind,
    payload: dict,
    registry: IssuerRegistry,
    claim: ClaimKind = ClaimKind.PhysicianLicense,
) -> int:
    _check(cred, key.did, claim, registry, store.now(), store.resolver)
    return phr.write_record(store, key, phr.draft_record(store, key, kind, payload))


def prescribe(
    physician_key: KeyPair,
    physician_cred: Credential,
    store: PhrStore,
    payload: PrescriptionPayload,
    registry: IssuerRegistry,
) -> int:
    for r in store.records:
        if r.kind is RecordKind.Prescription and r.fields().get("rx_nonce") == payload.rx_nonce:
            raise ReplayedPrescription(f"rx_nonce already used by record {r.record_id}")
    return _licensed_write(
        physician_key, physician_cred, store, RecordKind.Prescription, payload.canonical(), registry
    )


def refer(
    physician_key: KeyPair,
    physician_cred: Credential,
    store: PhrStore,
    referral: dict,
    registry: IssuerRegistry,
) -> int:
    return _licensed_write(physician_key, physician_cred, store, RecordKind.Referral, referral, registry)


def write_claim_note(
    physician_key: KeyPair,
    physician_cred: Credential,
    store: PhrStore,
    note: dict,
    registry: IssuerRegistry,
) -> int:
    return _licensed_write(
        physician_key, physician_cred, store, RecordKind.InsuranceClaimNote, note, registry
    )


def order_lab(
    physician_key: KeyPair,
    physician_cred: Credential,
    store: PhrStore,
    result: dict,
    registry: IssuerRegistry,
) -> int:
    return _licensed_write(physician_key, physician_cred, store, RecordKind.LabResult, result, registry)


def patient_challenge_response(patient_key: KeyPair, challenge: bytes) -> bytes:
    return sign(patient_key, b"dhin/pharmacy-challenge/" + challenge)


def fill_prescription(
    pharmacy_key: KeyPair,
    pharmacy_cred: Credential,
    store: PhrStore,
    patient_key: KeyPair,
    rx_record_id: int,
    registry: IssuerRegistry,
    *,
    challenge: bytes | None = None,
) -> DispenseReceipt:
    now = store.now()
    resolver = store.resolver
    _check(pharmacy_cred, pharmacy_key.did, ClaimKind.PharmacyLicense, registry, now, resolver)

    # the patient proves control of the store owner DID over a fresh challenge
    challenge = os.urandom(32) if challenge is None else challenge
    response = patient_challenge_response(patient_key, challenge)
    if not verify(store.owner, b"dhin/pharmacy-challenge/" + challenge, response, resolver):
        raise PatientProofFailed(f"{patient_key.did} cannot prove control of {store.owner}")

    found = phr.read_records(store, patient_key, [RecordKind.Prescription], record_ids=[rx_record_id])
    if not found:
        raise RecordNotFound(f"no prescription {rx_record_id}")
    rx = found[0]
    if rx.subject != store.owner or not rx.verify_signature(resolver):
        raise BadPhysicianSignature(f"prescription {rx_record_id}")
    license = find_valid_credential(rx.author, ClaimKind.PhysicianLicense, registry, rx.created_at, resolver)
    if license is None:
        raise UntrustedPhysician(f"{rx.author} unlicensed at tick {rx.created_at}")

    fields = rx.fields()
    fills = sum(
        1
        for r in store.records
        if r.kind is RecordKind.Dispense and r.fields().get("rx_record_id") == rx_record_id
    )
    if fills > int(fields.get("refills", 0)):
        raise AlreadyDispensed(f"prescription {rx_record_id} filled {fills} time(s)")

    record_id = phr.write_record(
        store,
        pharmacy_key,
        phr.draft_record(
            store,
            pharmacy_key,
            RecordKind.Dispense,
            {"rx_record_id": rx_record_id, "pharmacy": pharmacy_key.did, "drug": fields["drug"]},
        ),
    )
    return DispenseReceipt(rx_record_id, pharmacy_key.did, now, True, True, True, record_id)


def device_write(
    device_key: KeyPair,
    device_cred: Credential,
    store: PhrStore,
    output: DeviceOutputPayload,
    registry: IssuerRegistry,
) -> int:
    _check(device_cred, device_key.did, ClaimKind.DeviceApproval, registry, store.now(), store.resolver)
    wanted = set(output.input_record_ids)
    if wanted:
        try:
            visible = phr.read_records(store, device_key, record_ids=wanted)
        except AccessDenied as exc:
            raise InputNotReadable(f"device cannot read inputs: {exc.reason}") from None
        missing = wanted - {r.record_id for r in visible}
        if missing:
            raise InputNotReadable(f"records {sorted(missing)} absent or outside device scope")
    return phr.write_record(
        store, device_key, phr.draft_record(store, device_key, RecordKind.AiOutput, output.canonical())
    )


def device_infer(device: MedicalDevice, store: PhrStore) -> DeviceOutputPayload:
    """Score the patient's most recent schema-matching record with the device model."""
    if device.schema is None or device.params is None:
        raise fl.SchemaMismatch("device holds no study model")
    kind = RecordKind[device.schema.kind]
    records = phr.read_records(store, device.key, [kind])
    matrix, ids = phr.extract_features(records, device.schema)
    if matrix.rows == 0:
        raise fl.SchemaMismatch("no readable records match the device schema")
    x = matrix.X[-1:]
    confidence = float(fl.predict_proba(device.params, x)[0])
    label = 1 if confidence >= 0.5 else 0
    return DeviceOutputPayload(device.model_name, (ids[-1],), codec.encode({"class": label}), confidence)


def sweep_authenticity(store: PhrStore, registry: IssuerRegistry) -> list[tuple[int, str]]:
    """Every record whose signature or author credential fails; empty means clean."""
    claim_for = {
        RecordKind.Dispense: ClaimKind.PharmacyLicense,
        RecordKind.AiOutput: ClaimKind.DeviceApproval,
    }
    problems = []
    for r in store.records:
        if not r.verify_signature(store.resolver):
            problems.append((r.record_id, "BadSignature"))
            continue
        if r.author == store.owner:
            continue
        claim = claim_for.get(r.kind, ClaimKind.PhysicianLicense)
        if find_valid_credential(r.author, claim, registry, r.created_at, store.resolver) is None:
            problems.append((r.record_id, "NoValidCredential"))
    return problems
