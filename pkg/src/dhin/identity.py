"""Decentralized identifiers, signatures and verifiable credentials.

Signing uses Ed25519 and key agreement uses X25519, both derived
deterministically from a single 32-byte seed. A ``Did`` is the SHA-256 digest
of the Ed25519 public key. Resolution goes through an in-memory ``Resolver``
that also serves as the public directory of presented credentials.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import json
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)

from dhin import codec

DID_METHOD = "dhin"
SIGNATURE_SIZE = 64

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw
_RAW_PRIV = serialization.PrivateFormat.Raw
_NO_ENC = serialization.NoEncryption()


class IdentityError(Exception):
    pass


class UnknownDid(IdentityError):
    pass


class InvalidWindow(IdentityError):
    pass


class CredentialError(IdentityError):
    """Base for credential verification failures; ``reason`` names the kind."""

    reason = "CredentialError"

    def __init__(self, detail: str = ""):
        super().__init__(f"{self.reason}: {detail}" if detail else self.reason)


class UntrustedIssuer(CredentialError):
    reason = "UntrustedIssuer"


class BadSignature(CredentialError):
    reason = "BadSignature"


class Expired(CredentialError):
    reason = "Expired"


class NotYetValid(CredentialError):
    reason = "NotYetValid"


class WrongClaim(CredentialError):
    reason = "WrongClaim"


class WrongSubject(CredentialError):
    reason = "WrongSubject"


@dataclass(frozen=True, order=True)
class Did:
    id: bytes

    __canonical_did__ = True

    def __post_init__(self):
        if len(self.id) != 32:
            raise ValueError("Did id must be 32 bytes")

    def __str__(self) -> str:
        return f"did:{DID_METHOD}:{self.id.hex()}"

    def __repr__(self) -> str:
        return f"Did({self.id.hex()[:12]}…)"

    @property
    def method(self) -> str:
        return DID_METHOD

    @classmethod
    def parse(cls, text: str) -> Did:
        parts = text.split(":")
        if len(parts) != 3 or parts[0] != "did" or parts[1] != DID_METHOD:
            raise ValueError(f"not a did:{DID_METHOD} identifier: {text!r}")
        raw = bytes.fromhex(parts[2])
        if len(raw) != 32 or parts[2] != raw.hex():
            raise ValueError(f"malformed did id: {text!r}")
        return cls(raw)

    @classmethod
    def from_public_key(cls, public_key: bytes) -> Did:
        return cls(codec.digest(public_key))


@dataclass(frozen=True)
class KeyPair:
    """Ed25519 signing pair plus the X25519 agreement pair from the same seed."""

    private_key: bytes
    public_key: bytes
    agreement_private: bytes = field(repr=False)
    agreement_public: bytes

    @classmethod
    def from_seed(cls, seed: bytes) -> KeyPair:
        if len(seed) != 32:
            raise ValueError("seed must be 32 bytes")
        signing = Ed25519PrivateKey.from_private_bytes(seed)
        agreement_seed = hashlib.sha256(b"dhin/x25519/" + seed).digest()
        agreement = X25519PrivateKey.from_private_bytes(agreement_seed)
        return cls(
            private_key=seed,
            public_key=signing.public_key().public_bytes(_RAW, _RAW_PUB),
            agreement_private=agreement.private_bytes(_RAW, _RAW_PRIV, _NO_ENC),
            agreement_public=agreement.public_key().public_bytes(_RAW, _RAW_PUB),
        )

    @property
    def did(self) -> Did:
        return Did.from_public_key(self.public_key)


@dataclass(frozen=True)
class DidDocument:
    did: Did
    public_key: bytes
    created_at: int
    agreement_key: bytes

    def __post_init__(self):
        if Did.from_public_key(self.public_key) != self.did:
            raise ValueError("DID document public key does not hash to its DID")

    def to_json(self) -> dict:
        return {
            "did": str(self.did),
            "public_key": self.public_key.hex(),
            "agreement_key": self.agreement_key.hex(),
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> DidDocument:
        return cls(
            did=Did.parse(obj["did"]),
            public_key=bytes.fromhex(obj["public_key"]),
            created_at=int(obj["created_at"]),
            agreement_key=bytes.fromhex(obj["agreement_key"]),
        )

    def canonical(self):
        return [self.did, self.public_key, self.created_at, self.agreement_key]


class ClaimKind(enum.Enum):
    PhysicianLicense = "PhysicianLicense"
    PharmacyLicense = "PharmacyLicense"
    DeviceApproval = "DeviceApproval"
    EvaluatorAccreditation = "EvaluatorAccreditation"


@dataclass(frozen=True)
class Credential:
    issuer: Did
    subject: Did
    claim: ClaimKind
    issued_at: int
    expires_at: int
    signature: bytes

    def signing_bytes(self) -> bytes:
        return codec.encode(
            [self.issuer, self.subject, self.claim.name, self.issued_at, self.expires_at]
        )

    def canonical(self):
        return [
            self.issuer,
            self.subject,
            self.claim.name,
            self.issued_at,
            self.expires_at,
            self.signature,
        ]

    def to_bytes(self) -> bytes:
        return codec.encode(self.canonical())

    @classmethod
    def from_bytes(cls, data: bytes) -> Credential:
        return cls.from_canonical(codec.decode(data))

    @classmethod
    def from_canonical(cls, fields) -> Credential:
        try:
            issuer, subject, claim, issued_at, expires_at, signature = fields
            cred = cls(issuer, subject, ClaimKind[claim], issued_at, expires_at, signature)
        except (TypeError, ValueError, KeyError) as exc:
            raise codec.DecodeError(f"malformed credential: {exc}") from exc
        if not (
            isinstance(issuer, Did)
            and isinstance(subject, Did)
            and isinstance(issued_at, int)
            and isinstance(expires_at, int)
            and isinstance(signature, bytes)
        ):
            raise codec.DecodeError("malformed credential field types")
        return cred

    def to_json(self) -> dict:
        return {
            "issuer": str(self.issuer),
            "subject": str(self.subject),
            "claim": self.claim.name,
            "issued_at": self.issued_at,
            "expires_at": self.expires_at,
            "signature": self.signature.hex(),
        }


class Resolver:
    """In-memory DID registry and credential directory."""

    def __init__(self) -> None:
        self._documents: dict[Did, DidDocument] = {}
        self._credentials: dict[Did, list[Credential]] = {}

    def register(self, document: DidDocument) -> None:
        existing = self._documents.get(document.did)
        if existing is not None and existing.public_key != document.public_key:
            raise IdentityError(f"{document.did} already registered with another key")
        if existing is None:
            self._documents[document.did] = document

    def resolve(self, did: Did) -> DidDocument:
        try:
            return self._documents[did]
        except KeyError:
            raise UnknownDid(str(did)) from None

    def __contains__(self, did: Did) -> bool:
        return did in self._documents

    def documents(self) -> list[DidDocument]:
        return [self._documents[d] for d in sorted(self._documents)]

    def publish(self, credential: Credential) -> None:
        self._credentials.setdefault(credential.subject, []).append(credential)

    def credentials_for(self, subject: Did, claim: ClaimKind | None = None) -> list[Credential]:
        creds = self._credentials.get(subject, [])
        return [c for c in creds if claim is None or c.claim == claim]


default_resolver = Resolver()


@dataclass
class IssuerRegistry:
    trusted: dict[ClaimKind, set[Did]] = field(default_factory=dict)

    def trust(self, claim: ClaimKind, issuer: Did) -> None:
        self.trusted.setdefault(claim, set()).add(issuer)

    def distrust(self, claim: ClaimKind, issuer: Did) -> None:
        self.trusted.get(claim, set()).discard(issuer)

    def is_trusted(self, claim: ClaimKind, issuer: Did) -> bool:
        return issuer in self.trusted.get(claim, ())

    def canonical(self):
        return {claim.name: sorted(issuers) for claim, issuers in self.trusted.items()}

    @classmethod
    def from_canonical(cls, obj: dict) -> IssuerRegistry:
        return cls({ClaimKind[name]: set(issuers) for name, issuers in obj.items()})


@functools.lru_cache(maxsize=4096)
def _signer(private_key: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(private_key)


@functools.lru_cache(maxsize=4096)
def _verifier(public_key: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(public_key)


def generate_identity(
    seed: bytes, *, created_at: int = 0, resolver: Resolver | None = None
) -> tuple[Did, KeyPair, DidDocument]:
    key = KeyPair.from_seed(seed)
    document = DidDocument(key.did, key.public_key, created_at, key.agreement_public)
    (resolver or default_resolver).register(document)
    return key.did, key, document


def sign(key: KeyPair, message: bytes) -> bytes:
    return _signer(key.private_key).sign(message)


def verify_key(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(signature) != SIGNATURE_SIZE:
        return False
    try:
        _verifier(public_key).verify(signature, message)
    except InvalidSignature:
        return False
    return True


def verify(
    signer: Did, message: bytes, signature: bytes, resolver: Resolver | None = None
) -> bool:
    """True iff ``signature`` is ``signer``'s signature over ``message``.

    Raises UnknownDid when ``signer`` is not registered.
    """
    document = (resolver or default_resolver).resolve(signer)
    return verify_key(document.public_key, message, signature)


def issue_credential(
    issuer: KeyPair, subject: Did, claim: ClaimKind, issued_at: int, expires_at: int
) -> Credential:
    if expires_at <= issued_at:
        raise InvalidWindow(f"expires_at {expires_at} <= issued_at {issued_at}")
    unsigned = Credential(issuer.did, subject, claim, issued_at, expires_at, b"")
    return Credential(
        issuer.did,
        subject,
        claim,
        issued_at,
        expires_at,
        sign(issuer, unsigned.signing_bytes()),
    )


def verify_credential(
    cred: Credential,
    registry: IssuerRegistry,
    now: int,
    resolver: Resolver | None = None,
) -> None:
    """Raise a ``CredentialError`` subclass unless ``cred`` is valid at ``now``.

    Validity window is ``issued_at <= now < expires_at``.
    """
    if not registry.is_trusted(cred.claim, cred.issuer):
        raise UntrustedIssuer(f"{cred.issuer} not trusted for {cred.claim.name}")
    try:
        ok = verify(cred.issuer, cred.signing_bytes(), cred.signature, resolver)
    except UnknownDid:
        ok = False
    if not ok:
        raise BadSignature(f"credential for {cred.subject}")
    if now < cred.issued_at:
        raise NotYetValid(f"now={now} < issued_at={cred.issued_at}")
    if now >= cred.expires_at:
        raise Expired(f"now={now} >= expires_at={cred.expires_at}")


def check_holder_credential(
    cred: Credential,
    holder: Did,
    claim: ClaimKind,
    registry: IssuerRegistry,
    now: int,
    resolver: Resolver | None = None,
) -> None:
    """verify_credential plus the holder/claim binding callers usually need."""
    if cred.claim != claim:
        raise WrongClaim(f"expected {claim.name}, got {cred.claim.name}")
    if cred.subject != holder:
        raise WrongSubject(f"credential subject {cred.subject} is not {holder}")
    verify_credential(cred, registry, now, resolver)


def find_valid_credential(
    holder: Did,
    claim: ClaimKind,
    registry: IssuerRegistry,
    now: int,
    resolver: Resolver | None = None,
) -> Credential | None:
    for cred in (resolver or default_resolver).credentials_for(holder, claim):
        try:
            verify_credential(cred, registry, now, resolver)
        except CredentialError:
            continue
        return cred
    return None


def key_agreement(
    self_key: KeyPair, peer: Did, resolver: Resolver | None = None
) -> bytes:
    """Symmetric 32-byte secret shared between ``self_key`` and ``peer``."""
    document = (resolver or default_resolver).resolve(peer)
    raw = X25519PrivateKey.from_private_bytes(self_key.agreement_private).exchange(
        X25519PublicKey.from_public_bytes(document.agreement_key)
    )
    low, high = sorted([self_key.did.id, peer.id])
    return hashlib.sha256(b"dhin/agree/" + raw + low + high).digest()


def credential_json(cred: Credential, pretty: bool = False) -> str:
    return json.dumps(cred.to_json(), indent=2 if pretty else None, sort_keys=True)
