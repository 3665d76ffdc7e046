"""Federated learning core: logistic regression, fixed-point ring vectors and
pairwise-masked secure aggregation.

Model vectors carry the bias as their last element. Updates travel as
``FixedVec`` values in Z/2^64 with 16 fractional bits, so masks drawn from a
keyed PRG cancel exactly when the coordinator sums all roster submissions.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from dhin import codec
from dhin.identity import Did, KeyPair, Resolver, key_agreement

SCALE_BITS = 16
SCALE = float(1 << SCALE_BITS)
MAX_ABS = float(1 << 31)


class FlError(Exception):
    pass


class DimensionMismatch(FlError):
    pass


class SelfNotInRoster(FlError):
    pass


class IncompleteRoster(FlError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"missing submissions from {len(self.missing)} roster member(s)")


class RoundMismatch(FlError):
    pass


class ZeroParticipation(FlError):
    pass


class SchemaMismatch(FlError):
    pass


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StudySchema:
    """Which PHR records feed a study and how their payload maps to features."""

    panel: str
    feature_fields: tuple[str, ...]
    label_field: str = "label"
    kind: str = "Observation"

    @property
    def dim(self) -> int:
        return len(self.feature_fields)

    def canonical(self):
        return {
            "panel": self.panel,
            "feature_fields": list(self.feature_fields),
            "label_field": self.label_field,
            "kind": self.kind,
        }

    @classmethod
    def from_canonical(cls, obj: dict) -> StudySchema:
        return cls(obj["panel"], tuple(obj["feature_fields"]), obj["label_field"], obj["kind"])


@dataclass
class FeatureMatrix:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.uint8)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise DimensionMismatch(f"X {self.X.shape} / y {self.y.shape}")

    @property
    def rows(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @classmethod
    def empty(cls, dim: int) -> FeatureMatrix:
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.uint8))

    @classmethod
    def concat(cls, parts: list[FeatureMatrix]) -> FeatureMatrix:
        return cls(np.vstack([p.X for p in parts]), np.concatenate([p.y for p in parts]))

    def to_bytes(self) -> bytes:
        # rows of little-endian float64 features followed by one label byte
        head = struct.pack("<II", self.rows, self.dim)
        body = bytearray()
        for row, label in zip(self.X.astype("<f8"), self.y):
            body += row.tobytes()
            body.append(int(label))
        return head + bytes(body)

    @classmethod
    def from_bytes(cls, data: bytes) -> FeatureMatrix:
        rows, dim = struct.unpack_from("<II", data)
        stride = 8 * dim + 1
        if len(data) != 8 + rows * stride:
            raise codec.DecodeError("feature matrix length mismatch")
        raw = np.frombuffer(data, dtype=np.uint8, offset=8).reshape(rows, stride)
        X = raw[:, : 8 * dim].copy().view("<f8").reshape(rows, dim)
        return cls(X.astype(np.float64), raw[:, 8 * dim].copy())


@dataclass
class ModelParams:
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not np.all(np.isfinite(self.weights)):
            raise FlError("model weights must be finite")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def to_bytes(self) -> bytes:
        return struct.pack("<I", self.dim) + self.weights.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> ModelParams:
        (dim,) = struct.unpack_from("<I", data)
        if len(data) != 4 + 8 * dim:
            raise codec.DecodeError("model params length mismatch")
        return cls(np.frombuffer(data, dtype="<f8", offset=4).astype(np.float64))


@dataclass
class FixedVec:
    values: np.ndarray  # uint64 ring elements

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint64)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __add__(self, other: FixedVec) -> FixedVec:
        if other.dim != self.dim:
            raise DimensionMismatch(f"{self.dim} != {other.dim}")
        return FixedVec(self.values + other.values)

    def __sub__(self, other: FixedVec) -> FixedVec:
        if other.dim != self.dim:
            raise DimensionMismatch(f"{self.dim} != {other.dim}")
        return FixedVec(self.values - other.values)

    def __eq__(self, other) -> bool:
        return isinstance(other, FixedVec) and np.array_equal(self.values, other.values)

    @classmethod
    def zeros(cls, dim: int) -> FixedVec:
        return cls(np.zeros(dim, dtype=np.uint64))

    def to_bytes(self) -> bytes:
        return struct.pack("<I", self.dim) + self.values.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> FixedVec:
        (dim,) = struct.unpack_from("<I", data)
        if len(data) != 4 + 8 * dim:
            raise codec.DecodeError("fixed vector length mismatch")
        return cls(np.frombuffer(data, dtype="<u8", offset=4).astype(np.uint64))


def quantize(x) -> FixedVec:
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) >= MAX_ABS):
        raise OverflowError("value outside the fixed-point range")
    return FixedVec(np.rint(x * SCALE).astype(np.int64).view(np.uint64))


def dequantize(v: FixedVec) -> np.ndarray:
    return v.values.view(np.int64).astype(np.float64) / SCALE


@dataclass(frozen=True)
class StudyConfig:
    study_id: str
    schema: StudySchema
    local_epochs: int
    batch_size: int
    lr_local: float
    lr_global: float
    rounds: int
    reward_budget_per_round: int
    evaluator_fee_per_round: int
    validation_cid: bytes
    init_seed: bytes
    quorum: int = 3
    kappa: float = 3.0

    def __post_init__(self):
        positive = (
            self.local_epochs,
            self.batch_size,
            self.lr_local,
            self.lr_global,
            self.rounds,
            self.reward_budget_per_round,
            self.quorum,
            self.kappa,
        )
        if any(v <= 0 for v in positive) or self.evaluator_fee_per_round < 0:
            raise FlError("study hyperparameters must be positive")
        if len(self.init_seed) != 32:
            raise FlError("init_seed must be 32 bytes")

    @property
    def model_dim(self) -> int:
        return self.schema.dim + 1

    def canonical(self):
        return {
            "study_id": self.study_id,
            "schema": self.schema.canonical(),
            "local_epochs": self.local_epochs,
            "batch_size": self.batch_size,
            "lr_local": float(self.lr_local),
            "lr_global": float(self.lr_global),
            "rounds": self.rounds,
            "reward_budget_per_round": self.reward_budget_per_round,
            "evaluator_fee_per_round": self.evaluator_fee_per_round,
            "validation_cid": bytes(self.validation_cid),
            "init_seed": self.init_seed,
            "quorum": self.quorum,
            "kappa": float(self.kappa),
        }

    def to_bytes(self) -> bytes:
        return codec.encode(self.canonical())

    @classmethod
    def from_bytes(cls, data: bytes) -> StudyConfig:
        obj = codec.decode(data)
        obj = dict(obj)
        obj["schema"] = StudySchema.from_canonical(obj["schema"])
        return cls(**obj)


@dataclass
class LocalUpdate:
    patient: Did
    round: int
    delta: FixedVec
    n_samples: int
    w_local: np.ndarray | None = field(default=None, repr=False)


@dataclass
class MaskedUpdate:
    patient: Did
    round: int
    masked: FixedVec
    n_samples: int

    def to_bytes(self) -> bytes:
        return codec.encode([self.patient, self.round, self.masked.to_bytes(), self.n_samples])

    @classmethod
    def from_bytes(cls, data: bytes) -> MaskedUpdate:
        patient, rnd, masked, n = codec.decode(data)
        return cls(patient, rnd, FixedVec.from_bytes(masked), n)


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def logistic_loss(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood; ``X`` excludes the bias column."""
    if X.shape[0] == 0:
        return 0.0
    z = _augment(X) @ w
    # log(1+e^z) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def logistic_gradient(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    if X.shape[0] == 0:
        return np.zeros_like(w)
    A = _augment(X)
    return A.T @ (sigmoid(A @ w) - y) / X.shape[0]


def predict_proba(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return sigmoid(_augment(np.atleast_2d(X)) @ params.weights)


def init_model(config: StudyConfig) -> ModelParams:
    rng = np.random.default_rng(np.frombuffer(config.init_seed, dtype=np.uint32))
    w = rng.uniform(-0.01, 0.01, size=config.model_dim)
    w[-1] = 0.0
    return ModelParams(w)


def shuffle_seed(config: StudyConfig, patient: Did, round: int) -> np.ndarray:
    raw = hashlib.sha256(b"dhin/shuffle/" + config.init_seed + patient.id + struct.pack(">I", round)).digest()
    return np.frombuffer(raw, dtype=np.uint32)


def sgd(
    w: np.ndarray,
    data: FeatureMatrix,
    epochs: int,
    batch_size: int,
    lr: float,
    seed,
) -> np.ndarray:
    """Mini-batch gradient descent with a seeded per-epoch shuffle."""
    w = np.array(w, dtype=np.float64)
    n = data.rows
    if n == 0:
        return w
    rng = np.random.default_rng(seed)
    A = _augment(data.X)
    y = data.y.astype(np.float64)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            Ab = A[idx]
            w -= lr * (Ab.T @ (sigmoid(Ab @ w) - y[idx]) / len(idx))
    return w


def local_train(
    global_params: ModelParams,
    data: FeatureMatrix,
    config: StudyConfig,
    *,
    patient: Did,
    round: int,
) -> LocalUpdate:
    if data.rows and data.dim + 1 != global_params.dim:
        raise DimensionMismatch(f"data dim {data.dim} vs model dim {global_params.dim}")
    if global_params.dim != config.model_dim:
        raise DimensionMismatch(f"model dim {global_params.dim} vs config {config.model_dim}")
    w_final = sgd(
        global_params.weights,
        data,
        config.local_epochs,
        config.batch_size,
        config.lr_local,
        shuffle_seed(config, patient, round),
    )
    delta = quantize(data.rows * (w_final - global_params.weights))
    return LocalUpdate(patient, round, delta, data.rows, w_final)


def evaluate_model(params: ModelParams, data: FeatureMatrix) -> dict[str, float]:
    if data.rows and data.dim + 1 != params.dim:
        raise DimensionMismatch(f"data dim {data.dim} vs model dim {params.dim}")
    if data.rows == 0:
        return {"loss": 0.0, "accuracy": 0.0}
    p = predict_proba(params, data.X)
    predicted = (p >= 0.5).astype(np.uint8)
    return {
        "loss": logistic_loss(params.weights, data.X, data.y.astype(np.float64)),
        "accuracy": float(np.mean(predicted == data.y)),
    }


# ---------------------------------------------------------------------------
# Secure aggregation
# ---------------------------------------------------------------------------


def mask_seed(shared_secret: bytes, round: int, context: bytes = b"") -> bytes:
    return hashlib.sha256(
        b"dhin/mask/" + shared_secret + struct.pack(">I", round) + context
    ).digest()


def prg(seed: bytes, dim: int) -> np.ndarray:
    """Expand a 32-byte seed into ``dim`` uniform ring elements (SHAKE-256)."""
    return np.frombuffer(hashlib.shake_256(seed).digest(8 * dim), dtype="<u8").astype(np.uint64)


def mask_update(
    update: LocalUpdate,
    self_key: KeyPair,
    peers: list[Did],
    round: int,
    *,
    resolver: Resolver | None = None,
    context: bytes = b"",
) -> MaskedUpdate:
    """Add pairwise masks: +PRG for peers ordered after us, -PRG for those before.

    ``context`` (typically the study id) separates mask streams of
    different studies sharing the same pair of identities.
    """
    me = self_key.did
    if me not in peers:
        raise SelfNotInRoster(str(me))
    masked = update.delta.values.copy()
    for peer in sorted(set(peers)):
        if peer == me:
            continue
        stream = prg(mask_seed(key_agreement(self_key, peer, resolver), round, context), update.delta.dim)
        if me < peer:
            masked += stream
        else:
            masked -= stream
    return MaskedUpdate(me, round, FixedVec(masked), update.n_samples)


def aggregate(
    masked: list[MaskedUpdate], roster: list[Did] | None = None
) -> tuple[FixedVec, int]:
    expected = sorted(set(roster)) if roster is not None else sorted({m.patient for m in masked})
    if not masked:
        raise IncompleteRoster(expected)
    rounds = {m.round for m in masked}
    if len(rounds) != 1:
        raise RoundMismatch(f"submissions span rounds {sorted(rounds)}")
    present = {m.patient for m in masked}
    missing = [d for d in expected if d not in present]
    if missing:
        raise IncompleteRoster(missing)
    if len(present) != len(masked) or (roster is not None and present - set(expected)):
        raise FlError("duplicate or unexpected submissions")
    total = masked[0].masked
    for m in masked[1:]:
        total = total + m.masked
    return total, sum(m.n_samples for m in masked)


def apply_global(
    global_params: ModelParams, sum_delta: FixedVec, total_n: int, lr_global: float
) -> ModelParams:
    if total_n <= 0:
        raise ZeroParticipation("no samples contributed this round")
    if sum_delta.dim != global_params.dim:
        raise DimensionMismatch(f"{sum_delta.dim} != {global_params.dim}")
    return ModelParams(global_params.weights + lr_global * dequantize(sum_delta) / total_n)


def score_update(
    global_params: ModelParams,
    delta: FixedVec,
    n_samples: int,
    validation: FeatureMatrix,
    lr_global: float,
) -> float:
    """Validation-loss improvement from applying one patient's update alone."""
    candidate = global_params.weights + lr_global * dequantize(delta) / max(n_samples, 1)
    y = validation.y.astype(np.float64)
    base = logistic_loss(global_params.weights, validation.X, y)
    after = logistic_loss(candidate, validation.X, y)
    gain = base - after
    return gain if gain > 0 and math.isfinite(gain) else 0.0
