"""Deterministic single-producer simulated blockchain.

Wallet balances and contract escrows are integer token units; nothing is minted
after genesis. Contracts are registered Python classes instantiated from the
genesis block, so any copy of the chain can be replayed from block 0 and
checked state root by state root.
"""

from __future__ import annotations

import copy
import inspect
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, ClassVar, Iterable, Union

from dhin import codec
from dhin.identity import Did, DidDocument, KeyPair, Resolver, UnknownDid, sign, verify

ZERO_DIGEST = bytes(32)
APPLIED = "Applied"
REJECTED = "Rejected"


class LedgerError(Exception):
    pass


class ChainInvalid(LedgerError):
    pass


class ContractError(Exception):
    """Raised by contract code; reverts the calling transaction only."""


class InvariantViolation(LedgerError):
    pass


# ---------------------------------------------------------------------------
# Transactions, receipts, blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transfer:
    to: Did
    amount: int

    def canonical(self):
        return ["Transfer", self.to, self.amount]


@dataclass(frozen=True)
class ContractCall:
    contract: str
    method: str
    args: bytes = codec.encode({})
    payment: int = 0

    def canonical(self):
        return ["ContractCall", self.contract, self.method, self.args, self.payment]

    def decoded_args(self) -> Any:
        return codec.decode(self.args)


TxKind = Union[Transfer, ContractCall]


def call(contract: str, method: str, payment: int = 0, **args: Any) -> ContractCall:
    """Build a ContractCall with canonically encoded keyword args."""
    return ContractCall(contract, method, codec.encode(args), payment)


def _kind_from_canonical(obj) -> TxKind:
    if not isinstance(obj, list) or not obj:
        raise codec.DecodeError("malformed tx kind")
    if obj[0] == "Transfer" and len(obj) == 3:
        _, to, amount = obj
        if isinstance(to, Did) and type(amount) is int:
            return Transfer(to, amount)
    if obj[0] == "ContractCall" and len(obj) == 5:
        _, contract, method, args, payment = obj
        if (
            isinstance(contract, str)
            and isinstance(method, str)
            and isinstance(args, bytes)
            and type(payment) is int
        ):
            return ContractCall(contract, method, args, payment)
    raise codec.DecodeError("malformed tx kind")


@dataclass(frozen=True)
class Transaction:
    nonce: int
    sender: Did
    kind: TxKind
    signature: bytes

    def signing_bytes(self) -> bytes:
        return codec.encode([self.nonce, self.sender, self.kind.canonical()])

    def canonical(self):
        return [self.nonce, self.sender, self.kind.canonical(), self.signature]

    @property
    def digest(self) -> bytes:
        return codec.digest(codec.encode(self.canonical()))

    @classmethod
    def create(cls, key: KeyPair, nonce: int, kind: TxKind) -> Transaction:
        unsigned = cls(nonce, key.did, kind, b"")
        return cls(nonce, key.did, kind, sign(key, unsigned.signing_bytes()))

    @classmethod
    def from_canonical(cls, obj) -> Transaction:
        if not isinstance(obj, list) or len(obj) != 4:
            raise codec.DecodeError("malformed transaction")
        nonce, sender, kind, signature = obj
        if type(nonce) is not int or not isinstance(sender, Did) or not isinstance(signature, bytes):
            raise codec.DecodeError("malformed transaction fields")
        return cls(nonce, sender, _kind_from_canonical(kind), signature)

    def to_json(self) -> dict:
        if isinstance(self.kind, Transfer):
            kind = {"type": "Transfer", "to": str(self.kind.to), "amount": self.kind.amount}
        else:
            kind = {
                "type": "ContractCall",
                "contract": self.kind.contract,
                "method": self.kind.method,
                "args": self.kind.args.hex(),
                "payment": self.kind.payment,
            }
        return {
            "nonce": self.nonce,
            "sender": str(self.sender),
            "kind": kind,
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> Transaction:
        k = obj["kind"]
        if k["type"] == "Transfer":
            kind: TxKind = Transfer(Did.parse(k["to"]), _int(k["amount"]))
        elif k["type"] == "ContractCall":
            kind = ContractCall(
                _str(k["contract"]), _str(k["method"]), bytes.fromhex(k["args"]), _int(k["payment"])
            )
        else:
            raise ValueError(f"unknown tx kind {k['type']!r}")
        return cls(_int(obj["nonce"]), Did.parse(obj["sender"]), kind, bytes.fromhex(obj["signature"]))


def _int(v) -> int:
    if type(v) is not int:
        raise ValueError(f"expected integer, got {v!r}")
    return v


def _str(v) -> str:
    if not isinstance(v, str):
        raise ValueError(f"expected string, got {v!r}")
    return v


@dataclass(frozen=True)
class Receipt:
    tx_digest: bytes
    status: str
    reason: str | None = None
    events: tuple[tuple[str, bytes], ...] = ()

    @property
    def applied(self) -> bool:
        return self.status == APPLIED

    def canonical(self):
        return [self.tx_digest, self.status, self.reason, [list(e) for e in self.events]]

    @classmethod
    def from_canonical(cls, obj) -> Receipt:
        if not isinstance(obj, list) or len(obj) != 4:
            raise codec.DecodeError("malformed receipt")
        tx_digest, status, reason, events = obj
        if not isinstance(tx_digest, bytes) or status not in (APPLIED, REJECTED):
            raise codec.DecodeError("malformed receipt fields")
        if reason is not None and not isinstance(reason, str):
            raise codec.DecodeError("malformed receipt reason")
        parsed = []
        for ev in events:
            if not (isinstance(ev, list) and len(ev) == 2 and isinstance(ev[0], str) and isinstance(ev[1], bytes)):
                raise codec.DecodeError("malformed event")
            parsed.append((ev[0], ev[1]))
        return cls(tx_digest, status, reason, tuple(parsed))

    def to_json(self) -> dict:
        return {
            "tx_digest": self.tx_digest.hex(),
            "status": self.status,
            "reason": self.reason,
            "events": [[topic, payload.hex()] for topic, payload in self.events],
        }

    @classmethod
    def from_json(cls, obj: dict) -> Receipt:
        return cls(
            bytes.fromhex(obj["tx_digest"]),
            _str(obj["status"]),
            obj["reason"],
            tuple((_str(t), bytes.fromhex(p)) for t, p in obj["events"]),
        )

    def decoded_events(self) -> list[tuple[str, Any]]:
        return [(topic, codec.decode(payload)) for topic, payload in self.events]


@dataclass(frozen=True)
class Block:
    height: int
    parent_digest: bytes
    txs: tuple[Transaction, ...]
    state_root: bytes
    tx_results: tuple[Receipt, ...]
    genesis: bytes | None = None

    def canonical(self):
        return [
            self.height,
            self.parent_digest,
            [tx.canonical() for tx in self.txs],
            self.state_root,
            [r.canonical() for r in self.tx_results],
            self.genesis,
        ]

    def to_bytes(self) -> bytes:
        return codec.encode(self.canonical())

    @property
    def digest(self) -> bytes:
        return codec.digest(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> Block:
        obj = codec.decode(data)
        if not isinstance(obj, list) or len(obj) != 6:
            raise codec.DecodeError("malformed block")
        height, parent, txs, root, results, genesis = obj
        if (
            type(height) is not int
            or not isinstance(parent, bytes)
            or not isinstance(root, bytes)
            or not isinstance(txs, list)
            or not isinstance(results, list)
            or not (genesis is None or isinstance(genesis, bytes))
        ):
            raise codec.DecodeError("malformed block fields")
        return cls(
            height,
            parent,
            tuple(Transaction.from_canonical(t) for t in txs),
            root,
            tuple(Receipt.from_canonical(r) for r in results),
            genesis,
        )

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "parent_digest": self.parent_digest.hex(),
            "txs": [tx.to_json() for tx in self.txs],
            "state_root": self.state_root.hex(),
            "tx_results": [r.to_json() for r in self.tx_results],
            "genesis": None if self.genesis is None else self.genesis.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> Block:
        genesis = obj.get("genesis")
        return cls(
            _int(obj["height"]),
            bytes.fromhex(obj["parent_digest"]),
            tuple(Transaction.from_json(t) for t in obj["txs"]),
            bytes.fromhex(obj["state_root"]),
            tuple(Receipt.from_json(r) for r in obj["tx_results"]),
            None if genesis is None else bytes.fromhex(genesis),
        )


# ---------------------------------------------------------------------------
# Contracts
# ---------------------------------------------------------------------------

CONTRACT_KINDS: dict[str, type[Contract]] = {}


def register_contract(cls: type[Contract]) -> type[Contract]:
    CONTRACT_KINDS[cls.kind] = cls
    return cls


class Contract:
    """Base class for on-ledger state machines.

    Public methods are ``call_<name>(ctx, **args)``. They either complete or
    raise ContractError; the ledger runs them against a private copy of the
    state, so a raise leaves committed state untouched.
    """

    kind: ClassVar[str] = ""

    def __init__(self, init_args: dict):
        self.init_args = init_args

    def held(self) -> int:
        """Token units this contract's own bookkeeping says it holds."""
        return 0

    def clone(self) -> Contract:
        return copy.deepcopy(self)

    def canonical(self) -> Any:
        raise NotImplementedError

    def dispatch(self, ctx: Context, method: str, args: Any) -> None:
        handler = getattr(self, "call_" + method, None)
        if handler is None:
            raise ContractError(f"UnknownMethod({method})")
        if not isinstance(args, dict) or not all(isinstance(k, str) for k in args):
            raise ContractError("BadArgs(expected keyword dict)")
        try:
            inspect.signature(handler).bind(ctx, **args)
        except TypeError as exc:
            raise ContractError(f"BadArgs({exc})") from None
        handler(ctx, **args)


@register_contract
class AnchorRegistry(Contract):
    """Latest digest per (sender, key); used for on-chain PHR policy anchors."""

    kind = "anchors"

    def __init__(self, init_args: dict):
        super().__init__(init_args)
        self.anchors: dict[tuple[Did, str], bytes] = {}

    def call_anchor(self, ctx: Context, key: str, digest: bytes) -> None:
        ctx.require_no_payment()
        if not isinstance(key, str) or not isinstance(digest, bytes) or len(digest) != 32:
            raise ContractError("BadArgs(anchor)")
        self.anchors[(ctx.sender, key)] = digest
        ctx.emit("Anchored", {"owner": ctx.sender, "key": key, "digest": digest})

    def latest(self, owner: Did, key: str) -> bytes | None:
        return self.anchors.get((owner, key))

    def canonical(self):
        return {k: v for k, v in self.anchors.items()}


class _Working:
    """Per-transaction overlay committed only if the tx applies."""

    def __init__(self, state: ChainState):
        self.base = state
        self.balances = dict(state.balances)
        self.escrows = dict(state.escrows)
        self.contracts: dict[str, Contract] = {}
        self.events: list[tuple[str, bytes]] = []

    def contract(self, contract_id: str) -> Contract:
        if contract_id not in self.contracts:
            try:
                self.contracts[contract_id] = self.base.contracts[contract_id].clone()
            except KeyError:
                raise ContractError(f"UnknownContract({contract_id})") from None
        return self.contracts[contract_id]


class Context:
    """What contract code may see and do during one call."""

    def __init__(
        self,
        working: _Working,
        contract_id: str,
        sender: Did,
        height: int,
        payment: int,
        resolver: Resolver,
        caller: str | None = None,
    ):
        self._w = working
        self.contract_id = contract_id
        self.sender = sender
        self.height = height
        self.payment = payment
        self.resolver = resolver
        self.caller = caller

    def require_no_payment(self) -> None:
        if self.payment:
            raise ContractError("UnexpectedPayment")

    def balance(self, did: Did) -> int:
        return self._w.balances.get(did, 0)

    def pay(self, to: Did, amount: int) -> None:
        """Move ``amount`` from this contract's escrow to wallet ``to``."""
        if amount < 0:
            raise ContractError("NegativeAmount")
        if amount == 0:
            return
        if self._w.escrows.get(self.contract_id, 0) < amount:
            raise ContractError("EscrowShortfall")
        self._w.escrows[self.contract_id] -= amount
        self._w.balances[to] = self._w.balances.get(to, 0) + amount

    def pull(self, did: Did, amount: int) -> bool:
        """Debit ``did``'s wallet into this contract; False if underfunded.

        Only used for standing mandates the wallet owner signed earlier
        (e.g. Harberger tax on a minted NFT); the contract enforces that.
        """
        if amount < 0:
            raise ContractError("NegativeAmount")
        if self._w.balances.get(did, 0) < amount:
            return False
        self._w.balances[did] = self._w.balances.get(did, 0) - amount
        self._w.escrows[self.contract_id] = self._w.escrows.get(self.contract_id, 0) + amount
        return True

    def transfer_to_contract(self, contract_id: str, amount: int) -> None:
        if amount < 0 or self._w.escrows.get(self.contract_id, 0) < amount:
            raise ContractError("EscrowShortfall")
        self._w.escrows[self.contract_id] -= amount
        self._w.escrows[contract_id] = self._w.escrows.get(contract_id, 0) + amount

    def emit(self, topic: str, payload: Any) -> None:
        self._w.events.append((topic, codec.encode(payload)))

    def view(self, contract_id: str) -> Contract:
        """Read access to another contract's state as of this tx."""
        return self._w.contract(contract_id)

    def invoke(self, contract_id: str, method: str, **args: Any) -> None:
        target = self._w.contract(contract_id)
        sub = Context(
            self._w, contract_id, self.sender, self.height, 0, self.resolver, caller=self.contract_id
        )
        target.dispatch(sub, method, args)


# ---------------------------------------------------------------------------
# Chain state and block production
# ---------------------------------------------------------------------------


@dataclass
class ChainState:
    balances: dict[Did, int] = field(default_factory=dict)
    nonces: dict[Did, int] = field(default_factory=dict)
    escrows: dict[str, int] = field(default_factory=dict)
    contracts: dict[str, Contract] = field(default_factory=dict)
    total_supply: int = 0
    _contract_digests: dict[str, bytes] = field(default_factory=dict)

    def contract_digest(self, contract_id: str) -> bytes:
        cached = self._contract_digests.get(contract_id)
        if cached is None:
            contract = self.contracts[contract_id]
            cached = codec.digest(codec.encode([contract.kind, contract.canonical()]))
            self._contract_digests[contract_id] = cached
        return cached

    def root(self) -> bytes:
        return codec.digest(
            codec.encode(
                {
                    "balances": {d: b for d, b in self.balances.items() if b},
                    "nonces": self.nonces,
                    "escrows": {c: e for c, e in self.escrows.items() if e},
                    "contracts": {c: self.contract_digest(c) for c in self.contracts},
                    "total_supply": self.total_supply,
                }
            )
        )


def _genesis_payload(allocations, contracts, documents) -> bytes:
    return codec.encode(
        {
            "allocations": {d: a for d, a in allocations.items()},
            "contracts": [[cid, kind, args] for cid, kind, args in contracts],
            "documents": [doc.canonical() for doc in documents],
        }
    )


def _state_from_genesis(payload: bytes) -> tuple[ChainState, list[DidDocument]]:
    obj = codec.decode(payload)
    if not isinstance(obj, dict) or set(obj) != {"allocations", "contracts", "documents"}:
        raise ChainInvalid("malformed genesis payload")
    allocations = obj["allocations"]
    state = ChainState()
    for did, amount in allocations.items():
        if not isinstance(did, Did) or type(amount) is not int or amount < 0:
            raise ChainInvalid("malformed genesis allocation")
        state.balances[did] = amount
    state.total_supply = sum(allocations.values())
    for entry in obj["contracts"]:
        contract_id, kind, args = entry
        if kind not in CONTRACT_KINDS:
            raise ChainInvalid(f"unknown contract kind {kind!r}")
        state.contracts[contract_id] = CONTRACT_KINDS[kind](args)
        state.escrows[contract_id] = 0
    documents = []
    for doc in obj["documents"]:
        did, public_key, created_at, agreement_key = doc
        documents.append(DidDocument(did, public_key, created_at, agreement_key))
    return state, documents


class Chain:
    def __init__(self, state: ChainState, genesis_block: Block, resolver: Resolver):
        self.state = state
        self.blocks: list[Block] = [genesis_block]
        self.pending: deque[Transaction] = deque()
        self.resolver = resolver
        self._pending_nonces: dict[Did, int] = {}

    # -- construction ------------------------------------------------------

    @classmethod
    def genesis(
        cls,
        allocations: dict[Did, int],
        *,
        contracts: Iterable[tuple[str, str, dict]] = (),
        resolver: Resolver | None = None,
        documents: Iterable[DidDocument] = (),
    ) -> Chain:
        from dhin.identity import default_resolver

        contracts = list(contracts)
        documents = sorted(documents, key=lambda d: d.did)
        payload = _genesis_payload(allocations, contracts, documents)
        state, _ = _state_from_genesis(payload)
        resolver = resolver or default_resolver
        for doc in documents:
            resolver.register(doc)
        block = Block(0, ZERO_DIGEST, (), state.root(), (), payload)
        return cls(state, block, resolver)

    # -- views ---------------------------------------------------------------

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.head.height

    @property
    def total_supply(self) -> int:
        return self.state.total_supply

    def balance(self, did: Did) -> int:
        return self.state.balances.get(did, 0)

    def escrow(self, contract_id: str) -> int:
        return self.state.escrows.get(contract_id, 0)

    def contract(self, contract_id: str) -> Contract:
        return self.state.contracts[contract_id]

    def next_nonce(self, did: Did) -> int:
        return max(self.state.nonces.get(did, 0), self._pending_nonces.get(did, 0)) + 1

    def receipt(self, tx_digest: bytes) -> Receipt | None:
        for block in reversed(self.blocks):
            for r in block.tx_results:
                if r.tx_digest == tx_digest:
                    return r
        return None

    # -- mutation ----------------------------------------------------------------

    def submit_tx(self, tx: Transaction) -> bytes:
        self.pending.append(tx)
        if type(tx.nonce) is int:
            self._pending_nonces[tx.sender] = max(self._pending_nonces.get(tx.sender, 0), tx.nonce)
        return tx.digest

    def submit(self, key: KeyPair, kind: TxKind) -> bytes:
        """Sign ``kind`` with the next free nonce and queue it."""
        return self.submit_tx(Transaction.create(key, self.next_nonce(key.did), kind))

    def execute(self, key: KeyPair, kind: TxKind) -> Receipt:
        """Submit one tx and produce a block for it (test/demo convenience)."""
        digest = self.submit(key, kind)
        block = self.produce_block()
        return next(r for r in block.tx_results if r.tx_digest == digest)

    def produce_block(self) -> Block:
        height = self.height + 1
        txs = []
        receipts = []
        while self.pending:
            tx = self.pending.popleft()
            txs.append(tx)
            receipts.append(self._apply(tx, height))
        self._pending_nonces.clear()
        self.check_conservation()
        block = Block(height, self.head.digest, tuple(txs), self.state.root(), tuple(receipts))
        self.blocks.append(block)
        return block

    def _apply(self, tx: Transaction, height: int) -> Receipt:
        digest = tx.digest
        try:
            ok = verify(tx.sender, tx.signing_bytes(), tx.signature, self.resolver)
        except (UnknownDid, codec.DecodeError, OverflowError, TypeError):
            ok = False
        if not ok:
            return Receipt(digest, REJECTED, "BadSignature")
        if tx.nonce <= self.state.nonces.get(tx.sender, 0):
            return Receipt(digest, REJECTED, "BadNonce")

        working = _Working(self.state)
        kind = tx.kind
        if isinstance(kind, Transfer):
            if kind.amount < 0:
                return Receipt(digest, REJECTED, "BadAmount")
            if working.balances.get(tx.sender, 0) < kind.amount:
                return Receipt(digest, REJECTED, "InsufficientFunds")
            working.balances[tx.sender] -= kind.amount
            working.balances[kind.to] = working.balances.get(kind.to, 0) + kind.amount
        else:
            if kind.payment < 0:
                return Receipt(digest, REJECTED, "BadAmount")
            if working.balances.get(tx.sender, 0) < kind.payment:
                return Receipt(digest, REJECTED, "InsufficientFunds")
            try:
                contract = working.contract(kind.contract)
                working.balances[tx.sender] = working.balances.get(tx.sender, 0) - kind.payment
                working.escrows[kind.contract] = working.escrows.get(kind.contract, 0) + kind.payment
                try:
                    args = codec.decode(kind.args)
                except codec.DecodeError as exc:
                    raise ContractError(f"BadArgs({exc})") from None
                ctx = Context(working, kind.contract, tx.sender, height, kind.payment, self.resolver)
                contract.dispatch(ctx, kind.method, args)
            except ContractError as exc:
                return Receipt(digest, REJECTED, f"ContractError({exc})")

        self._commit(working)
        self.state.nonces[tx.sender] = tx.nonce
        return Receipt(digest, APPLIED, None, tuple(working.events))

    def _commit(self, working: _Working) -> None:
        self.state.balances = working.balances
        self.state.escrows = working.escrows
        for contract_id, contract in working.contracts.items():
            self.state.contracts[contract_id] = contract
            self.state._contract_digests.pop(contract_id, None)

    def check_conservation(self) -> None:
        state = self.state
        if any(b < 0 for b in state.balances.values()) or any(e < 0 for e in state.escrows.values()):
            raise InvariantViolation("negative balance or escrow")
        total = sum(state.balances.values()) + sum(state.escrows.values())
        if total != state.total_supply:
            raise InvariantViolation(f"supply {state.total_supply} != held {total}")
        for contract_id, contract in state.contracts.items():
            if contract.held() != state.escrows.get(contract_id, 0):
                raise InvariantViolation(
                    f"contract {contract_id} books {contract.held()} but escrow is "
                    f"{state.escrows.get(contract_id, 0)}"
                )

    # -- serialization --------------------------------------------------------

    def to_jsonl(self) -> str:
        return "".join(json.dumps(b.to_json(), sort_keys=True) + "\n" for b in self.blocks)

    def digest(self) -> bytes:
        """Digest over every block, in order."""
        return codec.digest(b"".join(b.digest for b in self.blocks))


def blocks_from_jsonl(text: str) -> list[Block]:
    return [Block.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# Replay verification
# ---------------------------------------------------------------------------


def replay(
    blocks: list[Block],
    resolver: Resolver | None = None,
    on_block: Callable[[Chain], None] | None = None,
) -> Chain:
    """Rebuild the chain from its genesis block, raising ChainInvalid on divergence."""
    if not blocks:
        raise ChainInvalid("empty chain")
    first = blocks[0]
    if first.height != 0 or first.parent_digest != ZERO_DIGEST or first.txs or first.tx_results:
        raise ChainInvalid("malformed genesis block")
    if first.genesis is None:
        raise ChainInvalid("genesis block has no payload")
    try:
        state, documents = _state_from_genesis(first.genesis)
    except (codec.DecodeError, ValueError, TypeError) as exc:
        raise ChainInvalid(f"bad genesis payload: {exc}") from None
    local = Resolver()
    for doc in documents:
        local.register(doc)
    if resolver is not None:
        for doc in resolver.documents():
            if doc.did not in local:
                local.register(doc)
    if state.root() != first.state_root:
        raise ChainInvalid("genesis state root mismatch")
    chain = Chain(state, first, local)
    if on_block:
        on_block(chain)
    for stored in blocks[1:]:
        if stored.height != chain.height + 1:
            raise ChainInvalid(f"height gap at {stored.height}")
        if stored.parent_digest != chain.head.digest:
            raise ChainInvalid(f"broken hash link at height {stored.height}")
        if stored.genesis is not None:
            raise ChainInvalid(f"genesis payload in block {stored.height}")
        for tx in stored.txs:
            chain.submit_tx(tx)
        rebuilt = chain.produce_block()
        if rebuilt.to_bytes() != stored.to_bytes():
            raise ChainInvalid(f"replay diverges at height {stored.height}")
        if on_block:
            on_block(chain)
    return chain


def verify_chain(chain: Chain | list[Block], resolver: Resolver | None = None) -> bool:
    blocks = chain.blocks if isinstance(chain, Chain) else chain
    if resolver is None and isinstance(chain, Chain):
        resolver = chain.resolver
    try:
        replay(list(blocks), resolver)
    except Exception:  # any malformation means the record is not the one produced
        return False
    return True


def genesis(allocations: dict[Did, int], **kwargs) -> Chain:
    return Chain.genesis(allocations, **kwargs)
