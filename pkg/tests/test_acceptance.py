"""The twelve acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line, printed in the terminal summary.
"""

from __future__ import annotations

import json

import numpy as np

from conftest import ACCEPTANCE_LINES, Net, seed
from dhin import cli, clinical, codec, fl, insurance, phr, sim
from dhin.contracts import EVALUATORS, STUDIES, EvaluatorRegistry, StudyRegistry
from dhin.fl import FixedVec
from dhin.identity import ClaimKind, Credential, generate_identity, verify_credential
from dhin.ledger import Block, ChainState, Context, ContractError, Transfer, _Working, call, replay
from dhin.phr import AccessDenied, NoSuchPolicy, NotOwner, PhrError, RecordKind, Right


def verdict(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# -- 1 ---------------------------------------------------------------------------


def test_01_secure_aggregation_exactness(net):
    keys = [net.key(f"agg{i}") for i in range(16)]
    rng = np.random.default_rng(1)
    failures = 0
    trials = 0
    for trial in range(100):
        size = 1 + trial % 16
        roster = keys[:size]
        dids = [k.did for k in roster]
        dim = int(rng.integers(1, 12))
        raw = [FixedVec(rng.integers(0, 2**64, size=dim, dtype=np.uint64)) for _ in roster]
        masked = [
            fl.mask_update(fl.LocalUpdate(k.did, trial, r, 1), k, dids, trial, resolver=net.resolver, context=b"acc")
            for k, r in zip(roster, raw)
        ]
        total, _ = fl.aggregate(masked, dids)
        expected = FixedVec.zeros(dim)
        for r in raw:
            expected = expected + r
        trials += 1
        failures += total != expected
    verdict(1, "masked ring-sum equals raw ring-sum", failures == 0, f"{trials} trials, roster 1..16, {failures} mismatches")


# -- 2 ---------------------------------------------------------------------------


def test_02_federated_matches_centralized(reference_run):
    world = reference_run.world
    fed = reference_run.report.rounds[-1].accuracy
    central = fl.evaluate_model(sim.centralized_oracle(world), world.test)["accuracy"]
    gap = abs(fed - central)
    ok = gap <= 0.02 and reference_run.elapsed < 60
    verdict(
        2,
        "federated within 2 points of centralized",
        ok,
        f"federated {fed:.4f}, centralized {central:.4f}, gap {100 * gap:.2f} pts, run {reference_run.elapsed:.1f}s",
    )


# -- 3 ---------------------------------------------------------------------------


def test_03_gradient_finite_differences():
    worst = 0.0
    h = 1e-6
    for point in range(10):
        rng = np.random.default_rng(300 + point)
        X = rng.normal(size=(64, 8))
        y = rng.integers(0, 2, 64).astype(float)
        w = rng.normal(size=9)
        g = fl.logistic_gradient(w, X, y)
        fd = np.array(
            [(fl.logistic_loss(w + h * e, X, y) - fl.logistic_loss(w - h * e, X, y)) / (2 * h) for e in np.eye(9)]
        )
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8))))
    verdict(3, "analytic gradient matches central differences", worst < 1e-4, f"max rel err {worst:.2e} over 10 points")


# -- 4 ---------------------------------------------------------------------------


def test_04_conservation_every_block(reference_run):
    genesis_supply = None
    checked = 0
    violations = []

    def on_block(chain):
        nonlocal genesis_supply, checked
        st = chain.state
        if genesis_supply is None:
            genesis_supply = sum(st.balances.values())
        reg = st.contracts[EVALUATORS]
        pool = st.contracts[insurance.INSURANCE]
        studies = st.contracts[STUDIES]
        stakes = sum(n.stake for n in reg.nfts.values())
        total = (
            sum(st.balances.values())
            + sum(s.escrow for s in studies.studies.values())
            + stakes
            + reg.treasury
            + pool.reserves
        )
        held_ok = all(c.held() == st.escrows.get(cid, 0) for cid, c in st.contracts.items())
        if total != genesis_supply or not held_ok or any(b < 0 for b in st.balances.values()):
            violations.append(chain.height)
        checked += 1

    replay(reference_run.chain.blocks, on_block=on_block)
    verdict(
        4,
        "wallets + escrows + stakes + treasury + reserves == genesis supply",
        checked == len(reference_run.chain.blocks) and not violations,
        f"{checked} blocks, supply {genesis_supply}, violations at {violations[:5]}",
    )


# -- 5 ---------------------------------------------------------------------------


def test_05_no_broker_reward_flow(reference_run):
    world = reference_run.world
    patients = {p.did for p in world.patients}
    evaluators = {k.did for k in world.evaluators}
    owner = world.owner.did
    problems = []
    payouts_total = 0
    refund_total = 0
    prev = {}

    def on_block(chain):
        nonlocal payouts_total, refund_total
        st = chain.state
        snap = (dict(st.balances), dict(st.escrows))
        if prev and chain.height > 0:
            before_bal, before_esc = prev["snap"]
            events = [e for r in chain.head.tx_results for e in r.decoded_events()]
            payouts, fees, refund = {}, {}, 0
            for topic, body in events:
                if topic == "RoundFinalized":
                    for d, v in body["payouts"].items():
                        payouts[d] = payouts.get(d, 0) + v
                elif topic == "EvaluatorFee":
                    fees[body["to"]] = fees.get(body["to"], 0) + body["amount"]
                elif topic == "StudyClosed":
                    refund += body["refund"]
            outflow = before_esc.get(STUDIES, 0) - st.escrows.get(STUDIES, 0)
            if any(t == "RoundFinalized" for t, _ in events):
                if not set(payouts) <= patients:
                    problems.append(f"non-patient payout at {chain.height}")
                if outflow != sum(payouts.values()) + refund:
                    problems.append(f"escrow outflow {outflow} unexplained at {chain.height}")
                if before_esc.get(EVALUATORS, 0) - st.escrows.get(EVALUATORS, 0) != sum(fees.values()):
                    problems.append(f"fees not treasury-funded at {chain.height}")
                for d in set(st.balances) | set(before_bal):
                    delta = st.balances.get(d, 0) - before_bal.get(d, 0)
                    if d in patients:
                        expected = payouts.get(d, 0)
                    elif d in evaluators:
                        expected = fees.get(d, 0)
                    elif d == owner:
                        expected = refund
                    else:
                        expected = 0
                    if delta != expected:
                        problems.append(f"{d} moved {delta}, expected {expected} at {chain.height}")
                payouts_total += sum(payouts.values())
                refund_total += refund
            elif outflow > 0:
                problems.append(f"study escrow drained outside finalize at {chain.height}")
        prev["snap"] = snap

    chain = replay(reference_run.chain.blocks, on_block=on_block)
    study = chain.contract(STUDIES).study(sim.STUDY_ID)
    consumed = study.deposited - study.refunded
    balanced = payouts_total + study.escrow == consumed and refund_total == study.refunded
    verdict(
        5,
        "every reward unit reaches a patient",
        balanced and not problems,
        f"payouts {payouts_total} + escrow {study.escrow} vs consumed {consumed}; {len(problems)} problems {problems[:3]}",
    )


# -- 6 ---------------------------------------------------------------------------


def test_06_monotone_data_advantage(reference_run):
    rep = reference_run.report
    rewards = rep.cumulative_rewards(10)
    big = [r for r, p in zip(rewards, reference_run.world.patients) if p.data.rows == 200]
    small = [r for r, p in zip(rewards, reference_run.world.patients) if p.data.rows == 50]
    ok = len(big) == 5 and len(small) == 15 and min(big) > max(small)
    verdict(6, "200-row patients out-earn 50-row patients by round 10", ok, f"min(200-row) {min(big)}, max(50-row) {max(small)}")


# -- 7 ---------------------------------------------------------------------------


def _harberger_study(net: Net):
    """Three NFTs taxed for 20 epochs with an evaluator-fee round in between."""
    names = [f"ev{i}" for i in range(3)]
    chain = net.chain({"owner": 10_000, **{n: 2_000 for n in names}}, tax_bps=100, epoch_length=1)
    evs = [net.key(n) for n in names]
    for e in evs:
        assert chain.execute(e, call(EVALUATORS, "mint", 1000, self_price=1000)).applied
    start = {n.nft_id: n.paid_through_epoch for n in chain.contract(EVALUATORS).nfts.values()}
    treasury0 = chain.contract(EVALUATORS).treasury
    for _ in range(10):
        chain.produce_block()
    for nft_id, e in zip(sorted(start), evs):
        assert chain.execute(e, call(EVALUATORS, "pay_tax", nft_id=nft_id, epoch=start[nft_id] + 10)).applied

    owner = net.key("owner")
    pats = [net.key(f"hp{i}") for i in range(3)]
    cfg = fl.StudyConfig(
        study_id="h",
        schema=fl.StudySchema("p", ("a",)),
        local_epochs=1,
        batch_size=1,
        lr_local=0.1,
        lr_global=1.0,
        rounds=1,
        reward_budget_per_round=30,
        evaluator_fee_per_round=7,
        validation_cid=bytes(32),
        init_seed=bytes(32),
        quorum=3,
    )
    assert chain.execute(owner, call(STUDIES, "create_study", 30, config=cfg.to_bytes(), global_cid=bytes(32))).applied
    for p in pats:
        assert chain.execute(p, call(STUDIES, "opt_in", study_id="h")).applied
    assert chain.execute(owner, call(STUDIES, "open_round", study_id="h")).applied
    for p in pats:
        assert chain.execute(p, call(STUDIES, "submit_commitment", study_id="h", round=1, cid=bytes(32), n_samples=1)).applied
    for e in evs:
        assert chain.execute(e, call(STUDIES, "submit_scores", study_id="h", round=1, scores=[1, 1, 1])).applied
    assert chain.execute(owner, call(STUDIES, "finalize_round", study_id="h", round=1)).applied

    while chain.height < max(start.values()) + 21:
        chain.produce_block()
    for nft_id, e in zip(sorted(start), evs):
        assert chain.execute(e, call(EVALUATORS, "pay_tax", nft_id=nft_id, epoch=start[nft_id] + 20)).applied
    return chain, evs, treasury0


def test_07_harberger_accounting(net):
    chain, evs, treasury0 = _harberger_study(net)
    reg = chain.contract(EVALUATORS)
    gain = reg.treasury - treasury0
    tax_ok = reg.tax_collected == 3 * 200 and gain == 3 * 200 - reg.fees_paid and reg.fees_paid == 21

    # forced sales at random prices: funded buyers always win, underfunded ones change nothing
    rng = np.random.default_rng(7)
    buyout_failures = 0
    trials = 60
    for t in range(trials):
        price = int(rng.integers(1, 5000))
        new_price = int(rng.integers(1, 5000))
        local = Net()
        seller, buyer = local.key("seller"), local.key("buyer")
        need = price + max(0, new_price - price)
        c = local.chain({"seller": price, "buyer": need + int(rng.integers(0, 3))})
        assert c.execute(seller, call(EVALUATORS, "mint", price, self_price=price)).applied
        root = c.state.root()
        short = c.execute(buyer, call(EVALUATORS, "buyout", need - 1, nft_id=1, new_price=new_price))
        unchanged = not short.applied and c.state.root() == root
        buyer_before, seller_before = c.balance(buyer.did), c.balance(seller.did)
        r = c.execute(buyer, call(EVALUATORS, "buyout", need, nft_id=1, new_price=new_price))
        nft = c.contract(EVALUATORS).nfts[1]
        moved = (
            r.applied
            and nft.owner == buyer.did
            and nft.self_price == new_price
            and c.balance(seller.did) == seller_before + price
            # the stake travels with the token and is re-sized to the new price
            and c.balance(buyer.did) == buyer_before - new_price
            and nft.stake == new_price
            and c.contract(EVALUATORS).is_active(buyer.did)
            and not c.contract(EVALUATORS).is_active(seller.did)
        )
        buyout_failures += not (unchanged and moved)
    verdict(
        7,
        "Harberger tax and forced sale",
        tax_ok and buyout_failures == 0,
        f"tax {reg.tax_collected} for 3 NFTs x 20 epochs, fees {reg.fees_paid}, treasury +{gain}; "
        f"{trials - buyout_failures}/{trials} buyouts atomic",
    )


# -- 8 ---------------------------------------------------------------------------


def _small_chain_blocks(net: Net):
    chain = net.chain({"a": 500, "b": 500})
    a, b = net.key("a"), net.key("b")
    for i in range(4):
        chain.submit(a, Transfer(b.did, 5 + i))
        chain.submit(b, call(EVALUATORS, "mint", 100 + i, self_price=100 + i) if i == 0 else Transfer(a.did, i))
        chain.produce_block()
    return chain.blocks


def _flip(data: bytes, rng) -> bytes:
    i = int(rng.integers(0, len(data)))
    mask = int(rng.integers(1, 256))
    out = bytearray(data)
    out[i] ^= mask
    return bytes(out)


def test_08_tamper_and_forgery_rejection(net):
    doc, doc_cred = net.license("doc", ClaimKind.PhysicianLicense, 0, 1000)
    pat = net.key("pat")
    store = net.store("pat")
    phr.grant_access(store, pat, phr.policy(doc.did, phr.ALL_KINDS, Right, 0))
    rxs = []
    for i in range(5):
        rid = clinical.prescribe(doc, doc_cred, store, clinical.PrescriptionPayload(f"drug{i}", "1mg", 0, bytes([i]) * 16), net.registry)
        rxs.append(store.record(rid).to_bytes())
    creds = [doc_cred.to_bytes()] + [net.license(f"lic{i}", ClaimKind.PharmacyLicense)[1].to_bytes() for i in range(4)]
    blocks = _small_chain_blocks(net)
    assert replay(blocks).head.digest == blocks[-1].digest

    def rx_accepted(data: bytes) -> bool:
        try:
            r = phr.HealthRecord.from_bytes(data)
            return r.verify_signature(net.resolver)
        except Exception:
            return False

    def cred_accepted(data: bytes) -> bool:
        try:
            verify_credential(Credential.from_bytes(data), net.registry, 10, net.resolver)
            return True
        except Exception:
            return False

    def chain_accepted(block_bytes: list[bytes]) -> bool:
        try:
            replay([Block.from_bytes(b) for b in block_bytes])
            return True
        except Exception:
            return False

    assert all(rx_accepted(b) for b in rxs) and all(cred_accepted(c) for c in creds)
    block_bytes = [b.to_bytes() for b in blocks]
    assert chain_accepted(block_bytes)

    rng = np.random.default_rng(8)
    false_accepts = {"prescription": 0, "credential": 0, "block": 0}
    cases = 1000
    for case in range(cases):
        target = case % 3
        if target == 0:
            false_accepts["prescription"] += rx_accepted(_flip(rxs[int(rng.integers(0, len(rxs)))], rng))
        elif target == 1:
            false_accepts["credential"] += cred_accepted(_flip(creds[int(rng.integers(0, len(creds)))], rng))
        else:
            j = int(rng.integers(0, len(block_bytes)))
            tampered = list(block_bytes)
            tampered[j] = _flip(tampered[j], rng)
            false_accepts["block"] += chain_accepted(tampered)
    total = sum(false_accepts.values())
    verdict(8, "one-byte tampering always detected", total == 0, f"{cases} cases, false accepts {false_accepts}")


# -- 9 ---------------------------------------------------------------------------


def test_09_audit_completeness(net):
    rng = np.random.default_rng(9)
    owner = net.key("owner9")
    store = net.store("owner9")
    actors = [net.key(f"actor{i}") for i in range(4)]
    kinds = list(RecordKind)
    # oracle: (grantee, right, kind) -> expiry of the effective grant (None = open-ended)
    grants: dict[tuple, list[tuple[int, int | None]]] = {}

    def oracle_scope(did, right, t):
        return {
            k
            for (g, r, k), spans in grants.items()
            if g == did and r == right and any(s <= t and (e is None or t < e) for s, e in spans)
        }

    attempts = 0
    violations = 0
    ops = 500
    for _ in range(ops):
        t = store.now()
        op = int(rng.integers(0, 6))
        actor = actors[int(rng.integers(0, len(actors)))]
        chosen = {kinds[int(i)] for i in rng.choice(len(kinds), size=int(rng.integers(1, 4)), replace=False)}
        try:
            if op == 0:
                rights = [Right.Read] if rng.random() < 0.6 else [Right.Read, Right.Write]
                expires = None if rng.random() < 0.5 else t + int(rng.integers(1, 6))
                attempts += 1
                phr.grant_access(store, owner, phr.policy(actor.did, chosen, rights, t, expires))
                for r in rights:
                    for k in chosen:
                        grants.setdefault((actor.did, r, k), []).append((t, expires))
            elif op == 1:
                attempts += 1
                phr.revoke_access(store, owner, actor.did, chosen)
                for key, spans in grants.items():
                    if key[0] == actor.did and key[2] in chosen:
                        grants[key] = [(s, t if (e is None or e > t) else e) for s, e in spans]
            elif op == 2:
                attempts += 1
                scope = oracle_scope(actor.did, Right.Read, t)
                got = phr.read_records(store, actor, chosen)
                if not scope & chosen or any(r.kind not in scope & chosen for r in got):
                    violations += 1
            elif op == 3:
                kind = next(iter(sorted(chosen, key=lambda k: k.name)))
                author = owner if rng.random() < 0.3 else actor
                attempts += 1
                phr.write_record(store, author, phr.draft_record(store, author, kind, {"n": int(rng.integers(0, 100))}))
                if author != owner and kind not in oracle_scope(actor.did, Right.Write, t):
                    violations += 1
            elif op == 4:
                who = owner if rng.random() < 0.5 else actor
                attempts += 1
                phr.export_training_set(store, who, fl.StudySchema("p", ("n",)))
            else:
                attempts += 1
                phr.grant_access(store, actor, phr.policy(actor.did, chosen, [Right.Read], t))
                violations += 1  # a non-owner grant must never succeed
        except AccessDenied:
            if op == 2 and oracle_scope(actor.did, Right.Read, t) & chosen:
                violations += 1
        except (NotOwner, NoSuchPolicy, PhrError, fl.FlError):
            pass
        if rng.random() < 0.3:
            net.clock.advance(1)
    entries = len(phr.audit_log(store, owner))
    ok = entries == attempts and violations == 0
    verdict(9, "audit entries match gated attempts; reads stay in scope", ok, f"{ops} ops, {attempts} attempts, {entries} entries, {violations} violations")


# -- 10 --------------------------------------------------------------------------


def test_10_determinism(tmp_path, capsys, reference_run):
    digests, reports = [], []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["run", "reference", "--seed", "42", "--out", str(out)]) == 0
        digests.append(json.loads(capsys.readouterr().out)["determinism_digest"])
        reports.append((out / "report.json").read_bytes())
    same_chain = (tmp_path / "a" / "chain.jsonl").read_bytes() == (tmp_path / "b" / "chain.jsonl").read_bytes()
    ok = digests[0] == digests[1] and reports[0] == reports[1] and same_chain
    ok = ok and digests[0] == reference_run.report.determinism_digest
    verdict(10, "run reference --seed 42 is byte-identical twice", ok, f"digest {digests[0][:16]}...")


# -- 11 --------------------------------------------------------------------------


def test_11_insurance_cycle(reference_run):
    world = reference_run.world
    rep = reference_run.report
    genesis = replay(reference_run.chain.blocks[:1]).state.balances
    # patients start with empty wallets, so every premium they pay comes from FL rewards
    unfunded = all(genesis.get(p.did, 0) == 0 for p in world.patients)
    paid_claims = {c["holder"] for c in rep.claims if c["status"] == "Paid" and c["paid"] > 0}
    closed = [d for d in rep.cycle_closed_by if d in paid_claims]
    never_negative = min(rep.reserves_series) >= 0 and rep.final_reserves >= 0
    ok = unfunded and len(closed) >= 1 and never_negative
    verdict(
        11,
        "reward-funded premium later repaid by a verified claim",
        ok,
        f"{len(closed)} patients close the cycle, min reserves {min(rep.reserves_series)}",
    )


# -- 12 --------------------------------------------------------------------------


class Sandbox:
    """Contract state machines run without signatures or blocks, for volume."""

    def __init__(self, dids, funds):
        self.state = ChainState()
        self.state.contracts = {
            EVALUATORS: EvaluatorRegistry({"tax_rate_bps": 100, "epoch_length": 1}),
            STUDIES: StudyRegistry({}),
        }
        self.state.escrows = {EVALUATORS: 0, STUDIES: 0}
        self.state.balances = dict(zip(dids, funds))
        self.state.total_supply = sum(funds)
        self.height = 1

    def apply(self, sender, contract, method, payment=0, **args):
        w = _Working(self.state)
        if payment < 0 or w.balances.get(sender, 0) < payment:
            return None
        try:
            target = w.contract(contract)
            w.balances[sender] -= payment
            w.escrows[contract] += payment
            target.dispatch(Context(w, contract, sender, self.height, payment, None), method, args)
        except ContractError:
            return None
        self.state.balances = w.balances
        self.state.escrows = w.escrows
        self.state.contracts.update(w.contracts)
        return [(t, codec.decode(b)) for t, b in w.events]

    def conserved(self) -> bool:
        st = self.state
        if any(v < 0 for v in st.balances.values()) or any(v < 0 for v in st.escrows.values()):
            return False
        if sum(st.balances.values()) + sum(st.escrows.values()) != st.total_supply:
            return False
        return all(c.held() == st.escrows[cid] for cid, c in st.contracts.items())


def test_12_phase_machine_safety():
    dids = [generate_identity(seed(f"fuzz{i}"))[1].did for i in range(8)]
    owner, patients, evaluators = dids[0], dids[1:4], dids[4:7]
    cfg = fl.StudyConfig(
        study_id="f",
        schema=fl.StudySchema("p", ("a",)),
        local_epochs=1,
        batch_size=1,
        lr_local=0.1,
        lr_global=1.0,
        rounds=2,
        reward_budget_per_round=50,
        evaluator_fee_per_round=3,
        validation_cid=bytes(32),
        init_seed=bytes(32),
        quorum=2,
    ).to_bytes()
    rng = np.random.default_rng(12)
    sequences = 10_000
    calls = accepted = 0
    bad = {"negative escrow": 0, "over budget": 0, "unstaked score": 0, "conservation": 0}
    for _ in range(sequences):
        box = Sandbox(dids, [1000, 0, 0, 0, 400, 400, 400, 400])
        paid_total = 0
        deposit = 0
        for _ in range(int(rng.integers(5, 40))):
            sender = dids[int(rng.integers(0, len(dids)))]
            roll = int(rng.integers(0, 14))
            rnd = int(rng.integers(0, 4))
            studies = box.state.contracts[STUDIES]
            reg = box.state.contracts[EVALUATORS]
            st = studies.studies.get("f")
            if st is not None and st.current is not None and rng.random() < 0.7:
                rnd = st.current.round
            budget_before = st.current.budget if st is not None and st.current is not None else 0
            if roll == 0:
                pay = int(rng.choice([99, 100, 150]))
                ev = box.apply(owner if rng.random() < 0.8 else sender, STUDIES, "create_study", pay, config=cfg, global_cid=bytes(32))
                if ev:
                    deposit = pay
            elif roll in (1, 2):
                ev = box.apply(patients[int(rng.integers(0, 3))] if rng.random() < 0.8 else sender, STUDIES, "opt_in", study_id="f")
            elif roll == 3:
                ev = box.apply(sender, STUDIES, "opt_out", study_id="f")
            elif roll == 4:
                ev = box.apply(owner if rng.random() < 0.8 else sender, STUDIES, "open_round", study_id="f")
            elif roll == 5:
                ev = box.apply(owner if rng.random() < 0.7 else sender, STUDIES, "abort_round", study_id="f", round=rnd)
            elif roll in (6, 7):
                p = patients[int(rng.integers(0, 3))] if rng.random() < 0.8 else sender
                ev = box.apply(p, STUDIES, "submit_commitment", study_id="f", round=rnd, cid=bytes(32), n_samples=int(rng.integers(0, 5)))
            elif roll in (8, 9):
                e = evaluators[int(rng.integers(0, 3))] if rng.random() < 0.7 else sender
                staked = reg.is_active(e)
                n = int(rng.integers(2, 5))
                scores = [int(v) for v in rng.integers(0, 4, size=n)]
                ev = box.apply(e, STUDIES, "submit_scores", study_id="f", round=rnd, scores=scores)
                if ev is not None and not staked:
                    bad["unstaked score"] += 1
            elif roll == 10:
                ev = box.apply(owner if rng.random() < 0.5 else sender, STUDIES, "finalize_round", study_id="f", round=rnd)
                if ev:
                    for topic, body in ev:
                        if topic == "RoundFinalized":
                            paid = sum(body["payouts"].values())
                            paid_total += paid
                            if paid > budget_before or paid_total > deposit:
                                bad["over budget"] += 1
            elif roll == 11:
                ev = box.apply(sender, EVALUATORS, "mint", int(rng.choice([0, 100])), self_price=100)
            elif roll == 12:
                nft_id = int(rng.integers(1, 4))
                nft = reg.nfts.get(nft_id)
                owner_of = nft.owner if nft is not None and rng.random() < 0.8 else sender
                ev = box.apply(owner_of, EVALUATORS, "pay_tax", nft_id=nft_id, epoch=int(rng.integers(0, box.height + 2)))
            else:
                nft_id = int(rng.integers(1, 4))
                ev = box.apply(sender, EVALUATORS, "buyout", int(rng.choice([100, 150])), nft_id=nft_id, new_price=int(rng.choice([100, 150])))
            calls += 1
            accepted += ev is not None
            box.height += int(rng.integers(0, 3))
            if any(v < 0 for v in box.state.escrows.values()) or any(
                s.escrow < 0 for s in box.state.contracts[STUDIES].studies.values()
            ):
                bad["negative escrow"] += 1
            if not box.conserved():
                bad["conservation"] += 1
    ok = not any(bad.values())
    verdict(12, "random contract-call sequences stay safe", ok, f"{sequences} sequences, {calls} calls, {accepted} accepted, {bad}")
