"""Acceptance gate: one test per criterion, each with its runtime bound.

The terminal summary prints a PASS/FAIL line per criterion id.
"""

import json
import os
import time
from collections import Counter
from dataclasses import replace
from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from jurysim.cases import EvidencePiece, JurorDecision, Verdict
from jurysim.cli import main
from jurysim.config import RunConfig
from jurysim.corpus import PartitionSpec, strata, stratified_partition
from jurysim.gateway import CallbackProvider, Gateway, MockProvider, RecordingProvider, sample_frames
from jurysim.ivcot import FocusExtraction, stage2_ground
from jurysim.jury import RoundRecord, SimulationConfig, SummaryReport, aggregate_final, load_persona_pool, run_simulation, should_stop
from jurysim.metrics import classification_metrics, cochran_q, paired_t, vote_regression
from jurysim.precedents import GuidelineSet, PrecedentBase, PrecedentRecord, build_base, retrieve, select_memory, standardized_text
from jurysim.synthetic import charging_case, random_cases, benchmark_corpus, write_cases

import oracles
from scripting import Script, TableEmbedder, brute_force_nearest, fence, record, replay, transcript_usage


class Clock:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.limit, f"took {self.elapsed:.2f}s, limit {self.limit}s"


# -------------------------------------------------------------- C1


@pytest.mark.criterion("C1", "deterministic replay of cmd_simulate over 5 cases (<10 s)")
def test_c1_deterministic_replay(tmp_path):
    cases = random_cases(5, seed=21)
    write_cases(cases, tmp_path / "corpus")
    defaults = RunConfig()
    rec = RecordingProvider(MockProvider(seed=3))
    for c in cases:
        run_simulation(c, defaults.simulation(), Gateway(rec, defaults.params()), None, load_persona_pool())
    rec.save(tmp_path / "transcript.jsonl")
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"provider": {"kind": "scripted", "transcript": str(tmp_path / "transcript.jsonl")}}))

    outputs = []
    with Clock(10):
        for run in ("a", "b"):
            out = tmp_path / run
            for c in cases:
                code = main(["simulate", str(tmp_path / "corpus" / f"{c.case_id}.json"), "--config", str(cfg), "--out", str(out), "--offline"])
                assert code == 0
            outputs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.json"))})
    assert len(outputs[0]) == 5
    assert outputs[0] == outputs[1]


# -------------------------------------------------------------- C2


def _round(buyer, seller):
    verdicts = tuple(JurorDecision(Verdict.BUYER) for _ in range(buyer)) + tuple(JurorDecision(Verdict.SELLER) for _ in range(seller))
    return RoundRecord(1, verdicts, SummaryReport(), buyer, seller)


@pytest.mark.criterion("C2", "consensus early stop on all 18 splits of 17 votes (<1 s)")
def test_c2_early_stop_exhaustive():
    with Clock(1):
        for seller in range(18):
            buyer = 17 - seller
            agree = max(buyer, seller)
            assert should_stop(_round(buyer, seller), 0.8) is (agree >= 14), (buyer, seller)
        assert should_stop(_round(2, 8), 0.8) is False  # exactly 0.8 continues


# -------------------------------------------------------------- C3


def _majority_oracle(votes):
    counts = Counter(votes)
    return max((Verdict.BUYER, Verdict.SELLER), key=lambda y: counts[y])


@pytest.mark.criterion("C3", "aggregation matches brute-force majority on all 2^5 vote vectors (<1 s)")
def test_c3_aggregation_oracle():
    with Clock(1):
        n = 0
        for bits in product((Verdict.BUYER, Verdict.SELLER), repeat=5):
            s = sum(1 for v in bits if v is Verdict.SELLER)
            assert aggregate_final(_round(5 - s, s)) is _majority_oracle(bits)
            n += 1
        assert n == 32


# -------------------------------------------------------------- C4


@pytest.mark.criterion("C4", "retrieval and memory selection match exhaustive cosine oracles (<5 s)")
def test_c4_retrieval_exactness():
    rng = np.random.default_rng(2024)
    with Clock(5):
        vectors = rng.normal(size=(200, 64)).astype(np.float32)
        # ties: five rows duplicated under other ids
        for src, dst in [(3, 150), (3, 151), (10, 199), (42, 43), (77, 7)]:
            vectors[dst] = vectors[src]
        base = PrecedentBase()
        items = []
        for i, v in enumerate(vectors):
            pid = f"p{i:03d}"
            decisions = tuple([JurorDecision(Verdict.BUYER)] * 8 + [JurorDecision(Verdict.SELLER)] * 9)
            base.insert(PrecedentRecord(pid, f"text {pid}", decisions, vector=v), GuidelineSet(pid, (f"{pid} rule 1", f"{pid} rule 2")))
            items.append((pid, v))

        case = charging_case()
        text = standardized_text(case)
        table = {}
        gateway = Gateway(CallbackProvider(lambda r: "", TableEmbedder(table)))
        queries = list(rng.normal(size=(45, 64))) + [vectors[i].astype(np.float64) * 3 for i in (3, 10, 42, 77, 150)]
        for q in queries:
            table[text] = q
            got = retrieve(base, case, gateway)
            ((want_id, want_sim),) = brute_force_nearest(q, items, top=1)
            assert got.precedent.precedent_id == want_id
            assert got.similarity == pytest.approx(want_sim, abs=1e-9)
            assert got.guidelines.precedent_id == want_id

        # the duplicated rows tie exactly; the smallest id wins
        table[text] = vectors[3]
        assert retrieve(base, case, gateway).precedent.precedent_id == "p003"
        table[text] = vectors[7]
        assert retrieve(base, case, gateway).precedent.precedent_id == "p007"

        # memory selection: persona vs 4 norms, with duplicated norm vectors
        for trial in range(50):
            persona = f"persona {trial}"
            norms = tuple(f"norm {trial}.{j}" for j in range(4))
            nv = rng.normal(size=(4, 64))
            if trial % 5 == 0:
                nv[2] = nv[1]
            table.update({persona: rng.normal(size=64), **{n: v for n, v in zip(norms, nv)}})
            for k in (1, 2, 3, 4):
                got = select_memory(persona, GuidelineSet("g", norms), k, gateway)
                order = sorted(range(4), key=lambda j: (-_cos(table[persona], nv[j]), j))
                assert got == [norms[j] for j in order[:k]]


def _cos(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


# -------------------------------------------------------------- C5


def _menu(prompt):
    import re

    return re.findall(r"(?:buyer|seller) evidence (\S+): [^\n]*\[images: \d+, videos: \d+\]", prompt)


def _grounding_script(sufficient_at=None):
    n = {"perceive": 0}

    def select(request):
        return fence({"selected_evidence_id": _menu(request.prompt_text)[-1], "reason": "r"})

    def perceive(request):
        n["perceive"] += 1
        done = sufficient_at is not None and n["perceive"] >= sufficient_at
        return fence({"visual_findings": [], "evidence_summary": "s", "support_strength": "weak", "is_sufficient": done, "sufficiency_reason": "r"})

    return Script(stage2_select=select, stage2_perceive=perceive)


@pytest.mark.criterion("C5", "select-perceive loop contract on scripted transcripts (<5 s)")
def test_c5_ivcot_loop_contract(tmp_path):
    focus = FocusExtraction("charging port", "no charge", "worked")
    base = charging_case()

    def pieces(n):
        return replace(base, buyer_evidence=tuple(EvidencePiece(f"b{i}", f"claim {i}") for i in range(n)))

    def run(case, side, sufficient_at, name):
        script = _grounding_script(sufficient_at)
        path = tmp_path / f"{name}.jsonl"
        live = record(script, lambda gw: stage2_ground(case, side, focus, gw, t_max=3), path)
        gw = replay(path)
        state = stage2_ground(case, side, focus, gw, t_max=3)
        assert state == live
        purposes = Counter(a.purpose for a in gw.audit)
        return state, purposes, script

    with Clock(5):
        # (a) single-evidence side
        state, calls, _ = run(base, "seller", None, "a")
        assert state.iterations == 1 and calls == {"stage2_select": 1, "stage2_perceive": 1}

        # (b) sufficiency at iteration 2
        state, calls, _ = run(pieces(3), "buyer", 2, "b")
        assert state.iterations == 2 and state.sufficient
        assert calls == {"stage2_select": 2, "stage2_perceive": 2}

        # (c) cap at T_max = 3
        state, calls, _ = run(pieces(5), "buyer", None, "c")
        assert state.iterations == 3 and calls == {"stage2_select": 3, "stage2_perceive": 3}

        # (d) no evidence_id is offered again once selected
        state, _, script = run(pieces(5), "buyer", None, "d")
        seen = set()
        for prompt, chosen in zip(script.prompts("stage2_select"), state.selected_ids):
            offered = set(_menu(prompt))
            assert not offered & seen
            seen.add(chosen)
        assert len(set(state.selected_ids)) == len(state.selected_ids)


# -------------------------------------------------------------- C6


@pytest.mark.criterion("C6", "metric values match hand-computed oracles (<1 s)")
def test_c6_metrics_oracles():
    from scipy import stats

    with Clock(1):
        acc, _, macro_f1, _, _ = classification_metrics(oracles.CONFUSION)
        assert acc == pytest.approx(oracles.CONFUSION_ACCURACY, abs=1e-9)
        assert macro_f1 == pytest.approx(oracles.CONFUSION_MACRO_F1, abs=1e-9)
        mae, rmse = vote_regression(oracles.ERRORS)
        assert mae == pytest.approx(oracles.ERRORS_MAE, abs=1e-9)
        assert rmse == pytest.approx(oracles.ERRORS_RMSE, abs=1e-9)
        q, p = cochran_q(oracles.COCHRAN)
        assert q == pytest.approx(oracles.COCHRAN_Q, abs=1e-9) and p == pytest.approx(oracles.COCHRAN_P, abs=1e-9)
        t, p = paired_t(oracles.PAIRED_A, oracles.PAIRED_B)
        assert t == pytest.approx(oracles.PAIRED_T, abs=1e-9)
        assert p == pytest.approx(2 * stats.t.sf(oracles.PAIRED_T, 4), abs=1e-9)


@pytest.mark.criterion("C6b", "RMSE of errors {2,8,3,8} equals the quoted 5.9896 within 1e-9")
@pytest.mark.xfail(strict=True, reason="sqrt((4+64+9+64)/4) = 5.93717...; 5.9896 would need a squared-error sum of 143.5")
def test_c6b_quoted_rmse():
    _, rmse = vote_regression(oracles.ERRORS)
    assert rmse == pytest.approx(oracles.ERRORS_RMSE_PRINTED, abs=1e-9)


# -------------------------------------------------------------- C7


@pytest.mark.criterion("C7", "stratified partition of a 6000-case corpus gives 3009/986/2005 (<5 s)")
def test_c7_partition_fidelity():
    with Clock(5):
        cases = benchmark_corpus(seed=0)
        assert len(cases) == 6000
        splits = stratified_partition(cases, PartitionSpec((3, 1, 2), seed=0))
        assert tuple(len(s) for s in splits) == (3009, 986, 2005)
        where = {c.case_id: i for i, split in enumerate(splits) for c in split}
        for members in strata(cases).values():
            got = Counter(where[c.case_id] for c in members)
            for i, w in enumerate((3, 1, 2)):
                assert abs(got[i] - Fraction(len(members) * w, 6)) <= 1


# -------------------------------------------------------------- C8


@pytest.mark.criterion("C8", "frame sampler exhaustive over 0..200 frames with cap 30 (<1 s)")
def test_c8_frame_sampler():
    with Clock(1):
        for count in range(201):
            out = sample_frames(count, 30)
            assert out == sorted(set(out))
            assert len(out) == min(count, 30)
            assert all(0 <= i < count for i in out)
            if count <= 30:
                assert out == list(range(count))


# -------------------------------------------------------------- C9


@pytest.mark.criterion("C9", "precedent closed loop and persisted retrieval round trip (<5 s)")
def test_c9_precedent_closed_loop(tmp_path):
    first_rules = ["When the listing promises full function, a failed charge test favors the buyer.", "Unboxing video with timestamps outweighs pre-shipment claims."]
    second_rules = ["Missing accessories listed in the ad count as misdescription.", "Buyer-caused damage shifts responsibility to the buyer."]
    with Clock(5):
        script = Script(reflect=[fence({"reflection_result": first_rules}), fence({"reflection_result": second_rules})])
        gateway = Gateway(CallbackProvider(script, MockProvider(dimension=64)))
        cases = random_cases(2, seed=8, with_rationales=True)
        from jurysim.precedents import record_from_case

        base = build_base([record_from_case(c) for c in cases], gateway)
        first, second = script.prompts("reflect")
        assert "None available." in first
        assert all(rule in second for rule in first_rules)
        assert base.guidelines(cases[0].case_id).norms == tuple(first_rules)

        base.save(tmp_path / "pb")
        loaded = PrecedentBase.load(tmp_path / "pb")
        assert loaded.digest() == base.digest()
        for c in random_cases(10, seed=99) + cases:
            a, b = retrieve(base, c, gateway), retrieve(loaded, c, gateway)
            assert (a.precedent.precedent_id, a.guidelines, a.similarity) == (b.precedent.precedent_id, b.guidelines, b.similarity)


# -------------------------------------------------------------- C10


@pytest.mark.criterion("C10", "round-cost accounting for a 17-juror 2-round run (<10 s)")
def test_c10_round_cost(tmp_path):
    case = charging_case()  # buyer 2 pieces, seller 1 piece

    def select(request):
        return fence({"selected_evidence_id": _menu(request.prompt_text)[0], "reason": "r"})

    def perceive(request):
        return fence({"visual_findings": [], "evidence_summary": "s", "support_strength": "weak", "is_sufficient": False, "sufficiency_reason": "r"})

    import re

    def judge(request):
        k = int(re.search(r"You are juror #(\d+)\.", request.prompt_text).group(1))
        return fence({"verdict": "seller" if k < 9 else "buyer", "reasoning": [f"juror {k}"]})

    script = Script(
        usage=(123, 45),
        stage1=lambda r: fence({"buyer_core_claim": "b", "seller_core_claim": "s", "dispute_focus": "charging"}),
        stage2_select=select,
        stage2_perceive=perceive,
        stage3=lambda r: fence({"dispute_root_cause": "x", "buyer_position": {}, "seller_position": {}, "conflict_focus": {}}),
        stage4=judge,
        summary=lambda r: fence({"key_arguments": "k", "debate_intensity": "d", "prevailing_orientation": "o"}),
    )
    config = SimulationConfig(jurors=17, rounds=2)
    path = tmp_path / "run.jsonl"
    with Clock(10):
        live = record(script, lambda gw: run_simulation(case, config, gw), path)
        assert len(live.rounds) == 2 and not live.rounds[-1].stopped_early

        per_pass = [1 + 2 * (p.buyer.iterations + p.seller.iterations) + 1 for p in live.passes]
        predicted = sum(c + 1 for c in per_pass) + 17 + 2
        assert per_pass == [1 + 2 * (2 + 1) + 1] * 17
        assert predicted == 17 * 9 + 17 + 2 == 172
        assert sum(script.calls.values()) == predicted
        assert live.tokens["generate_calls"] == predicted

        entries, prompt_tokens, completion_tokens = transcript_usage(path)
        assert entries == predicted
        assert (live.tokens["prompt_tokens"], live.tokens["completion_tokens"]) == (prompt_tokens, completion_tokens) == (123 * 172, 45 * 172)

        gw = replay(path)
        again = run_simulation(case, config, gw)
        assert gw.ledger.calls == predicted
        assert (gw.ledger.usage.prompt_tokens, gw.ledger.usage.completion_tokens) == (prompt_tokens, completion_tokens)
        assert again.to_json() == live.to_json()


# -------------------------------------------------------------- C11


@pytest.mark.live
@pytest.mark.criterion("C11", "live smoke against a configured HTTP endpoint (manual)")
def test_c11_live_smoke(tmp_path):
    cfg_path = os.environ.get("JURYSIM_LIVE_CONFIG")
    if not cfg_path:
        pytest.skip("set JURYSIM_LIVE_CONFIG to a config file with an http provider")
    case = tmp_path / "case.json"
    write_cases([charging_case()], tmp_path)
    case = tmp_path / "charging-001.json"
    assert main(["simulate", str(case), "--config", cfg_path, "--out", str(tmp_path / "out")]) == 0
    doc = json.loads((tmp_path / "out" / "charging-001.json").read_text())
    assert doc["final_verdict"] in ("buyer", "seller")
    assert doc["final_split"]["buyer"] + doc["final_split"]["seller"] == len(doc["jurors"])
    assert 1 <= doc["rounds_used"] <= doc["config"]["rounds"]
