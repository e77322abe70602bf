"""Jury consensus: personas, a directed follower graph, multi-round stage-IV
deliberation with collective summaries, early stopping and majority vote."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

from .cases import DisputeCase, Verdict
from .gateway import Gateway
from .ivcot import EMPTY_MARK, IndividualVerdict, IVCoTPass, JudgeContext, NeighborVerdict, run_ivcot, stage4_judge
from .precedents import EmptyBaseError, PrecedentBase, RetrievalResult, retrieve, select_memory
from .prompts import SchemaFailure, call_with_schema, render

logger = logging.getLogger(__name__)


class PoolExhausted(ValueError):
    pass


# --------------------------------------------------------------------------
# Network and personas


@dataclass(frozen=True)
class SocialNetwork:
    """Directed follower graph; edge (k, j) means juror k follows juror j."""

    juror_ids: tuple[int, ...]
    edges: frozenset[tuple[int, int]]
    seed: int | str = 0

    def following(self, k: int) -> list[int]:
        return sorted(j for (a, j) in self.edges if a == k)

    def to_dict(self) -> dict:
        return {"juror_ids": list(self.juror_ids), "edges": [list(e) for e in sorted(self.edges)], "seed": self.seed}


def build_network(n: int, out_degree: int = 3, seed: int | str = 0) -> SocialNetwork:
    """Each juror follows ``out_degree`` distinct others, sampled uniformly."""
    if n < 1:
        raise ValueError("a jury needs at least one juror")
    ids = tuple(range(n))
    if n == 1:
        return SocialNetwork(ids, frozenset(), seed)
    if not 1 <= out_degree < n:
        raise ValueError(f"out_degree must be in [1, {n - 1}], got {out_degree}")
    rng = random.Random(seed)
    edges = set()
    for k in ids:
        others = [j for j in ids if j != k]
        edges.update((k, j) for j in rng.sample(others, out_degree))
    return SocialNetwork(ids, frozenset(edges), seed)


@dataclass(frozen=True)
class JurorProfile:
    name: str
    gender: str
    age: str
    status: str
    role_description: str
    traits: str
    interest: str

    def __post_init__(self):
        empty = [k for k, v in asdict(self).items() if not str(v).strip()]
        if empty:
            raise ValueError(f"persona fields must be non-empty: {', '.join(empty)}")

    @classmethod
    def from_dict(cls, d: dict) -> "JurorProfile":
        return cls(**{k: str(d[k]) for k in cls.__dataclass_fields__})

    def to_dict(self) -> dict:
        return asdict(self)


def load_persona_pool(path: str | Path | None = None) -> list[JurorProfile]:
    if path is None:
        text = resources.files("jurysim").joinpath("data").joinpath("personas.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return [JurorProfile.from_dict(d) for d in json.loads(text)]


def assign_personas(pool: Sequence[JurorProfile], n: int, seed: int | str = 0) -> list[JurorProfile]:
    if len(pool) < n:
        raise PoolExhausted(f"persona pool holds {len(pool)} profiles, {n} needed")
    return random.Random(seed).sample(list(pool), n)


def persona_prompt(profile: JurorProfile, n_jurors: int) -> str:
    return render("persona", {**profile.to_dict(), "peer_count": max(n_jurors - 1, 0)})


@dataclass
class JurorState:
    juror_id: int
    profile: JurorProfile
    system_prompt: str
    memory: tuple[str, ...] = ()
    ivcot: IVCoTPass | None = None
    last_verdict: IndividualVerdict | None = None


# --------------------------------------------------------------------------
# Rounds


@dataclass(frozen=True)
class SummaryReport:
    key_arguments: str = ""
    debate_intensity: str = ""
    prevailing_orientation: str = ""

    @property
    def is_empty(self) -> bool:
        return not (self.key_arguments or self.debate_intensity or self.prevailing_orientation)

    @classmethod
    def from_json(cls, obj: dict) -> "SummaryReport":
        def text(v):
            return "; ".join(str(x) for x in v) if isinstance(v, list) else str(v)

        return cls(text(obj["key_arguments"]), text(obj["debate_intensity"]), text(obj["prevailing_orientation"]))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    verdicts: tuple[IndividualVerdict, ...]
    summary: SummaryReport
    buyer_votes: int
    seller_votes: int
    stopped_early: bool = False
    fallbacks: tuple[int, ...] = ()

    @property
    def n_jurors(self) -> int:
        return self.buyer_votes + self.seller_votes

    @property
    def consensus(self) -> float:
        return max(self.buyer_votes, self.seller_votes) / self.n_jurors

    def to_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "summary": self.summary.to_dict(),
            "buyer_votes": self.buyer_votes,
            "seller_votes": self.seller_votes,
            "consensus": self.consensus,
            "stopped_early": self.stopped_early,
            "fallbacks": list(self.fallbacks),
        }


def tally(verdicts: Sequence[Verdict]) -> tuple[int, int]:
    seller = sum(1 for v in verdicts if v == Verdict.SELLER)
    return len(verdicts) - seller, seller


def should_stop(record: RoundRecord, delta: float = 0.8) -> bool:
    """Strict threshold: stop only when the consensus share exceeds delta."""
    return record.consensus > delta


def aggregate_final(last: RoundRecord) -> Verdict:
    return Verdict.SELLER if last.seller_votes > last.buyer_votes else Verdict.BUYER


@dataclass
class SimulationConfig:
    jurors: int = 17
    rounds: int = 3
    t_max: int = 3
    memory_k: int = 3
    delta: float = 0.8
    out_degree: int = 3
    network_seed: int = 0
    persona_seed: int = 0
    fallback_seed: int = 0
    lite: bool = False
    schema_retries: int = 3

    def validate(self) -> "SimulationConfig":
        if self.jurors < 1:
            raise ValueError("jurors must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.memory_k < 1:
            raise ValueError("memory_k must be >= 1")
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must be in [0, 1]")
        if self.jurors > 1 and not 1 <= self.out_degree < self.jurors:
            raise ValueError(f"out_degree must be in [1, {self.jurors - 1}]")
        if self.schema_retries < 1:
            raise ValueError("schema_retries must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _fallback_verdict(juror: JurorState, case_id: str, seed: int) -> IndividualVerdict:
    if juror.last_verdict is not None:
        prev = juror.last_verdict
        return IndividualVerdict(prev.verdict, prev.reasons, "fallback:previous")
    coin = random.Random(f"{seed}:{case_id}:{juror.juror_id}").random()
    verdict = Verdict.SELLER if coin < 0.5 else Verdict.BUYER
    return IndividualVerdict(verdict, ("No valid verdict was produced; vote drawn by seeded coin.",), "fallback:coin")


def _case_content(case: DisputeCase) -> str:
    lines = [f"Product: {case.meta.product_text}"]
    lines += [f"Buyer claim: {c}" for c in case.text_claims("buyer")]
    lines += [f"Seller claim: {c}" for c in case.text_claims("seller")]
    return "\n".join(lines)


def _comments(verdicts: Sequence[IndividualVerdict]) -> str:
    return "\n".join(f"juror #{k} (verdict={v.verdict.label}): " + " | ".join(v.reasons) for k, v in enumerate(verdicts))


def summarize(
    case: DisputeCase, verdicts: Sequence[IndividualVerdict], previous: SummaryReport, gateway: Gateway, retries: int = 3
) -> SummaryReport:
    out = call_with_schema(
        gateway,
        "summary",
        {
            "content": _case_content(case),
            "comment": _comments(verdicts),
            "mf_text": EMPTY_MARK if previous.is_empty else json.dumps(previous.to_dict(), ensure_ascii=False, sort_keys=True),
        },
        retries=retries,
    )
    return SummaryReport.from_json(out)


def run_round(
    case: DisputeCase,
    jurors: Sequence[JurorState],
    network: SocialNetwork,
    summary: SummaryReport,
    gateway: Gateway,
    t: int,
    config: SimulationConfig | None = None,
) -> RoundRecord:
    """One deliberation round. Jurors are judged in id order; a juror whose
    stage-IV call fails keeps its previous vote (round 1: seeded coin)."""
    config = config or SimulationConfig()
    if t < 1:
        raise ValueError("rounds are numbered from 1")
    previous = {j.juror_id: j.last_verdict for j in jurors}
    verdicts: list[IndividualVerdict] = []
    fallbacks = []
    for juror in jurors:
        neighbors = []
        if t > 1:
            for j in network.following(juror.juror_id):
                prev = previous.get(j)
                if prev is not None:
                    neighbors.append(NeighborVerdict(j, prev.verdict, prev.reasons))
        context = JudgeContext(
            ivcot=juror.ivcot,
            juror_id=juror.juror_id,
            persona_prompt=juror.system_prompt,
            memory=juror.memory,
            neighbors=neighbors,
            social_consensus=summary.prevailing_orientation,
            mean_field=summary.debate_intensity,
        )
        try:
            verdict = stage4_judge(context, gateway, config.schema_retries)
        except SchemaFailure as exc:
            logger.warning("%s: juror %d round %d fell back (%s)", case.case_id, juror.juror_id, t, exc)
            verdict = _fallback_verdict(juror, case.case_id, config.fallback_seed)
            fallbacks.append(juror.juror_id)
        verdicts.append(verdict)

    for juror, verdict in zip(jurors, verdicts):
        juror.last_verdict = verdict

    try:
        new_summary = summarize(case, verdicts, summary, gateway, config.schema_retries)
    except SchemaFailure as exc:
        logger.warning("%s: summary for round %d failed (%s); keeping the previous one", case.case_id, t, exc)
        new_summary = summary
    b, s = tally([v.verdict for v in verdicts])
    return RoundRecord(t, tuple(verdicts), new_summary, b, s, False, tuple(fallbacks))


# --------------------------------------------------------------------------
# Whole simulation


@dataclass(frozen=True)
class SimulationResult:
    case_id: str
    config: dict
    network: SocialNetwork
    personas: tuple[JurorProfile, ...]
    memory: tuple[tuple[str, ...], ...]
    precedent: dict | None
    passes: tuple[IVCoTPass, ...]
    rounds: tuple[RoundRecord, ...]
    final_verdict: Verdict
    final_summary: SummaryReport
    tokens: dict
    audit: tuple[dict, ...] = field(default=())

    @property
    def final_split(self) -> tuple[int, int]:
        last = self.rounds[-1]
        return last.buyer_votes, last.seller_votes

    @property
    def n_jurors(self) -> int:
        return len(self.personas)

    def to_dict(self) -> dict:
        b, s = self.final_split
        return {
            "case_id": self.case_id,
            "final_verdict": self.final_verdict.label,
            "final_split": {"buyer": b, "seller": s},
            "rounds_used": len(self.rounds),
            "final_summary": self.final_summary.to_dict(),
            "tokens": self.tokens,
            "config": self.config,
            "network": self.network.to_dict(),
            "precedent": self.precedent,
            "jurors": [
                {"juror_id": k, "persona": p.to_dict(), "memory": list(m), "ivcot": iv.to_dict()}
                for k, (p, m, iv) in enumerate(zip(self.personas, self.memory, self.passes))
            ],
            "rounds": [r.to_dict() for r in self.rounds],
            "audit": list(self.audit),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n"


def _precedent_info(result: RetrievalResult) -> dict:
    return {
        "precedent_id": result.precedent.precedent_id,
        "similarity": result.similarity,
        "norms": list(result.guidelines.norms),
    }


def run_simulation(
    case: DisputeCase,
    config: SimulationConfig,
    gateway: Gateway,
    precedents: PrecedentBase | None = None,
    persona_pool: Sequence[JurorProfile] | None = None,
) -> SimulationResult:
    """Full jury run for one case. ``gateway`` should be private to the case
    so that its ledger and audit log describe this run only."""
    config.validate()
    n = config.jurors
    pool = persona_pool if persona_pool is not None else load_persona_pool()
    profiles = assign_personas(pool, n, config.persona_seed)
    network = build_network(n, config.out_degree, config.network_seed)

    retrieval = None
    if precedents is not None and len(precedents):
        try:
            retrieval = retrieve(precedents, case, gateway)
        except EmptyBaseError:
            retrieval = None

    jurors = []
    for k, profile in enumerate(profiles):
        memory = ()
        if retrieval is not None:
            memory = tuple(select_memory(profile, retrieval.guidelines, config.memory_k, gateway))
        system = persona_prompt(profile, n)
        ivcot = run_ivcot(case, gateway, config.t_max, system, config.lite, config.schema_retries)
        jurors.append(JurorState(k, profile, system, memory, ivcot))

    rounds: list[RoundRecord] = []
    summary = SummaryReport()
    for t in range(1, config.rounds + 1):
        record = run_round(case, jurors, network, summary, gateway, t, config)
        summary = record.summary
        if should_stop(record, config.delta):
            rounds.append(replace(record, stopped_early=t < config.rounds))
            break
        rounds.append(record)

    last = rounds[-1]
    return SimulationResult(
        case_id=case.case_id,
        config=config.to_dict(),
        network=network,
        personas=tuple(profiles),
        memory=tuple(j.memory for j in jurors),
        precedent=_precedent_info(retrieval) if retrieval else None,
        passes=tuple(j.ivcot for j in jurors),
        rounds=tuple(rounds),
        final_verdict=aggregate_final(last),
        final_summary=last.summary,
        tokens=gateway.ledger.to_dict(),
        audit=tuple(a.to_dict() for a in gateway.audit),
    )
