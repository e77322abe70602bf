"""Per-juror staged reasoning: focus extraction, select/perceive grounding,
adversarial analysis and the final verdict."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Sequence

from .cases import DisputeCase, EvidencePiece, Verdict
from .gateway import Gateway, attachments_for
from .prompts import SchemaError, SchemaFailure, call_with_schema, dumps, parse_bool

logger = logging.getLogger(__name__)

SIDES = ("buyer", "seller")
EMPTY_MARK = "(none)"


@dataclass(frozen=True)
class FocusExtraction:
    dispute_focus: str
    buyer_claim: str
    seller_claim: str

    def to_dict(self) -> dict:
        return {
            "buyer_core_claim": self.buyer_claim,
            "seller_core_claim": self.seller_claim,
            "dispute_focus": self.dispute_focus,
        }


@dataclass(frozen=True)
class Finding:
    evidence_id: str
    clues: tuple[dict, ...]
    argument: str
    support_strength: str
    media_paths: tuple[str, ...]
    sufficient: bool

    def to_dict(self) -> dict:
        return {
            "evidence_id": self.evidence_id,
            "pivotal_clues": list(self.clues),
            "argument": self.argument,
            "support_strength": self.support_strength,
            "media_paths": list(self.media_paths),
            "sufficient": self.sufficient,
        }


@dataclass(frozen=True)
class GroundingState:
    side: str
    selected_ids: tuple[str, ...] = ()
    findings: tuple[Finding, ...] = ()
    sufficient: bool = False

    @property
    def iterations(self) -> int:
        return len(self.selected_ids)

    @property
    def media_paths(self) -> list[str]:
        return [p for f in self.findings for p in f.media_paths]

    def describe(self) -> str:
        if not self.findings:
            return EMPTY_MARK
        return dumps([f.to_dict() for f in self.findings])

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "selected_ids": list(self.selected_ids),
            "findings": [f.to_dict() for f in self.findings],
            "sufficient": self.sufficient,
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class AnalysisReport:
    root_cause: str
    buyer_position: dict
    seller_position: dict
    conflict_focus: dict

    @classmethod
    def from_json(cls, obj: dict) -> "AnalysisReport":
        return cls(
            str(obj["dispute_root_cause"]),
            dict(obj["buyer_position"]),
            dict(obj["seller_position"]),
            dict(obj["conflict_focus"]),
        )

    def to_dict(self) -> dict:
        return {
            "dispute_root_cause": self.root_cause,
            "buyer_position": self.buyer_position,
            "seller_position": self.seller_position,
            "conflict_focus": self.conflict_focus,
        }


@dataclass(frozen=True)
class IndividualVerdict:
    verdict: Verdict
    reasons: tuple[str, ...]
    provenance: str = ""

    def to_dict(self) -> dict:
        return {"verdict": self.verdict.label, "reasons": list(self.reasons), "provenance": self.provenance}


@dataclass(frozen=True)
class IVCoTPass:
    """Outputs of stages I-III, computed once and reused across rounds."""

    focus: FocusExtraction
    buyer: GroundingState
    seller: GroundingState
    analysis: AnalysisReport
    degraded: tuple[str, ...] = ()

    def digest(self) -> str:
        blob = dumps(
            {
                "focus": self.focus.to_dict(),
                "buyer": self.buyer.to_dict(),
                "seller": self.seller.to_dict(),
                "analysis": self.analysis.to_dict(),
            }
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        return {
            "focus": self.focus.to_dict(),
            "grounding": {"buyer": self.buyer.to_dict(), "seller": self.seller.to_dict()},
            "analysis": self.analysis.to_dict(),
            "degraded": list(self.degraded),
        }


# --------------------------------------------------------------------------
# Stage I


def _chat_text(case: DisputeCase) -> str:
    if not case.meta.chat_history:
        return EMPTY_MARK
    return "\n".join(f"{t.role}: {t.text}" for t in case.meta.chat_history)


def _claims_text(case: DisputeCase, side: str) -> str:
    lines = [f"[{side} evidence {e.evidence_id}] {e.text_claim}" for e in case.evidence(side) if e.text_claim]
    return "\n".join(lines) or EMPTY_MARK


def case_overview(case: DisputeCase) -> str:
    meta = case.meta
    parts = []
    if meta.category is not None:
        parts.append(f"Category: {meta.category.top_level} / {meta.category.sub}")
    if meta.price is not None:
        parts.append(f"Price: {meta.price.amount} {meta.price.currency}")
    parts.append(f"Evidence rounds: buyer {len(case.buyer_evidence)}, seller {len(case.seller_evidence)}")
    parts.append(f"Chat history:\n{_chat_text(case)}")
    return "\n".join(parts)


def stage1_extract(case: DisputeCase, gateway: Gateway, system: str | None = None, retries: int = 3) -> FocusExtraction:
    out = call_with_schema(
        gateway,
        "stage1",
        {
            "case_overview": case_overview(case),
            "product_info": case.meta.product_text,
            "buyer_details": _claims_text(case, "buyer"),
            "seller_details": _claims_text(case, "seller"),
        },
        retries=retries,
        system=system,
    )
    return FocusExtraction(
        dispute_focus=out["dispute_focus"].strip(),
        buyer_claim=out["buyer_core_claim"].strip(),
        seller_claim=out["seller_core_claim"].strip(),
    )


# --------------------------------------------------------------------------
# Stage II


def _menu_line(side: str, e: EvidencePiece) -> str:
    return f"{side} evidence {e.evidence_id}: {e.text_claim or '(no text)'} [images: {len(e.images)}, videos: {len(e.videos)}]"


def resolve_selection(raw: Any, side: str, menu: Sequence[EvidencePiece]) -> EvidencePiece | None:
    """Map a model's ``selected_evidence_id`` onto an offered evidence piece."""
    text = str(raw).strip().strip("\"'[]#. ")
    text = re.sub(rf"^{side}\s+evidence\s*", "", text, flags=re.IGNORECASE).strip().lstrip("#")
    for e in menu:
        if e.evidence_id == text:
            return e
    lowered = text.lower()
    matches = [e for e in menu if e.evidence_id.lower() == lowered]
    return matches[0] if len(matches) == 1 else None


def _evidence_info(e: EvidencePiece, previous: Sequence[Finding]) -> str:
    lines = []
    for idx, m in enumerate(e.media):
        desc = f"{m.kind} {idx}: {m.uri or m.media_id}"
        if m.kind == "video":
            desc += f" (frames {m.frame_count}"
            if m.duration_s is not None:
                desc += f", {m.duration_s:g}s"
            desc += ")"
        if m.surrogate_text:
            desc += f" | visual summary: {m.surrogate_text}"
        lines.append(desc)
    if not lines:
        lines.append("no visual media; analyze the text description only")
    if previous:
        lines.append("Findings so far: " + dumps([f.to_dict() for f in previous]))
    return "\n".join(lines)


def _perceive(
    case: DisputeCase, side: str, focus: FocusExtraction, e: EvidencePiece, previous: Sequence[Finding], gateway: Gateway, system, retries
) -> Finding:
    out = call_with_schema(
        gateway,
        "stage2_perceive",
        {
            "perspective": side,
            "stage1_output": dumps(focus.to_dict()),
            "product_info": case.meta.product_text,
            "evidence_info": _evidence_info(e, previous),
            "evidence_texts": e.text_claim or EMPTY_MARK,
        },
        retries=retries,
        system=system,
        attachments=attachments_for(e.media),
    )
    clues = tuple(f for f in out["visual_findings"] if isinstance(f, dict))
    return Finding(
        evidence_id=e.evidence_id,
        clues=clues,
        argument=str(out["evidence_summary"]),
        support_strength=str(out["support_strength"]),
        media_paths=tuple(m.uri or m.media_id for m in e.media),
        sufficient=parse_bool(out["is_sufficient"]),
    )


def stage2_ground(
    case: DisputeCase,
    side: str,
    focus: FocusExtraction,
    gateway: Gateway,
    t_max: int = 3,
    system: str | None = None,
    retries: int = 3,
) -> GroundingState:
    """Select-perceive loop for one side.

    Stops when a perception reports sufficiency, the side's evidence is used
    up, or ``t_max`` iterations ran. Selected evidence is never re-offered.
    """
    if side not in SIDES:
        raise ValueError(f"unknown side {side!r}")
    evidence = list(case.evidence(side))
    selected: list[str] = []
    findings: list[Finding] = []
    sufficient = False

    while len(selected) < t_max:
        menu = [e for e in evidence if e.evidence_id not in selected]
        if not menu:
            break
        analyzed = [e for e in evidence if e.evidence_id in selected]
        bindings = {
            "perspective": side,
            "stage1_output": dumps(focus.to_dict()),
            "analyzed_text": "\n".join(f"{side} evidence {e.evidence_id}: {e.text_claim}" for e in analyzed) or EMPTY_MARK,
            "evidence_texts": "\n".join(_menu_line(side, e) for e in menu),
        }

        def check(obj, menu=menu):
            if resolve_selection(obj["selected_evidence_id"], side, menu) is None:
                raise SchemaError(f"selected_evidence_id {obj['selected_evidence_id']!r} is not an offered {side} evidence")

        reply = call_with_schema(gateway, "stage2_select", bindings, retries=retries, system=system)
        chosen = resolve_selection(reply["selected_evidence_id"], side, menu)
        if chosen is None:
            valid = ", ".join(f"{side} evidence {e.evidence_id}" for e in menu)
            note = f"The selected id {reply['selected_evidence_id']!r} is not available. Choose one of: {valid}."
            try:
                reply = call_with_schema(
                    gateway,
                    "stage2_select",
                    bindings,
                    retries=1,
                    system=system,
                    check=check,
                    extra_messages=[("assistant", dumps(reply)), ("user", note)],
                )
                chosen = resolve_selection(reply["selected_evidence_id"], side, menu)
            except SchemaFailure:
                chosen = None
            if chosen is None:
                chosen = menu[0]
                logger.info("%s: falling back to %s evidence %s", case.case_id, side, chosen.evidence_id)

        selected.append(chosen.evidence_id)
        finding = _perceive(case, side, focus, chosen, findings, gateway, system, retries)
        findings.append(finding)
        if finding.sufficient:
            sufficient = True
            break

    return GroundingState(side, tuple(selected), tuple(findings), sufficient)


# --------------------------------------------------------------------------
# Stage III


def _grounded_clues(buyer: GroundingState, seller: GroundingState) -> str:
    return dumps({"buyer": [f.to_dict() for f in buyer.findings], "seller": [f.to_dict() for f in seller.findings]})


def stage3_analyze(
    focus: FocusExtraction,
    buyer_state: GroundingState,
    seller_state: GroundingState,
    gateway: Gateway,
    case: DisputeCase | None = None,
    lite: bool = False,
    system: str | None = None,
    retries: int = 3,
) -> AnalysisReport:
    understood = dumps(focus.to_dict()) + "\n[Grounded clues] " + _grounded_clues(buyer_state, seller_state)
    if case is not None and not lite:
        understood += "\n[Chat history]\n" + _chat_text(case)

    attachments = []
    if case is not None:
        for state in (buyer_state, seller_state):
            pieces = {e.evidence_id: e for e in case.evidence(state.side)}
            for eid in state.selected_ids:
                attachments.extend(attachments_for(pieces[eid].media))

    buyer_paths = buyer_state.media_paths
    seller_paths = seller_state.media_paths
    out = call_with_schema(
        gateway,
        "stage3",
        {
            "stage1_output": understood,
            "buyer_media_paths": json.dumps(buyer_paths, ensure_ascii=False),
            "seller_media_paths": json.dumps(seller_paths, ensure_ascii=False),
            "buyer_media_count": len(buyer_paths),
            "seller_media_count": len(seller_paths),
        },
        retries=retries,
        system=system,
        attachments=attachments,
    )
    return AnalysisReport.from_json(out)


# --------------------------------------------------------------------------
# Stage IV


@dataclass(frozen=True)
class NeighborVerdict:
    juror_id: int
    verdict: Verdict
    reasons: tuple[str, ...]


@dataclass
class JudgeContext:
    ivcot: IVCoTPass
    juror_id: int = 0
    persona_prompt: str | None = None
    memory: Sequence[str] = ()
    neighbors: Sequence[NeighborVerdict] = ()
    social_consensus: str = ""
    mean_field: str = ""
    extras: dict = field(default_factory=dict)


def memory_block(norms: Sequence[str]) -> str:
    if not norms:
        return ""
    lines = "\n".join(f"- {n}" for n in norms)
    return f"\n\n[Verdict Guidelines from Precedents]\n{lines}"


def format_neighbors(neighbors: Sequence[NeighborVerdict]) -> str:
    if not neighbors:
        return f"{EMPTY_MARK} (first round)"
    parts = []
    for nb in neighbors:
        parts.append(f"juror #{nb.juror_id} (verdict={nb.verdict.label}): " + " | ".join(nb.reasons))
    return "\n".join(parts)


def stage4_judge(context: JudgeContext, gateway: Gateway, retries: int = 3) -> IndividualVerdict:
    p = context.ivcot
    system = (context.persona_prompt or "") + memory_block(context.memory)
    out = call_with_schema(
        gateway,
        "stage4",
        {
            "agent_id": context.juror_id,
            "social_consensus": context.social_consensus or f"{EMPTY_MARK} (first round)",
            "mean_field": context.mean_field or f"{EMPTY_MARK} (first round)",
            "agents_and_verdicts": format_neighbors(context.neighbors),
            "buyer_claim": p.focus.buyer_claim,
            "seller_claim": p.focus.seller_claim,
            "buyer_evidence_analysis": p.buyer.describe(),
            "seller_evidence_analysis": p.seller.describe(),
            "stage3_output": dumps(p.analysis.to_dict()),
        },
        retries=retries,
        system=system.strip() or None,
    )
    reasons = out["reasoning"]
    if isinstance(reasons, str):
        reasons = [reasons]
    reasons = tuple(r.strip() for r in reasons if isinstance(r, str) and r.strip())
    return IndividualVerdict(Verdict.parse(out["verdict"]), reasons, p.digest())


# --------------------------------------------------------------------------


def run_ivcot(
    case: DisputeCase,
    gateway: Gateway,
    t_max: int = 3,
    system: str | None = None,
    lite: bool = False,
    retries: int = 3,
) -> IVCoTPass:
    """Stages I-III. A failed stage degrades to empty output instead of aborting."""
    degraded = []
    try:
        focus = stage1_extract(case, gateway, system, retries)
    except SchemaFailure as exc:
        logger.warning("%s: stage I failed (%s)", case.case_id, exc)
        degraded.append("stage1")
        focus = FocusExtraction(EMPTY_MARK, EMPTY_MARK, EMPTY_MARK)

    states = {}
    for side in SIDES:
        try:
            states[side] = stage2_ground(case, side, focus, gateway, t_max, system, retries)
        except SchemaFailure as exc:
            logger.warning("%s: stage II (%s) failed (%s)", case.case_id, side, exc)
            degraded.append(f"stage2_{side}")
            states[side] = GroundingState(side)

    try:
        analysis = stage3_analyze(focus, states["buyer"], states["seller"], gateway, case, lite, system, retries)
    except SchemaFailure as exc:
        logger.warning("%s: stage III failed (%s)", case.case_id, exc)
        degraded.append("stage3")
        analysis = AnalysisReport(EMPTY_MARK, {}, {}, {})
    return IVCoTPass(focus, states["buyer"], states["seller"], analysis, tuple(degraded))
