"""Dispute cases, evidence, votes and the JSON case-file schema."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any

JURY_SIZE = 17

TAXONOMY: dict[str, tuple[str, ...]] = {
    "Digital & Appliances": (
        "Mobile Phones",
        "Computers",
        "Cameras",
        "Major Appliances",
        "Small Appliances",
        "Smart Devices",
        "Digital Accessories",
    ),
    "Fashion & Bags": ("Clothing", "Footwear", "Bags & Luggage", "Hats", "Accessories"),
    "Home & Lifestyle": (
        "Furniture & Home Décor",
        "Kitchen & Daily Essentials",
        "Maternity & Baby Products",
        "Pet Supplies",
        "Sports & Outdoors",
        "Automotive Supplies",
        "Collectibles & Entertainment",
    ),
    "Virtual & Services": (
        "Digital Resources",
        "Gaming Accounts & Services",
        "Agency Services",
        "Local Services",
        "Tutorials & Courses",
    ),
    "Other": ("Uncategorized Secondhand Items",),
}
FALLBACK_SUBCATEGORY = "Uncategorized Secondhand Items"
SUB_TO_TOP = {sub: top for top, subs in TAXONOMY.items() for sub in subs}

# Evidence text may cite media as "[image:ID]", "[video:ID]" or "[media:ID]".
MEDIA_REF = re.compile(r"\[(?:image|video|media):([^\]\s]+)\]")


class CaseFormatError(ValueError):
    """A case document cannot be decoded into a DisputeCase."""


class Verdict(IntEnum):
    BUYER = 0
    SELLER = 1

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: Any) -> "Verdict":
        if isinstance(value, Verdict):
            return value
        if isinstance(value, str):
            key = value.strip().strip("\"'.").lower()
            if key == "buyer":
                return cls.BUYER
            if key == "seller":
                return cls.SELLER
        raise ValueError(f"not a verdict label: {value!r}")


@dataclass(frozen=True)
class CategoryLabel:
    top_level: str
    sub: str

    @classmethod
    def from_sub(cls, sub: str) -> "CategoryLabel":
        return cls(SUB_TO_TOP[sub], sub)

    @property
    def is_valid(self) -> bool:
        return SUB_TO_TOP.get(self.sub) == self.top_level


@dataclass(frozen=True)
class ChatTurn:
    role: str
    text: str


@dataclass(frozen=True)
class Price:
    amount: str  # decimal kept as text so files round-trip exactly
    currency: str


@dataclass(frozen=True)
class TransactionMeta:
    product_text: str
    chat_history: tuple[ChatTurn, ...] = ()
    category: CategoryLabel | None = None
    price: Price | None = None


@dataclass(frozen=True)
class MediaItem:
    media_id: str
    kind: str  # "image" | "video"
    uri: str = ""
    frame_count: int = 1
    duration_s: float | None = None
    surrogate_text: str | None = None


@dataclass(frozen=True)
class EvidencePiece:
    evidence_id: str
    text_claim: str = ""
    images: tuple[MediaItem, ...] = ()
    videos: tuple[MediaItem, ...] = ()

    @property
    def media(self) -> tuple[MediaItem, ...]:
        return self.images + self.videos

    @property
    def is_empty(self) -> bool:
        return not self.text_claim.strip() and not self.images and not self.videos


@dataclass(frozen=True)
class JurorDecision:
    verdict: Verdict
    rationale: str = ""


@dataclass(frozen=True)
class GroundTruthVotes:
    buyer_votes: int
    seller_votes: int
    # Optional per-juror rationales; used when distilling precedents.
    juror_decisions: tuple[JurorDecision, ...] = ()

    @property
    def winner(self) -> Verdict:
        return Verdict.SELLER if self.seller_votes > self.buyer_votes else Verdict.BUYER

    @property
    def total(self) -> int:
        return self.buyer_votes + self.seller_votes


@dataclass(frozen=True)
class DisputeCase:
    case_id: str
    meta: TransactionMeta
    buyer_evidence: tuple[EvidencePiece, ...]
    seller_evidence: tuple[EvidencePiece, ...] = ()
    ground_truth: GroundTruthVotes | None = None

    def evidence(self, side: str) -> tuple[EvidencePiece, ...]:
        if side == "buyer":
            return self.buyer_evidence
        if side == "seller":
            return self.seller_evidence
        raise ValueError(f"unknown side {side!r}")

    def text_claims(self, side: str) -> list[str]:
        return [e.text_claim for e in self.evidence(side) if e.text_claim]

    def all_media(self) -> list[MediaItem]:
        return [m for e in self.buyer_evidence + self.seller_evidence for m in e.media]


def difficulty_of(votes: GroundTruthVotes) -> int:
    """Vote margin |buyer - seller|; symmetric splits share a margin."""
    return abs(votes.buyer_votes - votes.seller_votes)


# --------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Issue:
    code: str
    message: str
    where: str = ""


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, code: str, message: str, where: str = "") -> None:
        self.issues.append(Issue(code, message, where))

    def extend(self, other: "ValidationReport") -> None:
        self.issues.extend(other.issues)

    def codes(self) -> list[str]:
        return [i.code for i in self.issues]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "issues": [{"code": i.code, "message": i.message, "where": i.where} for i in self.issues],
        }


def validate_case(case: DisputeCase, where: str = "") -> ValidationReport:
    """Structural and semantic checks. Reports problems instead of raising."""
    report = ValidationReport()
    loc = where or case.case_id

    if not case.case_id.strip():
        report.add("missing_field", "case_id is empty", loc)
    if not case.meta.product_text.strip():
        report.add("missing_field", "meta.product_text is empty", loc)
    for turn in case.meta.chat_history:
        if turn.role not in ("buyer", "seller"):
            report.add("bad_value", f"chat_history role {turn.role!r} is not buyer/seller", loc)
    if case.meta.category is not None and not case.meta.category.is_valid:
        cat = case.meta.category
        report.add("bad_value", f"category {cat.top_level!r}/{cat.sub!r} is not in the taxonomy", loc)
    if not case.buyer_evidence:
        report.add("missing_field", "buyer_evidence is empty", loc)

    media_ids: set[str] = set()
    for side in ("buyer", "seller"):
        seen: set[str] = set()
        for piece in case.evidence(side):
            piece_loc = f"{loc}:{side}:{piece.evidence_id}"
            if not piece.evidence_id:
                report.add("missing_field", f"{side} evidence without evidence_id", loc)
            elif piece.evidence_id in seen:
                report.add("duplicate_id", f"duplicate {side} evidence_id {piece.evidence_id!r}", piece_loc)
            seen.add(piece.evidence_id)
            if piece.is_empty:
                report.add("empty_evidence", "evidence piece has no text, images or videos", piece_loc)
            for item in piece.images:
                if item.kind != "image":
                    report.add("bad_value", f"media {item.media_id!r} listed under images has kind {item.kind!r}", piece_loc)
                elif item.frame_count != 1:
                    report.add("bad_value", f"image {item.media_id!r} has frame_count {item.frame_count}", piece_loc)
            for item in piece.videos:
                if item.kind != "video":
                    report.add("bad_value", f"media {item.media_id!r} listed under videos has kind {item.kind!r}", piece_loc)
                if item.frame_count < 0:
                    report.add("bad_value", f"video {item.media_id!r} has negative frame_count", piece_loc)
            for item in piece.media:
                if not item.uri and not item.surrogate_text:
                    report.add("missing_field", f"media {item.media_id!r} has neither uri nor surrogate_text", piece_loc)
                if item.duration_s is not None and item.duration_s < 0:
                    report.add("bad_value", f"media {item.media_id!r} has negative duration", piece_loc)
                media_ids.add(item.media_id)

    for side in ("buyer", "seller"):
        for piece in case.evidence(side):
            for ref in MEDIA_REF.findall(piece.text_claim):
                if ref not in media_ids:
                    report.add(
                        "dangling_media",
                        f"dangling media reference {ref!r}",
                        f"{loc}:{side}:{piece.evidence_id}",
                    )

    gt = case.ground_truth
    if gt is not None:
        if gt.buyer_votes < 0 or gt.seller_votes < 0:
            report.add("vote_sum", "negative vote count", loc)
        if gt.total != JURY_SIZE:
            report.add("vote_sum", f"vote sum {gt.total} ≠ {JURY_SIZE}", loc)
        if gt.juror_decisions:
            if len(gt.juror_decisions) != gt.total:
                report.add("vote_sum", f"{len(gt.juror_decisions)} juror decisions for {gt.total} votes", loc)
            elif sum(d.verdict for d in gt.juror_decisions) != gt.seller_votes:
                report.add("bad_value", "juror decisions disagree with the vote split", loc)
    return report


# --------------------------------------------------------------------------
# JSON encoding


def _media_to_dict(m: MediaItem) -> dict:
    return {
        "media_id": m.media_id,
        "kind": m.kind,
        "uri": m.uri,
        "frame_count": m.frame_count,
        "duration_s": m.duration_s,
        "surrogate_text": m.surrogate_text,
    }


def _evidence_to_dict(e: EvidencePiece) -> dict:
    return {
        "evidence_id": e.evidence_id,
        "text_claim": e.text_claim,
        "images": [_media_to_dict(m) for m in e.images],
        "videos": [_media_to_dict(m) for m in e.videos],
    }


def case_to_dict(case: DisputeCase) -> dict:
    meta = case.meta
    gt = case.ground_truth
    return {
        "case_id": case.case_id,
        "meta": {
            "product_text": meta.product_text,
            "chat_history": [{"role": t.role, "text": t.text} for t in meta.chat_history],
            "category": None
            if meta.category is None
            else {"top_level": meta.category.top_level, "sub": meta.category.sub},
            "price": None if meta.price is None else {"amount": meta.price.amount, "currency": meta.price.currency},
        },
        "buyer_evidence": [_evidence_to_dict(e) for e in case.buyer_evidence],
        "seller_evidence": [_evidence_to_dict(e) for e in case.seller_evidence],
        "ground_truth": None
        if gt is None
        else {
            "buyer_votes": gt.buyer_votes,
            "seller_votes": gt.seller_votes,
            "juror_decisions": [{"verdict": d.verdict.label, "rationale": d.rationale} for d in gt.juror_decisions],
        },
    }


def encode_case(case: DisputeCase) -> str:
    return json.dumps(case_to_dict(case), ensure_ascii=False, indent=2) + "\n"


def _req(obj: dict, key: str, kind: type | tuple, where: str) -> Any:
    if not isinstance(obj, dict):
        raise CaseFormatError(f"{where}: expected an object")
    if key not in obj:
        raise CaseFormatError(f"{where}: missing key {key!r}")
    value = obj[key]
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise CaseFormatError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _opt(obj: dict, key: str, kind: type | tuple, where: str, default: Any = None) -> Any:
    value = obj.get(key, default)
    if value is None:
        return default
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise CaseFormatError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _media_from_dict(d: dict, where: str, default_kind: str) -> MediaItem:
    kind = _opt(d, "kind", str, where, default_kind)
    duration = _opt(d, "duration_s", (int, float), where)
    return MediaItem(
        media_id=_req(d, "media_id", str, where),
        kind=kind,
        uri=_opt(d, "uri", str, where, ""),
        frame_count=_opt(d, "frame_count", int, where, 1),
        duration_s=None if duration is None else float(duration),
        surrogate_text=_opt(d, "surrogate_text", str, where),
    )


def _evidence_from_dict(d: dict, where: str) -> EvidencePiece:
    eid = _req(d, "evidence_id", str, where)
    where = f"{where}[{eid}]"
    images = _opt(d, "images", list, where, [])
    videos = _opt(d, "videos", list, where, [])
    return EvidencePiece(
        evidence_id=eid,
        text_claim=_opt(d, "text_claim", str, where, ""),
        images=tuple(_media_from_dict(m, f"{where}.images", "image") for m in images),
        videos=tuple(_media_from_dict(m, f"{where}.videos", "video") for m in videos),
    )


def case_from_dict(d: dict) -> DisputeCase:
    if not isinstance(d, dict):
        raise CaseFormatError("case document must be a JSON object")
    case_id = _req(d, "case_id", str, "case")
    meta_d = _req(d, "meta", dict, "case")
    chat = []
    for i, turn in enumerate(_opt(meta_d, "chat_history", list, "meta", [])):
        chat.append(ChatTurn(_req(turn, "role", str, f"meta.chat_history[{i}]"), _req(turn, "text", str, f"meta.chat_history[{i}]")))
    cat_d = _opt(meta_d, "category", dict, "meta")
    category = None
    if cat_d is not None:
        category = CategoryLabel(_req(cat_d, "top_level", str, "meta.category"), _req(cat_d, "sub", str, "meta.category"))
    price_d = _opt(meta_d, "price", dict, "meta")
    price = None
    if price_d is not None:
        amount = _req(price_d, "amount", (str, int, float), "meta.price")
        price = Price(str(amount), _req(price_d, "currency", str, "meta.price"))
    meta = TransactionMeta(
        product_text=_req(meta_d, "product_text", str, "meta"),
        chat_history=tuple(chat),
        category=category,
        price=price,
    )
    buyer = tuple(_evidence_from_dict(e, "buyer_evidence") for e in _req(d, "buyer_evidence", list, "case"))
    seller = tuple(_evidence_from_dict(e, "seller_evidence") for e in _opt(d, "seller_evidence", list, "case", []))
    gt_d = _opt(d, "ground_truth", dict, "case")
    gt = None
    if gt_d is not None:
        decisions = []
        for i, jd in enumerate(_opt(gt_d, "juror_decisions", list, "ground_truth", [])):
            w = f"ground_truth.juror_decisions[{i}]"
            try:
                verdict = Verdict.parse(_req(jd, "verdict", str, w))
            except ValueError as exc:
                raise CaseFormatError(f"{w}: {exc}") from None
            decisions.append(JurorDecision(verdict, _opt(jd, "rationale", str, w, "")))
        gt = GroundTruthVotes(
            buyer_votes=_req(gt_d, "buyer_votes", int, "ground_truth"),
            seller_votes=_req(gt_d, "seller_votes", int, "ground_truth"),
            juror_decisions=tuple(decisions),
        )
    return DisputeCase(case_id, meta, buyer, seller, gt)


def decode_case(text: str) -> DisputeCase:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"invalid JSON: {exc}") from None
    return case_from_dict(doc)
