"""Verdict precedent base: distilled guidelines indexed by embedding.

On disk a base is a directory holding ``manifest.json`` and ``vectors.bin``.
``vectors.bin`` is little-endian: uint32 count, uint32 dimension, then
count x dimension float32 values in row-major order (row i belongs to
``manifest["records"][i]``).
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cases import JURY_SIZE, DisputeCase, JurorDecision, Verdict
from .gateway import Gateway, cosine
from .prompts import SchemaFailure, call_with_schema

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class EmptyBaseError(LookupError):
    pass


def standardized_text(case: DisputeCase) -> str:
    """Product text, then buyer and seller claims, then the chat history."""
    parts = [case.meta.product_text]
    parts += case.text_claims("buyer")
    parts += case.text_claims("seller")
    parts += [f"{t.role}: {t.text}" for t in case.meta.chat_history]
    return "\n".join(p for p in parts if p)


@dataclass(frozen=True)
class PrecedentRecord:
    precedent_id: str
    case_text: str
    juror_decisions: tuple[JurorDecision, ...]
    core_dispute: str = ""
    claims: str = ""
    evidence_description: str = ""
    vector: np.ndarray | None = field(default=None, compare=False)

    @property
    def winner(self) -> Verdict:
        seller = sum(1 for d in self.juror_decisions if d.verdict == Verdict.SELLER)
        return Verdict.SELLER if seller > len(self.juror_decisions) - seller else Verdict.BUYER

    def views(self, side: Verdict) -> list[str]:
        return [d.rationale for d in self.juror_decisions if d.verdict == side and d.rationale]

    def to_dict(self) -> dict:
        return {
            "precedent_id": self.precedent_id,
            "case_text": self.case_text,
            "core_dispute": self.core_dispute,
            "claims": self.claims,
            "evidence_description": self.evidence_description,
            "juror_decisions": [{"verdict": d.verdict.label, "rationale": d.rationale} for d in self.juror_decisions],
        }

    @classmethod
    def from_dict(cls, d: dict, vector=None) -> "PrecedentRecord":
        return cls(
            precedent_id=d["precedent_id"],
            case_text=d["case_text"],
            juror_decisions=tuple(JurorDecision(Verdict.parse(j["verdict"]), j.get("rationale", "")) for j in d["juror_decisions"]),
            core_dispute=d.get("core_dispute", ""),
            claims=d.get("claims", ""),
            evidence_description=d.get("evidence_description", ""),
            vector=vector,
        )


def record_from_case(case: DisputeCase) -> PrecedentRecord:
    """Precedent seed from a labeled case. Without per-juror rationales the
    decisions are expanded from the vote split with empty rationales."""
    gt = case.ground_truth
    if gt is None:
        raise ValueError(f"case {case.case_id} has no ground truth")
    if gt.juror_decisions:
        decisions = gt.juror_decisions
    else:
        decisions = tuple(
            [JurorDecision(Verdict.BUYER)] * gt.buyer_votes + [JurorDecision(Verdict.SELLER)] * gt.seller_votes
        )
    claims = "Buyer: " + " ".join(case.text_claims("buyer")) + " Seller: " + " ".join(case.text_claims("seller"))
    surrogates = [m.surrogate_text for m in case.all_media() if m.surrogate_text]
    return PrecedentRecord(
        precedent_id=case.case_id,
        case_text=standardized_text(case),
        juror_decisions=tuple(decisions),
        core_dispute=case.meta.product_text,
        claims=claims.strip(),
        evidence_description="; ".join(surrogates) or f"{len(case.all_media())} media items",
    )


@dataclass(frozen=True)
class GuidelineSet:
    precedent_id: str
    norms: tuple[str, ...]

    def __post_init__(self):
        if not 2 <= len(self.norms) <= 4:
            raise ValueError(f"a guideline set holds 2 to 4 norms, got {len(self.norms)}")
        if not all(n.strip() for n in self.norms):
            raise ValueError("norms must be non-empty")


@dataclass(frozen=True)
class RetrievalResult:
    precedent: PrecedentRecord
    guidelines: GuidelineSet
    similarity: float


class PrecedentBase:
    """Exact linear-scan cosine index over precedent vectors."""

    def __init__(self, dimension: int | None = None, encoder: str = ""):
        self.dimension = dimension
        self.encoder = encoder
        self._records: dict[str, PrecedentRecord] = {}
        self._guidelines: dict[str, GuidelineSet] = {}
        self._lock = threading.Lock()
        self._matrix: np.ndarray | None = None
        self._ids: list[str] = []

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, precedent_id: str) -> bool:
        return precedent_id in self._records

    @property
    def ids(self) -> list[str]:
        return sorted(self._records)

    def record(self, precedent_id: str) -> PrecedentRecord:
        return self._records[precedent_id]

    def guidelines(self, precedent_id: str) -> GuidelineSet:
        return self._guidelines[precedent_id]

    def insert(self, record: PrecedentRecord, guidelines: GuidelineSet) -> None:
        """Add or replace (same precedent_id) a record with its guidelines."""
        if record.vector is None:
            raise ValueError(f"precedent {record.precedent_id} has no vector")
        vec = np.asarray(record.vector, dtype=np.float32).reshape(-1)
        with self._lock:
            if self.dimension is None:
                self.dimension = vec.shape[0]
            if vec.shape[0] != self.dimension:
                raise ValueError(f"vector dimension {vec.shape[0]} != base dimension {self.dimension}")
            if not np.any(vec):
                raise ValueError(f"precedent {record.precedent_id} has a zero vector")
            self._records[record.precedent_id] = replace(record, vector=vec)
            self._guidelines[record.precedent_id] = guidelines
            self._matrix = None

    def _index(self) -> tuple[list[str], np.ndarray]:
        with self._lock:
            if self._matrix is None:
                self._ids = sorted(self._records)
                if self._ids:
                    m = np.stack([self._records[i].vector for i in self._ids]).astype(np.float64)
                    m /= np.max(np.abs(m), axis=1, keepdims=True)
                    self._matrix = m / np.linalg.norm(m, axis=1, keepdims=True)
                else:
                    self._matrix = np.zeros((0, self.dimension or 0))
            return self._ids, self._matrix

    def nearest(self, vector: Sequence[float], top: int = 1) -> list[tuple[str, float]]:
        """The ``top`` most similar precedent ids, ties broken by smaller id."""
        ids, matrix = self._index()
        if not ids:
            raise EmptyBaseError("precedent base is empty")
        q = np.asarray(vector, dtype=np.float64).reshape(-1)
        if q.shape[0] != matrix.shape[1]:
            raise ValueError(f"query dimension {q.shape[0]} != base dimension {matrix.shape[1]}")
        scale = np.max(np.abs(q))
        if scale == 0:
            raise ValueError("query vector is zero")
        q = q / scale
        sims = np.clip(matrix @ (q / np.linalg.norm(q)), -1.0, 1.0)
        # ids are sorted, so a stable sort on -sim keeps the smaller id first on ties
        order = np.argsort(-sims, kind="stable")[:top]
        return [(ids[i], float(sims[i])) for i in order]

    # ---------------------------------------------------------------- disk

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        ids = self.ids
        manifest = {
            "format_version": FORMAT_VERSION,
            "encoder": self.encoder,
            "dimension": self.dimension,
            "count": len(ids),
            "records": [self._records[i].to_dict() for i in ids],
            "guidelines": {i: list(self._guidelines[i].norms) for i in ids},
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        with open(directory / "vectors.bin", "wb") as fh:
            fh.write(struct.pack("<II", len(ids), self.dimension or 0))
            for i in ids:
                fh.write(np.asarray(self._records[i].vector, dtype="<f4").tobytes())
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "PrecedentBase":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported precedent base format {manifest.get('format_version')!r}")
        raw = (directory / "vectors.bin").read_bytes()
        count, dim = struct.unpack_from("<II", raw, 0)
        if count != manifest["count"] or count != len(manifest["records"]):
            raise ValueError("vectors.bin and manifest.json disagree on the record count")
        if count and dim != manifest["dimension"]:
            raise ValueError("vectors.bin and manifest.json disagree on the dimension")
        expected = 8 + 4 * count * dim
        if len(raw) != expected:
            raise ValueError(f"vectors.bin has {len(raw)} bytes, expected {expected}")
        vectors = np.frombuffer(raw, dtype="<f4", offset=8).reshape(count, dim) if count else np.zeros((0, dim))
        base = cls(manifest["dimension"], manifest.get("encoder", ""))
        for row, rec in enumerate(manifest["records"]):
            record = PrecedentRecord.from_dict(rec, vectors[row].copy())
            base.insert(record, GuidelineSet(record.precedent_id, tuple(manifest["guidelines"][record.precedent_id])))
        return base

    def digest(self) -> str:
        h = hashlib.sha256()
        for i in self.ids:
            h.update(json.dumps(self._records[i].to_dict(), sort_keys=True, ensure_ascii=False).encode("utf-8"))
            h.update(json.dumps(list(self._guidelines[i].norms), ensure_ascii=False).encode("utf-8"))
            h.update(np.asarray(self._records[i].vector, dtype="<f4").tobytes())
        return h.hexdigest()


def _rules_text(prior: Sequence[GuidelineSet] | None) -> str:
    if not prior:
        return "None available."
    lines = []
    for g in prior:
        lines.extend(f"- {n}" for n in g.norms)
    return "\n" + "\n".join(lines)


def reflect_guidelines(
    record: PrecedentRecord, prior: Sequence[GuidelineSet] | None, gateway: Gateway, retries: int = 3
) -> GuidelineSet:
    """Distill 2-4 reusable norms from a precedent's juror opinions."""
    buyer_views = record.views(Verdict.BUYER)
    seller_views = record.views(Verdict.SELLER)
    n_buyer = sum(1 for d in record.juror_decisions if d.verdict == Verdict.BUYER)
    n_seller = len(record.juror_decisions) - n_buyer
    out = call_with_schema(
        gateway,
        "reflect",
        {
            "core_dispute": record.core_dispute or record.case_text,
            "claims": record.claims,
            "evidence_description": record.evidence_description,
            "buyer_views": f"{n_buyer} jurors for the buyer: " + (" | ".join(buyer_views) or "(no rationales)"),
            "seller_views": f"{n_seller} jurors for the seller: " + (" | ".join(seller_views) or "(no rationales)"),
            "winner": record.winner.label,
            "rules_text": _rules_text(prior),
        },
        retries=retries,
    )
    return GuidelineSet(record.precedent_id, tuple(r.strip() for r in out["reflection_result"]))


def retrieve(base: PrecedentBase, case: DisputeCase, gateway: Gateway) -> RetrievalResult:
    """The single most similar precedent and its guidelines."""
    if len(base) == 0:
        raise EmptyBaseError("precedent base is empty")
    (query,) = gateway.embed([standardized_text(case)])
    ((pid, sim),) = base.nearest(query, top=1)
    return RetrievalResult(base.record(pid), base.guidelines(pid), sim)


def persona_text(persona) -> str:
    return "; ".join(
        [persona.name, persona.gender, str(persona.age), persona.status, persona.role_description, persona.traits, persona.interest]
    )


def rank_norms(persona_vec: Sequence[float], norm_vecs: Sequence[Sequence[float]]) -> list[int]:
    """Norm indices by descending cosine to the persona vector; ties by index."""
    sims = [cosine(persona_vec, v) for v in norm_vecs]
    return sorted(range(len(sims)), key=lambda i: (-sims[i], i))


def select_memory(persona, guidelines: GuidelineSet, k: int, gateway: Gateway) -> list[str]:
    """Top-k norms most similar to the persona."""
    if k < 1:
        raise ValueError("k must be >= 1")
    text = persona if isinstance(persona, str) else persona_text(persona)
    vectors = gateway.embed([text, *guidelines.norms])
    order = rank_norms(vectors[0], vectors[1:])
    return [guidelines.norms[i] for i in order[: min(k, len(order))]]


def build_base(
    records: Iterable[PrecedentRecord],
    gateway: Gateway,
    top_m: int = 3,
    base: PrecedentBase | None = None,
    retries: int = 3,
) -> PrecedentBase:
    """Grow a base in input order; each reflection sees its nearest priors' norms."""
    base = base if base is not None else PrecedentBase()
    for record in records:
        try:
            if len(record.juror_decisions) != JURY_SIZE:
                logger.warning("precedent %s has %d juror decisions", record.precedent_id, len(record.juror_decisions))
            (vector,) = gateway.embed([record.case_text])
            prior = None
            if len(base):
                prior = [base.guidelines(pid) for pid, _ in base.nearest(vector, top=top_m)]
            guidelines = reflect_guidelines(record, prior, gateway, retries)
            base.insert(replace(record, vector=vector), guidelines)
        except (SchemaFailure, ValueError) as exc:
            logger.warning("skipping precedent %s: %s", record.precedent_id, exc)
    return base
