"""Case corpora on disk: loading, split manifests, stratified partitioning,
descriptive statistics and category tagging."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import random
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .cases import (
    FALLBACK_SUBCATEGORY,
    SUB_TO_TOP,
    TAXONOMY,
    CaseFormatError,
    CategoryLabel,
    DisputeCase,
    ValidationReport,
    decode_case,
    difficulty_of,
    encode_case,
)
from .gateway import ChatMessage, ChatRequest, Gateway
from .prompts import render

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


class EmptyCorpusError(ValueError):
    pass


class UnlabeledCaseError(ValueError):
    pass


@dataclass(frozen=True)
class Corpus:
    cases: tuple[DisputeCase, ...]
    source_digest: str
    paths: dict = field(default_factory=dict, compare=False)  # case_id -> Path

    def __len__(self) -> int:
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases)

    def by_id(self) -> dict[str, DisputeCase]:
        return {c.case_id: c for c in self.cases}

    @classmethod
    def from_cases(cls, cases: Iterable[DisputeCase]) -> "Corpus":
        """In-memory corpus; the digest covers the canonical encodings."""
        cases = tuple(cases)
        ids = [c.case_id for c in cases]
        if len(set(ids)) != len(ids):
            dup = sorted(i for i, n in Counter(ids).items() if n > 1)
            raise ValueError(f"duplicate case ids: {', '.join(dup[:5])}")
        h = hashlib.sha256()
        for c in sorted(cases, key=lambda c: c.case_id):
            h.update(encode_case(c).encode("utf-8"))
        return cls(cases, h.hexdigest())


def case_files(path: str | Path) -> list[Path]:
    path = Path(path)
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise FileNotFoundError(f"no such corpus: {path}")
    return sorted(p for p in path.glob("*.json") if p.is_file())


def load_corpus(path: str | Path) -> tuple[Corpus, ValidationReport]:
    """Load every ``*.json`` case file under ``path`` (sorted by name).

    Undecodable files and duplicate ids are reported, not raised. The digest
    hashes file names and bytes, so reloading an unchanged directory gives
    the same value.
    """
    files = case_files(path)
    if not files:
        raise EmptyCorpusError(f"no cases in {path}")
    report = ValidationReport()
    cases, paths = [], {}
    h = hashlib.sha256()
    for f in files:
        raw = f.read_bytes()
        h.update(f.name.encode("utf-8") + b"\0" + hashlib.sha256(raw).digest())
        try:
            case = decode_case(raw.decode("utf-8"))
        except (CaseFormatError, UnicodeDecodeError) as exc:
            report.add("parse_error", str(exc), f.name)
            continue
        if case.case_id in paths:
            report.add("duplicate_id", f"case_id {case.case_id!r} already loaded from {paths[case.case_id].name}", f.name)
            continue
        cases.append(case)
        paths[case.case_id] = f
    return Corpus(tuple(cases), h.hexdigest(), paths), report


# --------------------------------------------------------------------------
# Manifests


def write_manifest(
    path: str | Path,
    split: str,
    cases: Sequence[DisputeCase],
    case_paths: dict,
    seed: int,
    ratios: Sequence[float],
    corpus_digest: str,
) -> Path:
    """Split manifest; case paths are stored relative to the manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    entries = []
    for c in sorted(cases, key=lambda c: c.case_id):
        target = Path(case_paths[c.case_id]).resolve()
        rel = Path(os.path.relpath(target, base))
        entries.append({"case_id": c.case_id, "path": rel.as_posix()})
    doc = {
        "split": split,
        "seed": seed,
        "ratios": list(ratios),
        "corpus_digest": corpus_digest,
        "cases": entries,
    }
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> tuple[dict, list[tuple[str, Path]]]:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or not isinstance(doc.get("cases"), list):
        raise ValueError(f"{path}: not a split manifest")
    entries = [(e["case_id"], (path.parent / e["path"]).resolve()) for e in doc["cases"]]
    return doc, entries


def load_manifest_cases(path: str | Path) -> list[DisputeCase]:
    _, entries = read_manifest(path)
    cases = []
    for case_id, p in entries:
        case = decode_case(p.read_text(encoding="utf-8"))
        if case.case_id != case_id:
            raise ValueError(f"{p}: expected case {case_id!r}, found {case.case_id!r}")
        cases.append(case)
    return cases


# --------------------------------------------------------------------------
# Partitioning


@dataclass(frozen=True)
class PartitionSpec:
    ratios: tuple[float, float, float] = (3, 1, 2)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3:
            raise ValueError("ratios must have three entries (train, val, test)")
        if any(r < 0 for r in self.ratios) or sum(self.ratios) <= 0:
            raise ValueError("ratios must be non-negative with a positive sum")


def largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    """Hamilton apportionment of ``n`` items; remainder ties go to the
    earlier set."""
    weights = [Fraction(r).limit_denominator(10**9) for r in ratios]
    total = sum(weights)
    quotas = [n * w / total for w in weights]
    counts = [int(q) for q in quotas]  # floor for non-negative Fractions
    left = n - sum(counts)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def stratum_key(case: DisputeCase) -> tuple[str, int]:
    if case.meta.category is None or case.ground_truth is None:
        raise UnlabeledCaseError(f"case {case.case_id} lacks a category or ground truth")
    return case.meta.category.top_level, difficulty_of(case.ground_truth)


def strata(cases: Iterable[DisputeCase]) -> dict[tuple[str, int], list[DisputeCase]]:
    groups: dict[tuple[str, int], list[DisputeCase]] = defaultdict(list)
    for c in cases:
        groups[stratum_key(c)].append(c)
    return dict(groups)


def stratified_partition(corpus: Corpus | Sequence[DisputeCase], spec: PartitionSpec = PartitionSpec()):
    """(train, val, test) split per (top-level category, vote margin) stratum.

    Each stratum is ordered by case_id, shuffled with a seed derived from the
    spec seed and the stratum key, and cut by largest-remainder counts.
    """
    cases = corpus.cases if isinstance(corpus, Corpus) else tuple(corpus)
    out: tuple[list, list, list] = ([], [], [])
    for key in sorted(groups := strata(cases)):
        members = sorted(groups[key], key=lambda c: c.case_id)
        random.Random(f"{spec.seed}:{key[0]}:{key[1]}").shuffle(members)
        start = 0
        for bucket, count in zip(out, largest_remainder(len(members), spec.ratios)):
            bucket.extend(members[start : start + count])
            start += count
    return tuple(tuple(sorted(b, key=lambda c: c.case_id)) for b in out)


# --------------------------------------------------------------------------
# Statistics


def gap_score(buyer: float, seller: float) -> float | None:
    """(buyer - seller) / (buyer + seller); undefined when both are zero."""
    if buyer + seller == 0:
        return None
    return (buyer - seller) / (buyer + seller)


def _side_counts(case: DisputeCase, side: str) -> tuple[int, int, int]:
    pieces = case.evidence(side)
    return len(pieces), sum(len(e.images) for e in pieces), sum(len(e.videos) for e in pieces)


@dataclass
class StatsReport:
    n_cases: int
    category_histogram: dict
    subcategory_histogram: dict
    win_rates: dict
    difficulty_histogram: dict
    media_counts: dict
    evidence_intensity: dict
    gap_scores: dict

    def to_dict(self) -> dict:
        return {
            "n_cases": self.n_cases,
            "category_histogram": self.category_histogram,
            "subcategory_histogram": self.subcategory_histogram,
            "win_rates": self.win_rates,
            "difficulty_histogram": self.difficulty_histogram,
            "media_counts": self.media_counts,
            "evidence_intensity": self.evidence_intensity,
            "gap_scores": self.gap_scores,
        }


def corpus_stats(corpus: Corpus | Sequence[DisputeCase]) -> StatsReport:
    """Category, outcome, difficulty and evidence statistics. Untagged cases
    count under "untagged" and unlabeled ones under "unlabeled", so every
    histogram sums to the corpus size."""
    cases = sorted(corpus.cases if isinstance(corpus, Corpus) else corpus, key=lambda c: c.case_id)
    cat_hist: Counter = Counter()
    sub_hist: Counter = Counter()
    diff_hist: dict[str, Counter] = defaultdict(Counter)
    wins: dict[str, list[int]] = defaultdict(lambda: [0, 0])  # [seller wins, labeled]
    media, intensity, gaps = {}, {}, {}
    for c in cases:
        top = c.meta.category.top_level if c.meta.category else "untagged"
        cat_hist[top] += 1
        sub_hist[c.meta.category.sub if c.meta.category else "untagged"] += 1
        if c.ground_truth is not None:
            margin = difficulty_of(c.ground_truth)
            seller_won = int(c.ground_truth.seller_votes > c.ground_truth.buyer_votes)
            for scope in ("overall", top):
                wins[scope][0] += seller_won
                wins[scope][1] += 1
        else:
            margin = "unlabeled"
        diff_hist["overall"][margin] += 1
        diff_hist[top][margin] += 1

        bp, bi, bv = _side_counts(c, "buyer")
        sp, si, sv = _side_counts(c, "seller")
        media[c.case_id] = {"images": bi + si, "videos": bv + sv}
        intensity[c.case_id] = {"buyer": bp, "seller": sp}
        per_case = {}
        for name, b, s in (("evidence", bp, sp), ("images", bi, si), ("videos", bv, sv)):
            g = gap_score(b, s)
            if g is not None:
                per_case[name] = g
        gaps[c.case_id] = per_case

    def _sorted_hist(h: Counter) -> dict:
        return {str(k): h[k] for k in sorted(h, key=lambda k: (isinstance(k, str), k))}

    win_rates = {
        scope: {"seller_wins": s, "labeled": n, "seller_win_rate": s / n if n else None, "buyer_win_rate": (n - s) / n if n else None}
        for scope, (s, n) in sorted(wins.items())
    }
    return StatsReport(
        n_cases=len(cases),
        category_histogram=dict(sorted(cat_hist.items())),
        subcategory_histogram=dict(sorted(sub_hist.items())),
        win_rates=win_rates,
        difficulty_histogram={scope: _sorted_hist(h) for scope, h in sorted(diff_hist.items())},
        media_counts=media,
        evidence_intensity=intensity,
        gap_scores=gaps,
    )


def write_stats_csv(report: StatsReport, out_dir: str | Path) -> list[Path]:
    """One CSV per statistic, ready for external plotting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def table(name: str, header: list[str], rows: Iterable[list]):
        p = out / name
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        written.append(p)

    table("category_histogram.csv", ["category", "count"], report.category_histogram.items())
    table("subcategory_histogram.csv", ["subcategory", "count"], report.subcategory_histogram.items())
    table(
        "win_rates.csv",
        ["scope", "labeled", "seller_wins", "seller_win_rate", "buyer_win_rate"],
        ([k, v["labeled"], v["seller_wins"], v["seller_win_rate"], v["buyer_win_rate"]] for k, v in report.win_rates.items()),
    )
    table(
        "difficulty_histogram.csv",
        ["scope", "margin", "count"],
        ([scope, m, n] for scope, h in report.difficulty_histogram.items() for m, n in h.items()),
    )
    table("media_counts.csv", ["case_id", "images", "videos"], ([k, v["images"], v["videos"]] for k, v in report.media_counts.items()))
    table(
        "evidence_intensity.csv",
        ["case_id", "buyer_pieces", "seller_pieces"],
        ([k, v["buyer"], v["seller"]] for k, v in report.evidence_intensity.items()),
    )
    table(
        "gap_scores.csv",
        ["case_id", "evidence_gap", "image_gap", "video_gap"],
        ([k, v.get("evidence", ""), v.get("images", ""), v.get("videos", "")] for k, v in report.gap_scores.items()),
    )
    return written


# --------------------------------------------------------------------------
# Category tagging

_NORMALIZE = re.compile(r"[^a-z0-9&é]+")


def _norm(text: str) -> str:
    return _NORMALIZE.sub(" ", text.lower()).strip()


_SUB_LOOKUP = {_norm(s): s for s in SUB_TO_TOP}
_TOP_LOOKUP = {_norm(t) for t in TAXONOMY}


def match_subcategory(reply: str) -> str | None:
    """Exact (normalized) subcategory name, else None."""
    text = reply.strip().splitlines()[0] if reply.strip() else ""
    return _SUB_LOOKUP.get(_norm(text))


def tag_category(case: DisputeCase, gateway: Gateway) -> CategoryLabel:
    """Ask for the best subcategory. A main-category answer earns one retry;
    anything unmatched falls back to the catch-all subcategory."""
    prompt = render("classify", {"product_text": case.meta.product_text})
    messages = [ChatMessage("user", prompt)]
    for attempt in range(2):
        request = ChatRequest(tuple(messages), (), gateway.params, "classify")
        reply = gateway.generate(request).text
        sub = match_subcategory(reply)
        if sub is not None:
            return CategoryLabel.from_sub(sub)
        if _norm(reply) in _TOP_LOOKUP and attempt == 0:
            messages += [
                ChatMessage("assistant", reply),
                ChatMessage("user", "That is a main category. Return only the name of one subcategory."),
            ]
            continue
        break
    logger.info("%s: unmatched category reply, using %s", case.case_id, FALLBACK_SUBCATEGORY)
    return CategoryLabel.from_sub(FALLBACK_SUBCATEGORY)
