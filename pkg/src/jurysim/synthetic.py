"""Synthetic dispute cases for offline runs and tests.

Nothing here resembles real platform data; texts are templated and media
carry surrogate descriptions instead of files.
"""

from __future__ import annotations

import random
from pathlib import Path
from typing import Sequence

from .cases import (
    JURY_SIZE,
    TAXONOMY,
    CategoryLabel,
    ChatTurn,
    DisputeCase,
    EvidencePiece,
    GroundTruthVotes,
    JurorDecision,
    MediaItem,
    Price,
    TransactionMeta,
    Verdict,
    encode_case,
)

MARGINS = tuple(range(1, JURY_SIZE + 1, 2))

_PRODUCTS = {
    "Mobile Phones": "Used smartphone, 128GB, light scratches on the frame",
    "Computers": "Second-hand laptop, 16GB RAM, battery health 85%",
    "Cameras": "Mirrorless camera body with one lens, shutter count 12k",
    "Clothing": "Wool jacket, size M, worn twice",
    "Footwear": "Running sneakers, size 42, original box",
    "Furniture & Home Décor": "Fabric sofa, three seats, pick-up only",
    "Gaming Accounts & Services": "Game account with rare skins, email rebinding included",
    "Uncategorized Secondhand Items": "Assorted hobby items sold as a bundle",
}
_BUYER_CLAIMS = (
    "The item arrived with damage not shown in the listing.",
    "It does not work as described by the seller.",
    "The colour and size differ from the photos.",
    "Parts listed as included were missing from the box.",
)
_SELLER_CLAIMS = (
    "The listing disclosed this wear clearly.",
    "The item worked when it was packed, see the video.",
    "The buyer confirmed the condition in chat before paying.",
    "Shipping damage is the courier's responsibility.",
)


def votes_for(winner: Verdict, margin: int) -> tuple[int, int]:
    """(buyer, seller) split with the given winner and margin."""
    if margin not in MARGINS:
        raise ValueError(f"margin must be odd in [1, {JURY_SIZE}], got {margin}")
    hi, lo = (JURY_SIZE + margin) // 2, (JURY_SIZE - margin) // 2
    return (hi, lo) if winner == Verdict.BUYER else (lo, hi)


def _media(rng: random.Random, prefix: str) -> tuple[tuple[MediaItem, ...], tuple[MediaItem, ...]]:
    images = tuple(
        MediaItem(f"{prefix}-img{i}", "image", f"media/{prefix}-img{i}.jpg", 1, None, f"photo {i} of the item, {rng.choice(['close-up', 'wide shot', 'packaging'])}")
        for i in range(rng.randrange(0, 3))
    )
    videos = tuple(
        MediaItem(f"{prefix}-vid{i}", "video", f"media/{prefix}-vid{i}.mp4", fc, fc / 30, f"unboxing video {i}, {fc} frames")
        for i, fc in enumerate(rng.choice([0, 90, 240, 31]) for _ in range(rng.randrange(0, 2)))
    )
    return images, videos


def make_case(
    case_id: str,
    rng: random.Random,
    category: CategoryLabel | None = None,
    votes: tuple[int, int] | None = None,
    n_buyer: int | None = None,
    n_seller: int | None = None,
    with_rationales: bool = False,
) -> DisputeCase:
    if category is None:
        sub = rng.choice(sorted(_PRODUCTS))
        category = CategoryLabel.from_sub(sub)
    product = _PRODUCTS.get(category.sub, f"Second-hand item from {category.sub}")
    n_buyer = n_buyer if n_buyer is not None else rng.randrange(1, 4)
    n_seller = n_seller if n_seller is not None else rng.randrange(0, 3)

    def pieces(side: str, n: int, claims: Sequence[str]) -> tuple[EvidencePiece, ...]:
        out = []
        for i in range(n):
            images, videos = _media(rng, f"{case_id}-{side[0]}{i}")
            if not images and not videos and rng.random() < 0.5:
                images = (MediaItem(f"{case_id}-{side[0]}{i}-img0", "image", "", 1, None, "photo of the disputed detail"),)
            text = rng.choice(claims)
            if images:
                text += f" See [image:{images[0].media_id}]."
            out.append(EvidencePiece(f"e{i + 1}", text, images, videos))
        return tuple(out)

    if votes is None:
        seller = rng.randrange(0, JURY_SIZE + 1)
        votes = (JURY_SIZE - seller, seller)
    b, s = votes
    decisions: tuple[JurorDecision, ...] = ()
    if with_rationales:
        decisions = tuple(
            [JurorDecision(Verdict.BUYER, f"Buyer juror {i}: the defect was not disclosed.") for i in range(b)]
            + [JurorDecision(Verdict.SELLER, f"Seller juror {i}: the listing covered this.") for i in range(s)]
        )
    meta = TransactionMeta(
        product_text=product,
        chat_history=(
            ChatTurn("buyer", "Is the item in the condition shown?"),
            ChatTurn("seller", "Yes, apart from what the description says."),
        ),
        category=category,
        price=Price(f"{rng.randrange(5, 900)}.00", "USD"),
    )
    return DisputeCase(
        case_id,
        meta,
        pieces("buyer", n_buyer, _BUYER_CLAIMS),
        pieces("seller", n_seller, _SELLER_CLAIMS),
        GroundTruthVotes(b, s, decisions),
    )


def random_cases(n: int, seed: int = 0, **kwargs) -> list[DisputeCase]:
    rng = random.Random(seed)
    return [make_case(f"case-{i:05d}", rng, **kwargs) for i in range(n)]


def charging_case(case_id: str = "charging-001") -> DisputeCase:
    """A phone that stops charging after delivery."""
    img = MediaItem("port-photo", "image", "media/port.jpg", 1, None, "close-up of a bent pin in the charging port")
    vid = MediaItem("charge-test", "video", "media/charge.mp4", 120, 4.0, "phone plugged in, charging icon does not appear")
    listing = MediaItem("listing-shot", "image", "media/listing.jpg", 1, None, "phone on the seller's desk showing 80% battery")
    meta = TransactionMeta(
        product_text="Used smartphone, 256GB, listed as fully working with original charger",
        chat_history=(
            ChatTurn("buyer", "Does it charge normally?"),
            ChatTurn("seller", "Yes, everything works."),
            ChatTurn("buyer", "It will not charge at all since it arrived."),
        ),
        category=CategoryLabel.from_sub("Mobile Phones"),
        price=Price("320.00", "USD"),
    )
    return DisputeCase(
        case_id,
        meta,
        (
            EvidencePiece("e1", "The phone does not charge with any cable. See [image:port-photo].", (img,)),
            EvidencePiece("e2", "Video of the charging test.", (), (vid,)),
        ),
        (EvidencePiece("e1", "It was charging fine before shipping. See [image:listing-shot].", (listing,)),),
        GroundTruthVotes(4, 13),
    )


# Residue recipe per category: (strata with size = 3 mod 6, strata with
# size = 2 mod 6); the rest are multiples of 6. With (3, 1, 2) ratios this
# lands on 3009 / 986 / 2005 for 6000 cases.
BENCHMARK_CATEGORY_TOTALS = {
    "Digital & Appliances": (1545, 3, 3),
    "Fashion & Bags": (1409, 3, 4),
    "Home & Lifestyle": (945, 3, 3),
    "Virtual & Services": (1005, 5, 0),
    "Other": (1096, 4, 5),
}
BENCHMARK_BUYER_WINS = 2242


def benchmark_strata() -> dict[tuple[str, int], int]:
    sizes = {}
    for top, (total, n3, n2) in BENCHMARK_CATEGORY_TOTALS.items():
        residues = [3] * n3 + [2] * n2 + [0] * (len(MARGINS) - n3 - n2)
        blocks, extra = divmod((total - sum(residues)) // 6, len(MARGINS))
        for i, (margin, r) in enumerate(zip(MARGINS, residues)):
            sizes[(top, margin)] = 6 * (blocks + (1 if i < extra else 0)) + r
        assert sum(sizes[(top, m)] for m in MARGINS) == total
    return sizes


def benchmark_corpus(seed: int = 0) -> list[DisputeCase]:
    """6000 labeled cases whose category/margin strata partition into
    3009 / 986 / 2005 under (3, 1, 2) ratios."""
    rng = random.Random(seed)
    cases = []
    i = 0
    total = sum(t for t, _, _ in BENCHMARK_CATEGORY_TOTALS.values())
    for (top, margin), size in sorted(benchmark_strata().items()):
        sub = TAXONOMY[top][0]
        for _ in range(size):
            # spread buyer wins evenly over the whole sequence
            buyer_wins = (i + 1) * BENCHMARK_BUYER_WINS // total > i * BENCHMARK_BUYER_WINS // total
            winner = Verdict.BUYER if buyer_wins else Verdict.SELLER
            cases.append(
                make_case(f"bm-{i:05d}", rng, CategoryLabel(top, sub), votes_for(winner, margin), n_buyer=1, n_seller=1)
            )
            i += 1
    return cases


def win_rate_corpus(n: int, seller_wins: int, seed: int = 0) -> list[DisputeCase]:
    rng = random.Random(seed)
    out = []
    for i in range(n):
        winner = Verdict.SELLER if i < seller_wins else Verdict.BUYER
        out.append(make_case(f"wr-{i:05d}", rng, votes=votes_for(winner, rng.choice(MARGINS))))
    return out


def write_cases(cases: Sequence[DisputeCase], directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in cases:
        p = directory / f"{c.case_id}.json"
        p.write_text(encode_case(c), encoding="utf-8")
        paths.append(p)
    return paths
