import json
import random
from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jurysim.cases import CategoryLabel, EvidencePiece, MediaItem, Verdict
from jurysim.corpus import (
    Corpus,
    EmptyCorpusError,
    PartitionSpec,
    UnlabeledCaseError,
    corpus_stats,
    gap_score,
    largest_remainder,
    load_corpus,
    load_manifest_cases,
    match_subcategory,
    read_manifest,
    stratified_partition,
    strata,
    tag_category,
    write_manifest,
    write_stats_csv,
)
from jurysim.gateway import CallbackProvider, Gateway
from jurysim.synthetic import make_case, random_cases, votes_for, win_rate_corpus, write_cases

from scripting import Script


# -------------------------------------------------------------- loading


def test_load_three_cases(tmp_path):
    write_cases(random_cases(3, seed=1), tmp_path)
    corpus, report = load_corpus(tmp_path)
    assert len(corpus) == 3 and report.issues == []
    again, _ = load_corpus(tmp_path)
    assert again.source_digest == corpus.source_digest


def test_malformed_file_is_reported(tmp_path):
    paths = write_cases(random_cases(3, seed=1), tmp_path)
    doc = json.loads(paths[1].read_text())
    doc["ground_truth"]["buyer_votes"] = "many"
    paths[1].write_text(json.dumps(doc))
    corpus, report = load_corpus(tmp_path)
    assert len(corpus) == 2
    assert report.codes() == ["parse_error"] and report.issues[0].where == paths[1].name


def test_duplicate_ids_are_reported(tmp_path):
    (c,) = random_cases(1, seed=2)
    write_cases([c], tmp_path)
    (tmp_path / "copy.json").write_text((tmp_path / f"{c.case_id}.json").read_text())
    corpus, report = load_corpus(tmp_path)
    assert len(corpus) == 1 and report.codes() == ["duplicate_id"]


def test_digest_changes_with_content(tmp_path):
    paths = write_cases(random_cases(2, seed=1), tmp_path)
    before = load_corpus(tmp_path)[0].source_digest
    paths[0].write_text(paths[0].read_text().replace("\n", " \n", 1))
    assert load_corpus(tmp_path)[0].source_digest != before


def test_empty_and_missing(tmp_path):
    with pytest.raises(EmptyCorpusError):
        load_corpus(tmp_path)
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "nope")


def test_in_memory_corpus_rejects_duplicates():
    (c,) = random_cases(1)
    with pytest.raises(ValueError):
        Corpus.from_cases([c, c])


# -------------------------------------------------------------- partition


@pytest.mark.parametrize(
    "n,expected",
    [
        (6, [3, 1, 2]),
        # quotas 2.5, 0.8333, 1.6667: floors 2/0/1 leave one seat each for
        # the two largest remainders (val 0.833, test 0.667)
        (5, [2, 1, 2]),
        (1, [1, 0, 0]),
        (0, [0, 0, 0]),
        (7, [4, 1, 2]),
    ],
)
def test_largest_remainder_examples(n, expected):
    assert largest_remainder(n, (3, 1, 2)) == expected


@given(st.integers(0, 5000), st.lists(st.integers(0, 9), min_size=1, max_size=5).filter(any))
def test_largest_remainder_properties(n, ratios):
    counts = largest_remainder(n, ratios)
    assert sum(counts) == n
    total = sum(ratios)
    for c, r in zip(counts, ratios):
        assert abs(c - Fraction(n * r, total)) < 1


def _stratum(n, category="Mobile Phones", margin=5, seed=0):
    rng = random.Random(seed)
    label = CategoryLabel.from_sub(category)
    return [make_case(f"{category[:3]}-{margin}-{i:03d}", rng, category=label, votes=votes_for(Verdict.SELLER, margin)) for i in range(n)]


def test_six_case_stratum():
    train, val, test = stratified_partition(_stratum(6))
    assert (len(train), len(val), len(test)) == (3, 1, 2)


def test_partition_is_deterministic_and_disjoint():
    cases = _stratum(20) + _stratum(13, "Footwear", 1) + _stratum(4, "Mobile Phones", 17)
    a = stratified_partition(cases, PartitionSpec(seed=4))
    b = stratified_partition(list(reversed(cases)), PartitionSpec(seed=4))
    assert a == b
    ids = [c.case_id for split in a for c in split]
    assert sorted(ids) == sorted(c.case_id for c in cases)
    other = stratified_partition(cases, PartitionSpec(seed=5))
    assert [len(s) for s in other] == [len(s) for s in a]
    assert other != a


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["Mobile Phones", "Footwear", "Pet Supplies"]), st.sampled_from([1, 3, 5, 17])), min_size=1, max_size=60), st.integers(0, 100))
def test_per_stratum_deviation_at_most_one(keys, seed):
    rng = random.Random(seed)
    cases = [make_case(f"c{i:03d}", rng, category=CategoryLabel.from_sub(cat), votes=votes_for(Verdict.BUYER, m)) for i, (cat, m) in enumerate(keys)]
    splits = stratified_partition(cases, PartitionSpec(seed=seed))
    for key, members in strata(cases).items():
        ids = {c.case_id for c in members}
        for split, w in zip(splits, (3, 1, 2)):
            got = sum(1 for c in split if c.case_id in ids)
            assert abs(got - Fraction(len(members) * w, 6)) < 1


def test_unlabeled_case_cannot_be_partitioned():
    (c,) = random_cases(1)
    with pytest.raises(UnlabeledCaseError):
        stratified_partition([replace(c, ground_truth=None)])
    with pytest.raises(UnlabeledCaseError):
        stratified_partition([replace(c, meta=replace(c.meta, category=None))])


def test_spec_validation():
    with pytest.raises(ValueError):
        PartitionSpec(ratios=(0, 0, 0))
    with pytest.raises(ValueError):
        PartitionSpec(ratios=(1, -1, 1))


# -------------------------------------------------------------- manifests


def test_manifest_round_trip(tmp_path):
    cases = random_cases(4, seed=9)
    write_cases(cases, tmp_path / "corpus")
    corpus, _ = load_corpus(tmp_path / "corpus")
    path = write_manifest(tmp_path / "splits" / "train.json", "train", corpus.cases, corpus.paths, 0, (3, 1, 2), corpus.source_digest)
    doc, entries = read_manifest(path)
    assert doc["split"] == "train" and doc["corpus_digest"] == corpus.source_digest
    assert all(not e["path"].startswith("/") for e in doc["cases"])
    assert [c.case_id for c in load_manifest_cases(path)] == sorted(c.case_id for c in cases)


# -------------------------------------------------------------- stats


def _with_evidence(case, n_buyer, n_seller):
    mk = lambda side, n: tuple(EvidencePiece(f"{side}{i}", "t", (MediaItem(f"{side}{i}m", "image", "x.jpg"),)) for i in range(n))  # noqa: E731
    return replace(case, buyer_evidence=mk("b", n_buyer), seller_evidence=mk("s", n_seller))


def test_gap_scores():
    assert gap_score(5, 5) == 0 and gap_score(3, 1) == 0.5 and gap_score(0, 0) is None
    (c,) = random_cases(1)
    report = corpus_stats([_with_evidence(c, 5, 5), replace(_with_evidence(c, 3, 1), case_id="z")])
    assert report.gap_scores[c.case_id]["evidence"] == 0
    assert report.gap_scores["z"]["evidence"] == 0.5 and report.gap_scores["z"]["images"] == 0.5
    assert "videos" not in report.gap_scores["z"]


def test_win_rate_626():
    report = corpus_stats(win_rate_corpus(1000, 626, seed=1))
    overall = report.win_rates["overall"]
    assert overall["seller_wins"] == 626 and overall["seller_win_rate"] == pytest.approx(0.626)


def test_histograms_sum_to_corpus_size():
    cases = random_cases(30, seed=3)
    cases[0] = replace(cases[0], ground_truth=None)
    cases[1] = replace(cases[1], meta=replace(cases[1].meta, category=None))
    report = corpus_stats(cases)
    assert sum(report.category_histogram.values()) == 30
    assert sum(report.difficulty_histogram["overall"].values()) == 30
    assert report.difficulty_histogram["overall"]["unlabeled"] == 1
    assert report.category_histogram["untagged"] == 1


@given(st.randoms())
@settings(max_examples=10, deadline=None)
def test_stats_permutation_invariant(rnd):
    cases = random_cases(15, seed=2)
    shuffled = list(cases)
    rnd.shuffle(shuffled)
    assert corpus_stats(shuffled).to_dict() == corpus_stats(cases).to_dict()


def test_write_stats_csv(tmp_path):
    paths = write_stats_csv(corpus_stats(random_cases(5)), tmp_path)
    assert len(paths) == 7 and all(p.exists() for p in paths)


# -------------------------------------------------------------- tagging


def _tag(*replies):
    script = Script(classify=list(replies))
    (c,) = random_cases(1)
    return tag_category(c, Gateway(CallbackProvider(script))), script


def test_tag_exact_subcategory():
    label, script = _tag("Mobile Phones")
    assert label == CategoryLabel("Digital & Appliances", "Mobile Phones")
    assert script.calls["classify"] == 1


def test_tag_main_category_retries_once_then_falls_back():
    label, script = _tag("Digital & Appliances", "Digital & Appliances")
    assert label.sub == "Uncategorized Secondhand Items" and script.calls["classify"] == 2
    assert script.requests[1].messages[-1].text.startswith("That is a main category")


def test_tag_main_category_then_valid():
    label, _ = _tag("Digital & Appliances", "mobile phones.")
    assert label.sub == "Mobile Phones"


def test_tag_garbage_falls_back():
    label, script = _tag("sneakers!")
    assert label.sub == "Uncategorized Secondhand Items"
    label, script = _tag("a nice hat, probably")
    assert label.sub == "Uncategorized Secondhand Items" and script.calls["classify"] == 1


def test_match_subcategory():
    assert match_subcategory('"Mobile Phones"') == "Mobile Phones"
    assert match_subcategory("nothing") is None
