"""Command-line entry point.

Exit codes: 0 success, 1 validation or metric failure, 2 usage or config
error, 3 provider or transport failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import synthetic
from .cases import CaseFormatError, Verdict, decode_case, encode_case, validate_case
from .config import ConfigError, RunConfig, build_provider, load_config
from .corpus import (
    SPLITS,
    EmptyCorpusError,
    PartitionSpec,
    UnlabeledCaseError,
    corpus_stats,
    load_corpus,
    load_manifest_cases,
    read_manifest,
    stratified_partition,
    tag_category,
    write_manifest,
    write_stats_csv,
)
from .gateway import Gateway, GatewayError
from .jury import load_persona_pool, run_simulation
from .metrics import PredictionRecord, evaluate, write_report
from .precedents import PrecedentBase, build_base, record_from_case

logger = logging.getLogger("jurysim")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_PROVIDER = 0, 1, 2, 3


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "offline", False):
        cfg.check_offline()
    if getattr(args, "lite", False):
        cfg.lite = True
    return cfg


def _gateway(cfg: RunConfig, log_full: bool = False) -> Gateway:
    try:
        provider = build_provider(cfg)
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot set up provider: {exc}", EXIT_USAGE) from None
    return Gateway(provider, cfg.params(), log_full)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _is_manifest(path: Path) -> bool:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return False
    return isinstance(doc, dict) and isinstance(doc.get("cases"), list) and "case_id" not in doc


# --------------------------------------------------------------------------
# Commands


def cmd_validate(args) -> int:
    corpus_path = Path(args.corpus)
    try:
        corpus, report = load_corpus(corpus_path)
    except EmptyCorpusError:
        print(f"no cases in {corpus_path}", file=sys.stderr)
        return EXIT_USAGE
    for case in corpus.cases:
        report.extend(validate_case(case, corpus.paths[case.case_id].name))
    out = Path(args.report) if args.report else corpus_path.resolve().parent / f"{corpus_path.resolve().name}.validation.json"
    doc = {"corpus": str(corpus_path), "n_files": len(corpus) + sum(1 for i in report.issues if i.code in ("parse_error", "duplicate_id")), **report.to_dict()}
    _write_json(out, doc)
    for issue in report.issues:
        print(f"{issue.where}: {issue.code}: {issue.message}")
    print(f"{len(corpus)} cases, {len(report.issues)} issue(s); report written to {out}")
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_partition(args) -> int:
    try:
        corpus, report = load_corpus(args.corpus)
    except EmptyCorpusError:
        print(f"no cases in {args.corpus}", file=sys.stderr)
        return EXIT_USAGE
    if not report.ok:
        for issue in report.issues:
            print(f"{issue.where}: {issue.code}: {issue.message}", file=sys.stderr)
        return EXIT_FAIL
    spec = PartitionSpec(tuple(args.ratios), args.seed)
    try:
        parts = stratified_partition(corpus, spec)
    except UnlabeledCaseError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAIL
    out = Path(args.out)
    for name, cases in zip(SPLITS, parts):
        write_manifest(out / f"{name}.json", name, cases, corpus.paths, spec.seed, spec.ratios, corpus.source_digest)
    print(" ".join(f"{name}={len(cases)}" for name, cases in zip(SPLITS, parts)))
    return EXIT_OK


def cmd_build_precedents(args) -> int:
    cfg = _config(args)
    cases = load_manifest_cases(args.manifest)
    unlabeled = [c.case_id for c in cases if c.ground_truth is None]
    if unlabeled:
        print(f"case {unlabeled[0]} has no ground truth", file=sys.stderr)
        return EXIT_FAIL
    gateway = _gateway(cfg)
    base = build_base([record_from_case(c) for c in cases], gateway, top_m=cfg.precedent_top_m, retries=cfg.schema_retries)
    base.encoder = f"{cfg.provider.kind}:{cfg.provider.embedding_model or cfg.provider.model_id or cfg.provider.dimension}"
    out = base.save(args.out)
    print(f"{len(base)} precedents written to {out} (digest {base.digest()[:16]})")
    return EXIT_OK


def _simulation_inputs(path: Path):
    if _is_manifest(path):
        return load_manifest_cases(path)
    return [decode_case(path.read_text(encoding="utf-8"))]


def cmd_simulate(args) -> int:
    cfg = _config(args)
    cases = _simulation_inputs(Path(args.input))
    precedents_dir = args.precedents or cfg.paths.precedents
    base = PrecedentBase.load(precedents_dir) if precedents_dir else None
    pool = load_persona_pool(cfg.paths.personas)
    gateway = _gateway(cfg, args.log_full)
    sim_config = cfg.simulation()
    out = Path(args.out or cfg.paths.output or "results")
    out.mkdir(parents=True, exist_ok=True)

    def one(case):
        # each case gets its own ledger and audit log
        result = run_simulation(case, sim_config, gateway.fork(), base, pool)
        (out / f"{case.case_id}.json").write_text(result.to_json(), encoding="utf-8")
        return result

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool_exec:
        results = list(pool_exec.map(one, cases))
    for r in results:
        b, s = r.final_split
        print(f"{r.case_id}: {r.final_verdict.label} ({b}:{s}) in {len(r.rounds)} round(s), {r.tokens['total_tokens']} tokens")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _, entries = read_manifest(args.manifest)
    results_dir = Path(args.results)
    records = []
    for case_id, path in entries:
        case = decode_case(path.read_text(encoding="utf-8"))
        if case.ground_truth is None:
            print(f"case {case_id} has no ground truth label", file=sys.stderr)
            return EXIT_FAIL
        result_path = results_dir / f"{case_id}.json"
        if not result_path.is_file():
            print(f"no result for case {case_id} in {results_dir}", file=sys.stderr)
            return EXIT_FAIL
        res = json.loads(result_path.read_text(encoding="utf-8"))
        gt = case.ground_truth
        split = res["final_split"]
        records.append(
            PredictionRecord(
                case_id=case_id,
                predicted=Verdict.parse(res["final_verdict"]),
                predicted_split=(int(split["buyer"]), int(split["seller"])),
                actual=gt.winner,
                actual_split=(gt.buyer_votes, gt.seller_votes),
                category=case.meta.category.top_level if case.meta.category else "",
                rounds_used=int(res.get("rounds_used", 0)),
                tokens_used=int(res.get("tokens", {}).get("total_tokens", 0)),
            )
        )
    if not records:
        print("manifest lists no cases", file=sys.stderr)
        return EXIT_FAIL
    report = evaluate(records)
    out = write_report(report, records, args.out or results_dir / "evaluation")
    print(json.dumps(report.to_dict(), indent=2))
    print(f"report written to {out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    try:
        corpus, report = load_corpus(args.corpus)
    except EmptyCorpusError:
        print(f"no cases in {args.corpus}", file=sys.stderr)
        return EXIT_USAGE
    stats = corpus_stats(corpus)
    out = Path(args.out)
    written = write_stats_csv(stats, out)
    _write_json(out / "stats.json", stats.to_dict())
    overall = stats.win_rates.get("overall")
    if overall:
        print(f"{stats.n_cases} cases, seller win rate {overall['seller_win_rate']:.3f}")
    print(f"{len(written)} CSV tables written to {out}")
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_tag(args) -> int:
    cfg = _config(args)
    corpus, report = load_corpus(args.corpus)
    gateway = _gateway(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for case in corpus.cases:
        if case.meta.category is not None and not args.force:
            tagged = case
        else:
            label = tag_category(case, gateway)
            tagged = replace(case, meta=replace(case.meta, category=label))
        (out / f"{case.case_id}.json").write_text(encode_case(tagged), encoding="utf-8")
    print(f"{len(corpus)} cases written to {out}")
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_synth(args) -> int:
    if args.kind == "benchmark":
        cases = synthetic.benchmark_corpus(args.seed)
    elif args.kind == "charging":
        cases = [synthetic.charging_case()]
    else:
        cases = synthetic.random_cases(args.n, args.seed, with_rationales=args.rationales)
    synthetic.write_cases(cases, args.out)
    print(f"{len(cases)} cases written to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jurysim", description="Jury simulation for e-commerce dispute verdicts.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--offline", action="store_true", help="refuse network providers")

    p = sub.add_parser("validate", help="check every case file in a corpus")
    p.add_argument("corpus")
    p.add_argument("--report", help="report path (default: <corpus>.validation.json next to the corpus)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("partition", help="stratified train/val/test manifests")
    p.add_argument("corpus")
    p.add_argument("--out", required=True, help="directory for train.json, val.json, test.json")
    p.add_argument("--ratios", type=float, nargs=3, default=[3, 1, 2], metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("build-precedents", help="distill a precedent base from a labeled manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    with_config(p)
    p.set_defaults(func=cmd_build_precedents)

    p = sub.add_parser("simulate", help="run the jury on a case file or a manifest")
    p.add_argument("input", help="case JSON or split manifest")
    p.add_argument("--out", help="results directory")
    p.add_argument("--precedents", help="precedent base directory")
    p.add_argument("--jobs", type=int, default=1, help="cases simulated concurrently")
    p.add_argument("--log-full", action="store_true", help="keep full prompt/response texts in the audit log")
    p.add_argument("--lite", action="store_true", help="drop chat history from the analysis stage")
    with_config(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score simulation results against labels")
    p.add_argument("results")
    p.add_argument("manifest")
    p.add_argument("--out", help="report directory (default: <results>/evaluation)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="corpus statistics as CSV tables")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("tag", help="assign categories with the classifier prompt")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="re-tag cases that already have a category")
    with_config(p)
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("synth", help="write synthetic case files")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("random", "benchmark", "charging"), default="random")
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rationales", action="store_true", help="include per-juror rationales")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GatewayError as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CaseFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
