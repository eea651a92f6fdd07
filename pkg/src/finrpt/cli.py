"""``finrpt`` command line.

Exit codes: 0 success, 1 domain failure (unparseable agent output, nothing to
compare, ...), 2 environment failure (I/O, config, schema, backend).
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .config import Config, load_config
from .core import InputBundle, Rating, Report, Sample, SchemaError, derive_trend_label, parse_date, validate_bundle
from .dataset.curation import (
    dataset_stats,
    dumps_jsonl,
    export_sft_pairs,
    filter_bundle,
    load_industry_map,
    read_jsonl,
    sample_key,
    split_dataset,
    summarize_bundle,
)
from .dataset.dedup import dedup_news
from .dataset.enhance import EnhancementLog, InvalidSample, enhance_sample
from .judge import EmptyTally, Judge, run_tournament
from .llm import GatewayError, UsageLedger, cost_report
from .metrics import (
    MetricReport,
    UndefinedReference,
    accuracy,
    bert_f1,
    completion_rate,
    detect_mode,
    number_rate,
    rouge_1,
    rouge_l,
    tokenize,
)
from .pipeline import PipelineTrace, load_templates, run_pipeline
from .rl import EmptySequence, GroupTooSmall, NonpositiveRatio, score_rollout_record

logger = logging.getLogger("finrpt")

OK, DOMAIN_FAILURE, ENV_FAILURE = 0, 1, 2


class DomainFailure(Exception):
    """Inputs were readable but the requested result cannot be produced."""


class NoAlignedPairs(DomainFailure):
    pass


# -- io ---------------------------------------------------------------------------


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def read_json(path: str | Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def read_records(path: str | Path) -> list[dict]:
    """A JSON array, a single JSON object, or JSONL."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return read_jsonl(path)
    return data if isinstance(data, list) else [data]


def emit(args: argparse.Namespace, obj: Any) -> None:
    """Machine output to ``--out`` when given, else to stdout."""
    if getattr(args, "out", None):
        write_atomic(args.out, dumps(obj))
    else:
        sys.stdout.write(dumps(obj))


def save_usage(args: argparse.Namespace, ledger: UsageLedger) -> None:
    if getattr(args, "usage", None):
        write_atomic(args.usage, dumps(ledger.to_dict()))


# -- generate ---------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace, cfg: Config) -> int:
    bundle = InputBundle.from_dict(read_json(args.bundle))
    problems = validate_bundle(bundle)
    if problems:
        raise SchemaError("; ".join(problems))
    gateway = cfg.gateway()
    result = run_pipeline(bundle, gateway, load_templates(cfg.template_dir), jobs=args.jobs)
    if args.trace:
        write_atomic(args.trace, dumps(result.trace.to_dict()))
    save_usage(args, gateway.ledger)
    if not result.ok:
        print(f"{bundle.ticker} {bundle.date}: {result.trace.failure.value} failed: {result.trace.reason}",
              file=sys.stderr)
        return DOMAIN_FAILURE
    row = {"ticker": bundle.ticker, "date": bundle.date.isoformat(), "report": result.report.to_dict()}
    write_atomic(args.out, dumps(row))
    print(f"{bundle.ticker} {bundle.date}: {result.report.rating.value} ({gateway.ledger.calls()} calls)")
    return OK


# -- build-dataset ----------------------------------------------------------------


def _series(data: Mapping | None) -> dict[dt.date, float]:
    return {parse_date(k): float(v) for k, v in (data or {}).items()}


def load_future(path: str | Path | None) -> tuple[dict[str, dict], dict]:
    """``{"indices": {date: level}, "prices": {ticker: {date: close}}}``"""
    if path is None:
        return {}, {}
    data = read_json(path)
    return {t: _series(s) for t, s in (data.get("prices") or {}).items()}, _series(data.get("indices"))


def load_experts(root: str | Path | None, ticker: str, date: dt.date) -> list[str]:
    if root is None:
        return []
    folder = Path(root) / ticker / date.isoformat()
    return [p.read_text(encoding="utf-8") for p in sorted(folder.glob("*.txt"))] if folder.is_dir() else []


def _build_one(bundle: InputBundle, ctx: dict) -> tuple[dict | None, dict | None, dict | None]:
    """Returns (sample, trace, reject) rows; exactly one of sample/reject is set."""
    cfg: Config = ctx["cfg"]
    key = {"ticker": bundle.ticker, "date": bundle.date.isoformat()}

    def reject(reason: str) -> tuple[None, None, dict]:
        return None, None, {**key, "reason": reason}

    problems = validate_bundle(bundle)
    if problems:
        return reject("invalid: " + "; ".join(problems))
    if ctx["summarize"]:
        bundle = summarize_bundle(bundle, ctx["gateway"], template_dir=cfg.template_dir)
    kept, _ = dedup_news(bundle.news, cfg.dedup, ctx["embedder"])
    bundle = bundle.with_news(kept)
    decision = filter_bundle(bundle, cfg.filter)
    if not decision.accepted:
        return reject(decision.reason)

    prices = {**bundle.stock_prices, **ctx["future_prices"].get(bundle.ticker, {})}
    indices = {**bundle.market_indices, **ctx["future_indices"]}
    try:
        label = derive_trend_label(prices, indices, bundle.date, cfg.label_horizon)
    except (LookupError, ValueError) as exc:
        return reject(f"no_label: {exc}")

    gateway, templates = ctx["gateway"], ctx["templates"]
    first = run_pipeline(bundle, gateway, templates)
    if not first.ok:
        return reject(f"parse_failure: {first.trace.failure.value}")
    traces = {0: first.trace}

    def regenerate(attempt: int) -> Report | None:
        result = run_pipeline(bundle, gateway, templates, temperature=cfg.regenerate_temperature)
        traces[attempt] = result.trace
        return result.report

    draft = Sample(bundle.ticker, bundle.date, bundle, first.report, label)
    try:
        sample = enhance_sample(
            draft, label, regenerate, gateway, load_experts(ctx["experts"], bundle.ticker, bundle.date),
            max_attempts=cfg.rating_max_attempts, log=ctx["log"], template_dir=cfg.template_dir,
        )
    except InvalidSample as exc:
        return reject(f"rating_mismatch after {exc.attempts} attempts")
    accepted = next(t for t in reversed(traces.values()) if t.failure is None)
    return sample.to_dict(), accepted.to_dict(), None


def cmd_build_dataset(args: argparse.Namespace, cfg: Config) -> int:
    bundles = [InputBundle.from_dict(r) for r in read_records(args.bundles)]
    future_prices, future_indices = load_future(args.future)
    log = EnhancementLog()
    gateway = cfg.gateway()
    ctx = {
        "cfg": cfg,
        "gateway": gateway,
        "templates": load_templates(cfg.template_dir),
        "embedder": cfg.embedder(),
        "future_prices": future_prices,
        "future_indices": future_indices,
        "experts": args.experts,
        "summarize": args.summarize,
        "log": log,
    }
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(lambda b: _build_one(b, ctx), bundles))

    def by_key(rows):
        return sorted(rows, key=lambda r: (r["ticker"], r["date"]))

    samples = by_key([s for s, _, _ in results if s])
    traces = by_key([t for _, t, _ in results if t])
    rejects = by_key([r for _, _, r in results if r])
    spec = cfg.split if args.seed is None else replace(cfg.split, seed=args.seed)
    objects = [Sample.from_dict(s) for s in samples]
    train, val, test = split_dataset(objects, spec)
    out = Path(args.out)
    write_atomic(out / "dataset.jsonl", dumps_jsonl(samples))
    for name, part in (("train", train), ("val", val), ("test", test)):
        write_atomic(out / f"{name}.jsonl", dumps_jsonl(s.to_dict() for s in part))
    write_atomic(out / "traces.jsonl", dumps_jsonl(traces))
    write_atomic(out / "rejects.jsonl", dumps_jsonl(rejects))
    write_atomic(out / "enhancement_log.jsonl", dumps_jsonl(log.sorted_dicts()))
    write_atomic(out / "usage.json", dumps(gateway.ledger.to_dict()))
    print(f"{len(samples)} samples ({len(train)} train / {len(val)} val / {len(test)} test), "
          f"{len(rejects)} rejected")
    return OK


# -- evaluate ---------------------------------------------------------------------


def _report_of(row: Mapping) -> Report | None:
    data = row.get("report")
    if not data:
        return None
    try:
        return Report.from_dict(data)
    except (SchemaError, KeyError, TypeError, ValueError):
        return None


def _truth(row: Mapping) -> str:
    """The trend label when the reference carries one, else its report's rating."""
    label = row.get("label")
    if label:
        return Rating.parse(label["label"] if isinstance(label, Mapping) else label).value
    return Report.from_dict(row["report"]).rating.value


def evaluate_rows(candidates: Sequence[Mapping], references: Sequence[Mapping], embedder) -> tuple[MetricReport, dict]:
    refs = {sample_key(r): r for r in references}
    cands = {sample_key(r): r for r in candidates}
    aligned = sorted(refs.keys() & cands.keys())
    skipped = {
        "candidates_without_reference": [list(k) for k in sorted(cands.keys() - refs.keys())],
        "references_without_candidate": [list(k) for k in sorted(refs.keys() - cands.keys())],
    }
    if not aligned:
        raise NoAlignedPairs("no (ticker, date) appears in both files")
    outcomes, preds, truths, rl, r1, bf, nr = [], [], [], [], [], [], []
    for key in aligned:
        cand, ref = _report_of(cands[key]), Report.from_dict(refs[key]["report"])
        outcomes.append(cand is not None)
        if cand is None:
            continue
        preds.append(cand.rating.value)
        truths.append(_truth(refs[key]))
        mode = detect_mode(ref.text())
        c, r = tokenize(cand.text(), mode), tokenize(ref.text(), mode)
        rl.append(rouge_l(c, r))
        r1.append(rouge_1(c, r))
        bf.append(bert_f1(c, r, embedder))
        try:
            nr.append(number_rate(cand.text(), ref.text()))
        except UndefinedReference:
            logger.info("%s %s: reference has no numbers, left out of number_rate", *key)

    def mean(xs):
        return sum(xs) / len(xs) if xs else None

    report = MetricReport(
        completion_rate=completion_rate(outcomes),
        accuracy=accuracy(preds, truths) if preds else None,
        rouge_l=mean(rl),
        rouge_1=mean(r1),
        bert_f1=mean(bf),
        number_rate=mean(nr),
        pairs=len(aligned),
    )
    return report, skipped


def cmd_evaluate(args: argparse.Namespace, cfg: Config) -> int:
    report, skipped = evaluate_rows(read_records(args.candidates), read_records(args.references), cfg.embedder())
    for side, keys in skipped.items():
        for ticker, date in keys:
            print(f"skipped {ticker} {date}: {side.replace('_', ' ')}", file=sys.stderr)
    emit(args, {**report.to_dict(), "skipped": skipped})
    if args.out:
        summary = ", ".join(f"{k}={v:.4f}" for k, v in report.to_dict().items() if isinstance(v, float))
        print(f"{report.pairs} pairs: {summary}")
    return OK


# -- judge ------------------------------------------------------------------------


def cmd_judge(args: argparse.Namespace, cfg: Config) -> int:
    a_rows = {sample_key(r): r for r in read_records(args.reports_a)}
    b_rows = {sample_key(r): r for r in read_records(args.reports_b)}
    keys = sorted(a_rows.keys() & b_rows.keys())
    if not keys:
        raise NoAlignedPairs("no (ticker, date) appears in both report files")
    pairs = [(k, Report.from_dict(a_rows[k]["report"]), Report.from_dict(b_rows[k]["report"])) for k in keys]
    gateway = cfg.gateway()
    judge = Judge(gateway, batched=args.batched or cfg.judge_batched, template_dir=cfg.template_dir)
    result = run_tournament(pairs, judge, jobs=args.jobs)
    save_usage(args, gateway.ledger)
    emit(args, result.to_dict())
    if args.out:
        awr = result.to_dict()["adjusted_win_rate"]
        print(f"{len(keys)} pairs, adjusted win rate of A: {awr['average']:.4f}")
    return OK


# -- stats / sft-export / reward / cost-report ----------------------------------


def cmd_stats(args: argparse.Namespace, cfg: Config) -> int:
    samples = [Sample.from_dict(r) for r in read_records(args.dataset)]
    industry = load_industry_map(args.industry) if args.industry else None
    emit(args, dataset_stats(samples, industry).to_dict())
    return OK


def cmd_sft_export(args: argparse.Namespace, cfg: Config) -> int:
    traces = {}
    if args.traces:
        for row in read_records(args.traces):
            traces[sample_key(row)] = PipelineTrace.from_dict(row)
    pairs = []
    for row in read_records(args.dataset):
        sample = Sample.from_dict(row)
        pairs.extend(export_sft_pairs(sample, traces.get(sample_key(row))))
    write_atomic(args.out, dumps_jsonl(p.to_dict() for p in pairs))
    print(f"{len(pairs)} pairs written to {args.out}")
    return OK


def cmd_reward(args: argparse.Namespace, cfg: Config) -> int:
    rows = [score_rollout_record(r, cfg.reward, cfg.clip) for r in read_records(args.records)]
    write_atomic(args.out, dumps_jsonl(rows))
    print(f"{len(rows)} groups scored")
    return OK


def cmd_cost_report(args: argparse.Namespace, cfg: Config) -> int:
    ledger = UsageLedger.from_dict(read_json(args.usage))
    if args.prices:
        cfg.price_table = Path(args.prices)
    emit(args, cost_report(ledger, cfg.prices()).to_dict())
    return OK


COMMANDS = {
    "generate": cmd_generate,
    "build-dataset": cmd_build_dataset,
    "evaluate": cmd_evaluate,
    "judge": cmd_judge,
    "stats": cmd_stats,
    "sft-export": cmd_sft_export,
    "reward": cmd_reward,
    "cost-report": cmd_cost_report,
}


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker threads (default 1)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="overrides the split seed")
    common.add_argument("--mock", default=argparse.SUPPRESS, metavar="SCRIPT",
                        help="use the scripted mock backend (a reply file, or 'demo')")
    common.add_argument("--model", default=argparse.SUPPRESS, help="overrides backend.model")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="finrpt", parents=[common], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="run the nine-agent pipeline on one bundle")
    p.add_argument("bundle")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--trace", help="trace JSON, written on success and failure")
    p.add_argument("--usage", help="token usage JSON")

    p = sub.add_parser("build-dataset", parents=[common], help="filter, generate, enhance and split")
    p.add_argument("--bundles", required=True, help="bundles as JSONL or a JSON array")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--future", help="JSON with post-date prices and index levels for labelling")
    p.add_argument("--experts", help="directory of TICKER/DATE/*.txt analyst reports")
    p.add_argument("--summarize", action="store_true", help="summarise news and announcements first")

    p = sub.add_parser("evaluate", parents=[common], help="basic metrics over aligned report files")
    p.add_argument("candidates")
    p.add_argument("references")
    p.add_argument("--out")

    p = sub.add_parser("judge", parents=[common], help="position-swapped pairwise judging, A vs B")
    p.add_argument("reports_a")
    p.add_argument("reports_b")
    p.add_argument("--batched", action="store_true", help="one call per pair and order for all criteria")
    p.add_argument("--usage")
    p.add_argument("--out")

    p = sub.add_parser("stats", parents=[common], help="dataset statistics")
    p.add_argument("dataset")
    p.add_argument("--industry", help="CSV with ticker,industry")
    p.add_argument("--out")

    p = sub.add_parser("sft-export", parents=[common], help="demonstration pairs for trainable agents")
    p.add_argument("dataset")
    p.add_argument("--traces")
    p.add_argument("--out", required=True)

    p = sub.add_parser("reward", parents=[common], help="rewards, advantages and clipped objective")
    p.add_argument("records")
    p.add_argument("--out", required=True)

    p = sub.add_parser("cost-report", parents=[common], help="price a usage ledger")
    p.add_argument("usage")
    p.add_argument("--prices", help="price table JSON (overrides config)")
    p.add_argument("--out")
    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    cfg = load_config(getattr(args, "config", None))
    if hasattr(args, "mock"):
        cfg.backend = replace(cfg.backend, kind="mock", script=args.mock)
    if hasattr(args, "model"):
        cfg.backend = replace(cfg.backend, model=args.model)
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.jobs = getattr(args, "jobs", 1)
    args.seed = getattr(args, "seed", None)
    if args.jobs < 1:
        print("finrpt: --jobs must be >= 1", file=sys.stderr)
        return ENV_FAILURE
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (DomainFailure, GroupTooSmall, EmptySequence, NonpositiveRatio, EmptyTally) as exc:
        print(f"finrpt {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return DOMAIN_FAILURE
    except (OSError, ValueError, KeyError, GatewayError) as exc:
        # unreadable files, bad config or schema, backend trouble
        print(f"finrpt {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return ENV_FAILURE


if __name__ == "__main__":
    sys.exit(main())
