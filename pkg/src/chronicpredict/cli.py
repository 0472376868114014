"""Command-line entry point: generate | calibrate | label | featurize | evaluate | report."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import replace
from datetime import date
from pathlib import Path
from typing import Sequence

from .classifiers import TrainingDivergenceError, model_to_json
from .config import RunConfig
from .evaluation import (
    ALGORITHMS,
    ExperimentError,
    format_report,
    prepare,
    results_to_dict,
    run_experiment,
)
from .features import FEATURE_NAMES
from .records import ConfigError, Dataset, RecordError, parse_records, write_records
from .synthgen import CohortSpec, SpecError, calibrate_prevalence, generate
from .timeline import EmptyCohortError, GAP_MODES, cohort_report

log = logging.getLogger("chronicpredict")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DIVERGENCE = 4
EXIT_IO = 5


class InputError(ValueError):
    """Input is readable but unusable (empty, no sleepers, ...)."""


def _iso_date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--records", required=True, type=Path, help="event-record CSV")
    p.add_argument("--config", type=Path, help="JSON run configuration; flags override it")
    p.add_argument("--min-first-sleep", type=_iso_date)
    p.add_argument("--max-first-sleep", type=_iso_date)
    p.add_argument("--timezone", dest="bucket_timezone", help="timezone used to bucket stays (default UTC)")
    p.add_argument("--window-days", type=int)
    p.add_argument("--episode-gap-days", type=int)
    p.add_argument("--gap-mode", choices=GAP_MODES)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0)
    parser = argparse.ArgumentParser(prog="chronicpredict", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, **kw) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], **kw)

    p = add("generate", help="write a synthetic record file")
    p.add_argument("--spec", type=Path, help="cohort spec (flat JSON); packaged default if omitted")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n-clients", type=int)
    p.add_argument("--seed", type=int)

    p = add("calibrate", help="tune the chronic episode length toward a target prevalence")
    p.add_argument("--spec", type=Path)
    p.add_argument("--out", required=True, type=Path, help="where to write the calibrated spec")
    p.add_argument("--target", type=float, default=1549 / 18398)
    p.add_argument("--sample", type=int, default=6000)

    p = add("label", help="emit client_id,chronic")
    _add_run_flags(p)
    p.add_argument("--out", type=Path, help="output CSV (stdout if omitted)")

    p = add("featurize", help="emit the 90-day feature vector per client")
    _add_run_flags(p)
    p.add_argument("--out", type=Path)

    p = add("evaluate", help="k-fold evaluation of one or all algorithms")
    _add_run_flags(p)
    p.add_argument("--algorithm", choices=(*ALGORITHMS, "all"), default="all")
    p.add_argument("--k", type=int)
    p.add_argument("--threshold-min-stays", type=int)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--save-models", action="store_true", help="also write per-fold model JSON")

    p = add("report", help="cohort statistics for a set of clients")
    _add_run_flags(p)
    p.add_argument("--cohort", type=Path, help="CSV with a client_id column; all clients if omitted")
    p.add_argument("--chronic-only", action="store_true", help="restrict to clients labelled chronic")
    p.add_argument("--out-dir", type=Path, help="write cohort_report.json/.txt here (stdout text otherwise)")
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for key in (
        "min_first_sleep", "max_first_sleep", "bucket_timezone", "window_days",
        "episode_gap_days", "gap_mode", "seed", "k", "threshold_min_stays",
    ):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    try:
        return replace(cfg, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load(args: argparse.Namespace, cfg: RunConfig) -> Dataset:
    ds = parse_records(args.records, bucket_timezone=cfg.tz)
    if len(ds) == 0:
        raise InputError(f"{args.records} contains no records")
    return ds


def _open_out(path: Path | None):
    if path is None:
        return sys.stdout
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="", encoding="utf-8")


def _cmd_generate(args: argparse.Namespace) -> None:
    spec = CohortSpec.load(args.spec) if args.spec else CohortSpec.default()
    if args.n_clients is not None:
        spec = replace(spec, n_clients=args.n_clients)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    ds = generate(spec)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        write_records(ds, fh)
    log.info("wrote %d clients / %d events to %s", len(ds), ds.n_events, args.out)


def _cmd_calibrate(args: argparse.Namespace) -> None:
    spec = CohortSpec.load(args.spec) if args.spec else CohortSpec.default()
    out = calibrate_prevalence(spec, target=args.target, n_sample=args.sample)
    out.save(args.out)
    print(
        f"chronic.episode_length_median = {out.chronic.episode_length_median} "
        f"(prevalence {out.notes['calibrated_prevalence']:.4f} on {args.sample} clients)"
    )


def _cmd_label(args: argparse.Namespace) -> None:
    cfg = _run_config(args)
    prep = prepare(_load(args, cfg), cfg)
    fh = _open_out(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("client_id", "chronic"))
        for cid, lab in zip(prep.client_ids, prep.labels.tolist()):
            w.writerow((cid, int(lab)))
    finally:
        if fh is not sys.stdout:
            fh.close()


def _cmd_featurize(args: argparse.Namespace) -> None:
    cfg = _run_config(args)
    prep = prepare(_load(args, cfg), cfg)
    fh = _open_out(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("client_id", *FEATURE_NAMES))
        for cid, row in zip(prep.client_ids, prep.features.astype(int).tolist()):
            w.writerow((cid, *row))
    finally:
        if fh is not sys.stdout:
            fh.close()


def _cmd_evaluate(args: argparse.Namespace) -> None:
    cfg = _run_config(args)
    prep = prepare(_load(args, cfg), cfg)
    if len(prep) == 0:
        raise InputError("no client has a Sleep event after censoring")
    if prep.labels.all() or not prep.labels.any():
        raise InputError("labels contain a single class; nothing to evaluate")
    algorithms = ("logistic", "mlp", "threshold") if args.algorithm == "all" else (args.algorithm,)
    header = {"records": args.records.name, "records_sha256": _sha256(args.records)}

    results = []
    for alg in algorithms:
        log.info("evaluating %s", alg)
        results.append(run_experiment(prep, alg, config=cfg))

    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(format_report(results, cfg, header), encoding="utf-8")
    (out / "report.json").write_text(
        json.dumps(results_to_dict(results, cfg, header), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    for r in results:
        with open(out / f"predictions_{r.algorithm}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("client_id", "fold", "probability", "predicted", "chronic"))
            for cid, p, pred, lab in zip(r.client_ids, r.probabilities.tolist(), r.predicted.tolist(), prep.labels.tolist()):
                w.writerow((cid, r.folds.fold_of[cid], "" if p != p else repr(p), int(pred), int(lab)))
        if args.save_models and r.algorithm != "threshold":
            mdir = out / "models"
            mdir.mkdir(exist_ok=True)
            for f, m in enumerate(r.models):
                (mdir / f"{r.algorithm}_fold{f}.json").write_text(model_to_json(m) + "\n", encoding="utf-8")
    sys.stdout.write(format_report(results, cfg, header))


def _cmd_report(args: argparse.Namespace) -> None:
    cfg = _run_config(args)
    prep = prepare(_load(args, cfg), cfg)
    keep = set(prep.client_ids)
    if args.cohort:
        with open(args.cohort, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if rows and "client_id" not in rows[0]:
            raise InputError(f"{args.cohort} has no client_id column")
        # evaluate's prediction files carry a 'predicted' flag; honour it when present
        keep &= {r["client_id"] for r in rows if r.get("predicted", "1") in ("1", "true", "True")}
    if args.chronic_only:
        keep &= {cid for cid, lab in zip(prep.client_ids, prep.labels.tolist()) if lab}
    stats = [s for cid, s in zip(prep.client_ids, prep.stats) if cid in keep]
    report = cohort_report(stats, len(prep))
    text = report.to_text("Cohort characteristics")
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "cohort_report.txt").write_text(text, encoding="utf-8")
        (args.out_dir / "cohort_report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    sys.stdout.write(text)


COMMANDS = {
    "generate": _cmd_generate,
    "calibrate": _cmd_calibrate,
    "label": _cmd_label,
    "featurize": _cmd_featurize,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


def run_pipeline(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        COMMANDS[args.command](args)
    except (ExperimentError, TrainingDivergenceError) as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (RecordError, ConfigError, SpecError, InputError, EmptyCohortError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run_pipeline(argv))


if __name__ == "__main__":
    main()
