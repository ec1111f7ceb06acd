"""``fedseries`` command line: ingest -> train -> evaluate -> export-plot.

Exit codes: 0 success, 1 user/data error, 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .config import ExperimentConfig
from .data import ingest
from .errors import DataError, FedSeriesError
from .federation import STRATEGIES, make_client, normalize_strategy, run_federation, run_solo
from .io import canonical_json, config_hash, load_dataset, load_params, read_json, save_dataset, save_params, write_json
from .metrics import EvalReport, build_report, comparison_table
from .model import ModelConfig, init_params, predict
from .synthetic import noisy_sine_ohlcv, write_csv

logger = logging.getLogger("fedseries")

CHECKPOINT_INDEX = "checkpoint.json"


def _map(fn, items, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    cfg.apply_env()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "output", None) is not None:
        cfg.output_dir = Path(args.output)
    return cfg


# ingest


def cmd_ingest(cfg: ExperimentConfig) -> int:
    symbols = cfg.resolve_symbols()
    digest = cfg.pipeline_digest()

    def one(symbol):
        path = cfg.data_dir / f"{symbol}.csv"
        try:
            ds = ingest(path, symbol, smoothing=cfg.smoothing, seq_len=cfg.seq_len)
            save_dataset(ds, cfg.dataset_dir(symbol), digest)
            return symbol, None, {s: ds.count(s) for s in ("train", "validation", "test")}
        except FedSeriesError as exc:
            return symbol, str(exc), None

    failures = 0
    for symbol, error, counts in _map(one, symbols, cfg.workers):
        if error:
            failures += 1
            print(f"error: {error}", file=sys.stderr)
        else:
            print(f"{symbol}: windows train={counts['train']} validation={counts['validation']} test={counts['test']}")
    return 1 if failures else 0


# train


def _load_datasets(cfg: ExperimentConfig, symbols: list[str]) -> dict:
    out = {}
    for symbol in symbols:
        directory = cfg.dataset_dir(symbol)
        if not (directory / "manifest.json").is_file():
            raise DataError(f"{directory}: dataset missing; run `fedseries ingest` first")
        ds = load_dataset(directory)
        if ds.inputs.shape[1] != cfg.seq_len:
            raise DataError(f"{directory}: built with seq_len {ds.inputs.shape[1]}, config says {cfg.seq_len}")
        out[symbol] = ds
    return out


def _write_jsonl(path: Path, records: list[dict]) -> None:
    path.write_text("".join(canonical_json(r) + "\n" for r in records), encoding="utf-8")


def _write_validation_log(path: Path, records: list[dict], key: str) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([key, "client", "train_loss", "val_loss"])
        for r in records:
            for client in r["clients"]:
                val = r["val_loss"].get(client)
                writer.writerow([r[key], client, repr(r["train_loss"][client]), "" if val is None else repr(val)])


def cmd_train(cfg: ExperimentConfig, strategy: str) -> int:
    strategy = normalize_strategy(strategy)
    fed = cfg.fed_config(strategy)
    model_cfg = cfg.model_config()
    symbols = cfg.resolve_symbols()
    datasets = _load_datasets(cfg, symbols)
    init = init_params(model_cfg, cfg.seed)
    clients = [make_client(s, datasets[s], model_cfg, init, cfg.seed, fed.lr) for s in symbols]

    out = cfg.checkpoint_dir(strategy)
    out.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    provenance = {
        "strategy": strategy,
        "config_hash": digest,
        "datasets": {s: config_hash(read_json(cfg.dataset_dir(s) / "manifest.json")) for s in symbols},
    }
    extra = {"model_config": model_cfg.to_dict(), "seed": cfg.seed, "provenance": provenance}

    if strategy == "SOLO":
        models, trace = run_solo(clients, fed)
        for s in symbols:
            save_params(models[s], out / s, **extra)
        index_models = {s: s for s in symbols}
        key = "epoch"
    else:
        result = run_federation(clients, fed, global_params=init)
        save_params(result.global_params, out / "global", **extra)
        trace = result.trace
        index_models = {s: "global" for s in symbols}
        key = "round"

    _write_jsonl(out / "trace.jsonl", trace)
    _write_validation_log(out / "validation_log.csv", trace, key)
    write_json(out / CHECKPOINT_INDEX, {
        "strategy": strategy,
        "models": index_models,
        "config_hash": digest,
        "seed": cfg.seed,
        "records": len(trace),
    })
    print(f"{strategy}: {len(trace)} trace records, checkpoint {out}")
    return 0


# evaluate


def _checkpoint_paths(cfg: ExperimentConfig, given: list[str] | None) -> list[Path]:
    if given:
        return [Path(p) for p in given]
    found = [cfg.checkpoint_dir(s) for s in STRATEGIES if (cfg.checkpoint_dir(s) / CHECKPOINT_INDEX).is_file()]
    if not found:
        raise DataError(f"no checkpoints under {cfg.output_dir / 'checkpoints'}; run `fedseries train` first")
    return found


def evaluate_checkpoint(cfg: ExperimentConfig, checkpoint: Path) -> list[EvalReport]:
    checkpoint = Path(checkpoint)
    index_path = checkpoint / CHECKPOINT_INDEX if checkpoint.is_dir() else checkpoint
    index = read_json(index_path)
    base = index_path.parent
    strategy = index["strategy"]
    symbols = [s for s in cfg.resolve_symbols() if s in index["models"]]
    datasets = _load_datasets(cfg, symbols)
    reports, cache = [], {}
    for symbol in symbols:
        name = index["models"][symbol]
        if name not in cache:
            cache[name] = load_params(base / name)
        params, manifest = cache[name]
        model_cfg = ModelConfig.from_dict(manifest["model_config"])

        def predictor(x, t, params=params, model_cfg=model_cfg):
            return predict(params, model_cfg, x, t)

        reports.append(build_report(predictor, datasets[symbol], strategy, index["config_hash"], index["seed"]))
    return reports


def cmd_evaluate(cfg: ExperimentConfig, checkpoints: list[str] | None) -> int:
    reports = []
    for path in _checkpoint_paths(cfg, checkpoints):
        for report in evaluate_checkpoint(cfg, path):
            report.save(cfg.report_dir() / report.strategy.lower() / f"{report.symbol}.json")
            reports.append(report)
    table = comparison_table(reports)
    table_path = cfg.report_dir() / "comparison.csv"
    table_path.parent.mkdir(parents=True, exist_ok=True)
    table_path.write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0


# export-plot


def cmd_export_plot(report_path, out_dir) -> int:
    report_path, out_dir = Path(report_path), Path(out_dir)
    if report_path.is_dir():
        paths = sorted(report_path.rglob("*.json"))
        if not paths:
            raise DataError(f"{report_path}: no report files")
    elif report_path.is_file():
        paths = [report_path]
    else:
        raise DataError(f"{report_path}: no such report")
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in paths:
        try:
            report = EvalReport.load(path)
        except (TypeError, json.JSONDecodeError):
            raise DataError(f"{path}: not an evaluation report") from None
        target = out_dir / f"{report.symbol}_{report.strategy.lower()}.csv"
        target.write_text(report.series_csv(), encoding="utf-8")
        print(target)
    return 0


# synthetic demo data


def cmd_synth(out_dir, symbols: list[str], points: int, seed: int, period: float, noise: float) -> int:
    for i, symbol in enumerate(symbols):
        rows = noisy_sine_ohlcv(points, seed=seed + i, period=period, noise=noise)
        print(write_csv(rows, Path(out_dir) / f"{symbol}.csv"))
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise FedSeriesError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedseries", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, workers=True):
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--seed", type=int, help="overrides config and FEDSERIES_SEED")
        p.add_argument("--output", help="overrides output_dir")
        if workers:
            p.add_argument("--workers", type=int, help="parallel symbols/clients")

    common(sub.add_parser("ingest", help="CSV snapshots -> windowed datasets"))
    p = sub.add_parser("train", help="train SOLO / FedAvg / FedAtt")
    common(p)
    p.add_argument("--strategy", required=True, type=str.lower, choices=[s.lower() for s in STRATEGIES])
    p = sub.add_parser("evaluate", help="score checkpoints, write reports and the comparison table")
    common(p)
    p.add_argument("--checkpoint", action="append", help="checkpoint dir (repeatable; default: all found)")
    p = sub.add_parser("export-plot", help="predicted-vs-actual CSV series from reports")
    p.add_argument("--report", required=True, help="report JSON or a directory of them")
    p.add_argument("--out", required=True)
    p = sub.add_parser("synth", help="write deterministic noisy-sine OHLCV CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--symbols", nargs="+", default=["SYN0", "SYN1", "SYN2", "SYN3", "SYN4"])
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--period", type=float, default=20.0)
    p.add_argument("--noise", type=float, default=1.0)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "export-plot":
        return cmd_export_plot(args.report, args.out)
    if args.command == "synth":
        return cmd_synth(args.out, args.symbols, args.points, args.seed, args.period, args.noise)
    cfg = load_config(args)
    if args.command == "ingest":
        return cmd_ingest(cfg)
    if args.command == "train":
        return cmd_train(cfg, args.strategy)
    return cmd_evaluate(cfg, args.checkpoint)


def main(argv=None) -> int:
    try:
        return run(argv)
    except FedSeriesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
