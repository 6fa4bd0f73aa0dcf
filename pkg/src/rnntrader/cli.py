"""Command-line driver: clean → features → train / walkforward / report.

Each stage reads the previous stage's file, so a full experiment is:

    rnntrader clean      --asset raw/gold.csv --out runs
    rnntrader features   --asset runs/cleaned/gold.csv --out runs
    rnntrader walkforward --asset runs/features/gold.csv --variant at-bilstm \
        --seed 7 --out runs

Precedence for every setting: command-line flag, then --config file entry,
then the built-in default.  All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .garch import (
    AdfVariant,
    OptimizerDivergedError,
    adf_test,
    fit_garch11,
)
from .indicators import FeatureMatrix, IndicatorConfig, build_feature_matrix, returns
from .nn import Variant, forward, load_checkpoint, save_checkpoint, variant_from_string
from .pipeline import (
    BacktestReport,
    DailyRecord,
    FeatureScaler,
    Hyperparameters,
    OneClassOnlyError,
    WalkForwardConfig,
    WindowedDataset,
    backtest_equity,
    default_hyperparameters,
    directional_accuracy,
    make_windows,
    normalize_features,
    roc_auc,
    run_walk_forward,
    train_global,
)
from .timeseries import (
    Asset,
    PriceSeries,
    clean_series,
    continuous_calendar,
    fill_counts,
    parse_price_csv,
)


@dataclass(frozen=True)
class RunConfig:
    """One command's fully resolved settings."""

    command: str
    asset: Path | None
    out: Path
    variant: Variant
    window: int
    warmup: int
    seed: int | None
    kind: Asset
    garch_on: str               # "returns" or "prices"
    holdout: float
    retrain_epochs: int
    retrain_recent: int
    capital: float
    checkpoint: Path | None
    hyper: Hyperparameters
    indicators: IndicatorConfig


def _int_pair(text: str) -> tuple[int, int]:
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated integers, got {text!r}")
    return int(parts[0]), int(parts[1])


# every key a --config file may set, with its converter from text
_CONFIG_TYPES = {
    "asset": str,
    "out": str,
    "variant": str,
    "window": int,
    "warmup": int,
    "seed": int,
    "kind": str,
    "garch_on": str,
    "holdout": float,
    "retrain_epochs": int,
    "retrain_recent": int,
    "capital": float,
    "checkpoint": str,
    "units": int,
    "batch_size": int,
    "learning_rate": float,
    "epochs": int,
    "dropout": float,
    "var_windows": _int_pair,
    "ma_windows": _int_pair,
    "boll_window": int,
    "psy_window": int,
    "rsi_window": int,
}

_DEFAULTS = {
    "out": "runs",
    "variant": "at-bilstm",
    "window": 30,
    "warmup": 300,
    "garch_on": "returns",
    "holdout": 0.2,
    "retrain_epochs": 5,
    "retrain_recent": 300,
    "capital": 1000.0,
}

_INDICATOR_KEYS = ("var_windows", "ma_windows", "boll_window", "psy_window", "rsi_window")


def read_config_file(path: str | Path) -> dict:
    """Flat `key = value` lines; '#' starts a comment; keys must be known."""
    values = {}
    for line_number, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_number}: expected 'key = value', got {raw!r}")
        key, _, text = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _CONFIG_TYPES:
            raise ValueError(f"{path}:{line_number}: unknown setting {key!r}")
        try:
            values[key] = _CONFIG_TYPES[key](text.strip())
        except ValueError as exc:
            raise ValueError(f"{path}:{line_number}: bad value for {key}: {exc}") from None
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rnntrader",
        description="Price cleaning, indicator extraction, recurrent-network "
                    "training, and walk-forward backtesting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--asset", help="input file for this stage")
        p.add_argument("--out", help="output root directory (default: runs)")
        p.add_argument("--config", help="key = value settings file; flags win")

    def add_model(p):
        p.add_argument("--variant", choices=[v.value for v in Variant])
        p.add_argument("--window", type=int, help="window length in rows")
        p.add_argument("--seed", type=int, help="master seed (required)")
        p.add_argument("--units", type=int, help="hidden units per direction")
        p.add_argument("--batch-size", type=int)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--capital", type=float, help="starting capital")

    p = sub.add_parser("clean", help="parse a raw quote CSV, align and fill gaps")
    add_common(p)
    p.add_argument("--kind", choices=[a.value for a in Asset],
                   help="asset tag (guessed from the file name if omitted)")

    p = sub.add_parser("features", help="indicators + volatility model from a cleaned CSV")
    add_common(p)
    p.add_argument("--garch-on", choices=["returns", "prices"],
                   help="series the volatility model is fit to (default: returns)")

    p = sub.add_parser("train", help="train one model on a chronological split")
    add_common(p)
    add_model(p)
    p.add_argument("--holdout", type=float,
                   help="fraction of newest windows held out (default: 0.2)")

    p = sub.add_parser("walkforward", help="day-by-day replay with incremental retraining")
    add_common(p)
    add_model(p)
    p.add_argument("--warmup", type=int, help="days before the first trade")
    p.add_argument("--retrain-epochs", type=int, help="epochs per trading day (0 = frozen)")
    p.add_argument("--retrain-recent", type=int, help="windows kept for daily retraining")

    p = sub.add_parser("report", help="frozen inference over a feature file")
    add_common(p)
    p.add_argument("--checkpoint", help="model checkpoint to load")
    p.add_argument("--capital", type=float, help="starting capital")

    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge flags over config-file entries over built-in defaults."""
    from_file = read_config_file(args.config) if getattr(args, "config", None) else {}

    def pick(key):
        value = getattr(args, key, None)
        if value is not None:
            return value
        if key in from_file:
            return from_file[key]
        return _DEFAULTS.get(key)

    command = args.command
    asset = pick("asset")
    if asset is None:
        raise ValueError(f"'{command}' needs --asset (or an 'asset' config entry)")
    asset = Path(asset)

    kind_text = pick("kind")
    if kind_text is None:
        kind_text = "bitcoin" if any(tag in asset.stem.lower() for tag in ("bit", "btc")) else "gold"
    kind = Asset(kind_text)

    variant = variant_from_string(pick("variant"))
    hyper = default_hyperparameters(variant)
    overrides = {}
    for key, field in (("units", "hidden_units"), ("batch_size", "batch_size"),
                       ("learning_rate", "learning_rate"), ("epochs", "epochs"),
                       ("dropout", "dropout_rate")):
        value = pick(key)
        if value is not None:
            overrides[field] = value
    if overrides:
        hyper = dataclasses.replace(hyper, **overrides)

    indicator_overrides = {key: pick(key) for key in _INDICATOR_KEYS if pick(key) is not None}
    indicators = IndicatorConfig(**indicator_overrides)

    seed = pick("seed")
    if command in ("train", "walkforward") and seed is None:
        raise ValueError(f"'{command}' needs --seed: every run must be reproducible")

    checkpoint = pick("checkpoint")
    if command == "report" and checkpoint is None:
        raise ValueError("'report' needs --checkpoint")

    garch_on = pick("garch_on")
    if garch_on not in ("returns", "prices"):
        raise ValueError(f"garch_on must be 'returns' or 'prices', got {garch_on!r}")

    return RunConfig(
        command=command,
        asset=asset,
        out=Path(pick("out")),
        variant=variant,
        window=int(pick("window")),
        warmup=int(pick("warmup")),
        seed=None if seed is None else int(seed),
        kind=kind,
        garch_on=garch_on,
        holdout=float(pick("holdout")),
        retrain_epochs=int(pick("retrain_epochs")),
        retrain_recent=int(pick("retrain_recent")),
        capital=float(pick("capital")),
        checkpoint=None if checkpoint is None else Path(checkpoint),
        hyper=hyper,
        indicators=indicators,
    )


def _subdir(cfg: RunConfig, name: str) -> Path:
    path = cfg.out / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _run_stem(cfg: RunConfig) -> str:
    return f"{cfg.asset.stem}_{cfg.variant.value}_s{cfg.seed}"


def _safe_metrics(scores: np.ndarray, realized: np.ndarray) -> dict:
    """Accuracy/AUC where defined, None where the segment is one-sided."""
    out = {"accuracy": None, "auc": None}
    try:
        out["accuracy"] = directional_accuracy(scores, realized)
    except OneClassOnlyError:
        pass
    try:
        mask = realized != 0.0
        out["auc"] = roc_auc(scores[mask], realized[mask] > 0.0)
    except OneClassOnlyError:
        pass
    return out


def cmd_clean(cfg: RunConfig) -> int:
    quotes = parse_price_csv(cfg.asset, cfg.kind)
    if not quotes:
        raise ValueError(f"{cfg.asset} holds no usable quotes")
    series = clean_series(quotes, continuous_calendar(quotes))
    out = _subdir(cfg, "cleaned") / f"{cfg.asset.stem}.csv"
    series.to_csv(out)
    counts = fill_counts(series)
    _write_json(out.with_name(f"{cfg.asset.stem}_fills.json"), counts)
    print(f"wrote {out} ({len(series.dates)} rows)")
    for flag, count in sorted(counts.items()):
        print(f"  {flag}: {count}")
    return 0


def cmd_features(cfg: RunConfig) -> int:
    series = PriceSeries.from_csv(cfg.asset)
    if cfg.garch_on == "returns":
        base = returns(series.prices)[1:]
        fit = fit_garch11(base)
        # shift back onto price dates: day 0 has no return at all
        mu = np.concatenate(([np.nan], fit.mu))
        sigma2 = np.concatenate(([np.nan], fit.sigma2))
        adf = adf_test(base, AdfVariant.NONE)
    else:
        fit = fit_garch11(series.prices)
        mu, sigma2 = fit.mu, fit.sigma2
        adf = adf_test(series.prices, AdfVariant.TREND)
    feats = build_feature_matrix(series, mu, sigma2, cfg.indicators)
    out = _subdir(cfg, "features") / f"{cfg.asset.stem}.csv"
    feats.to_csv(out)
    _write_json(out.with_name(f"{cfg.asset.stem}_model.json"), {
        "garch_on": cfg.garch_on,
        "garch": fit.to_json_dict(),
        "adf": {
            "variant": adf.variant.value,
            "statistic": adf.statistic,
            "reject_at_1pct": adf.reject_at_1pct,
        },
    })
    print(f"wrote {out} ({len(feats)} rows, {len(feats.columns)} columns)")
    print(f"  adf[{adf.variant.value}] = {adf.statistic:.4f} "
          f"(unit root {'rejected' if adf.reject_at_1pct else 'not rejected'} at 1%)")
    print(f"  garch: alpha0={fit.alpha0:.6g} alpha1={fit.alpha1:.4f} beta1={fit.beta1:.4f}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    feats = FeatureMatrix.from_csv(cfg.asset)
    dataset = make_windows(feats, cfg.window)
    if not 0.0 <= cfg.holdout < 1.0:
        raise ValueError(f"holdout fraction must be in [0, 1), got {cfg.holdout}")
    n_train = len(dataset) - int(round(len(dataset) * cfg.holdout))
    if n_train < 2:
        raise ValueError(
            f"{len(dataset)} windows with holdout {cfg.holdout} "
            f"leave {n_train} to train on"
        )
    scaled, scaler = normalize_features(dataset.windows[:n_train], dataset.windows[:n_train])
    train_ds = WindowedDataset(
        scaled, dataset.targets[:n_train], dataset.end_dates[:n_train], dataset.ends[:n_train]
    )
    result = train_global(train_ds, cfg.variant, cfg.hyper, seed=cfg.seed)

    splits = {}
    for name, lo, hi in (("train", 0, n_train), ("holdout", n_train, len(dataset))):
        if hi == lo:
            splits[name] = None
            continue
        scores, _ = forward(result.params, scaler.transform(dataset.windows[lo:hi]), mode="infer")
        scores = np.atleast_1d(scores)
        realized = dataset.targets[lo:hi]
        equity = backtest_equity(scores, realized, cfg.capital)
        splits[name] = {
            "n_windows": hi - lo,
            **_safe_metrics(scores, realized),
            "total_return": float(equity[-1] / cfg.capital - 1.0),
        }

    stem = _run_stem(cfg)
    ckpt = _subdir(cfg, "checkpoints") / f"{stem}_global.ckpt"
    save_checkpoint(
        ckpt, result.params, result.optimizer,
        extra_tensors={"scaler.mean": scaler.mean, "scaler.std": scaler.std},
        meta={"kind": "global", "asset": cfg.asset.stem, "variant": cfg.variant.value,
              "seed": cfg.seed, "window": cfg.window, "n_train_windows": n_train},
    )
    reports = _subdir(cfg, "reports")
    loss_csv = reports / f"{stem}_loss.csv"
    with open(loss_csv, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,mse\n")
        for epoch, loss in enumerate(result.losses):
            fh.write(f"{epoch},{loss!r}\n")
    summary_path = reports / f"{stem}_global_summary.json"
    _write_json(summary_path, {
        "asset": cfg.asset.stem,
        "variant": cfg.variant.value,
        "seed": cfg.seed,
        "window": cfg.window,
        "hyperparameters": dataclasses.asdict(cfg.hyper),
        "final_training_mse": result.losses[-1] if result.losses else None,
        "splits": splits,
        "checkpoint": ckpt.name,
    })
    print(f"wrote {ckpt}")
    print(f"wrote {summary_path}")
    for name in ("train", "holdout"):
        if splits[name]:
            acc, auc = splits[name]["accuracy"], splits[name]["auc"]
            print(f"  {name}: n={splits[name]['n_windows']}"
                  f" accuracy={'n/a' if acc is None else f'{acc:.4f}'}"
                  f" auc={'n/a' if auc is None else f'{auc:.4f}'}")
    return 0


def cmd_walkforward(cfg: RunConfig) -> int:
    feats = FeatureMatrix.from_csv(cfg.asset)
    wf_cfg = WalkForwardConfig(
        seed=cfg.seed,
        warmup_days=cfg.warmup,
        retrain_epochs=cfg.retrain_epochs,
        window_length=cfg.window,
        retrain_recent_windows=cfg.retrain_recent,
        initial_capital=cfg.capital,
        hyper=cfg.hyper,
    )
    run = run_walk_forward(feats, wf_cfg, cfg.variant)

    stem = _run_stem(cfg)
    reports = _subdir(cfg, "reports")
    report_csv = reports / f"{stem}_walkforward.csv"
    run.report.to_csv(report_csv)
    summary_path = reports / f"{stem}_walkforward_summary.json"
    _write_json(summary_path, {
        "asset": cfg.asset.stem,
        "variant": cfg.variant.value,
        "seed": cfg.seed,
        "window": cfg.window,
        "warmup_days": cfg.warmup,
        "retrain_epochs": cfg.retrain_epochs,
        "retrain_recent_windows": cfg.retrain_recent,
        "hyperparameters": dataclasses.asdict(cfg.hyper),
        **run.report.summary(),
    })
    written = [report_csv, summary_path]
    if run.params is not None:
        ckpt = _subdir(cfg, "checkpoints") / f"{stem}_walkforward.ckpt"
        save_checkpoint(
            ckpt, run.params, run.optimizer,
            extra_tensors={"scaler.mean": run.scaler.mean, "scaler.std": run.scaler.std},
            meta={"kind": "walkforward", "asset": cfg.asset.stem,
                  "variant": cfg.variant.value, "seed": cfg.seed,
                  "window": cfg.window, "warmup_days": cfg.warmup},
        )
        written.append(ckpt)
    for path in written:
        print(f"wrote {path}")
    summary = run.report.summary()
    acc, auc = summary["accuracy"], summary["auc"]
    print(f"  days={summary['n_days']}"
          f" accuracy={'n/a' if acc is None else f'{acc:.4f}'}"
          f" auc={'n/a' if auc is None else f'{auc:.4f}'}"
          f" final_equity={summary['final_equity']:.2f}")
    return 0


def cmd_report(cfg: RunConfig) -> int:
    params, _optimizer, extras, meta = load_checkpoint(cfg.checkpoint)
    if "scaler.mean" not in extras or "scaler.std" not in extras:
        raise ValueError(f"{cfg.checkpoint} carries no feature scaler")
    scaler = FeatureScaler(extras["scaler.mean"], extras["scaler.std"])
    feats = FeatureMatrix.from_csv(cfg.asset)
    dataset = make_windows(feats, params.window_length)
    scores, _ = forward(params, scaler.transform(dataset.windows), mode="infer")
    scores = np.atleast_1d(scores)
    equity = backtest_equity(scores, dataset.targets, cfg.capital)
    records = tuple(
        DailyRecord(feats.dates[int(e) + 1], float(s), float(r), bool(s > 0.0), float(q))
        for e, s, r, q in zip(dataset.ends, scores, dataset.targets, equity[1:])
    )
    report = BacktestReport(records, cfg.capital)

    base = f"{cfg.asset.stem}_{Path(cfg.checkpoint).stem}"
    reports = _subdir(cfg, "reports")
    report_csv = reports / f"{base}_report.csv"
    report.to_csv(report_csv)
    summary_path = reports / f"{base}_report_summary.json"
    _write_json(summary_path, {
        "asset": cfg.asset.stem,
        "checkpoint": Path(cfg.checkpoint).name,
        "checkpoint_meta": meta,
        **report.summary(),
    })
    print(f"wrote {report_csv}")
    print(f"wrote {summary_path}")
    return 0


_COMMANDS = {
    "clean": cmd_clean,
    "features": cmd_features,
    "train": cmd_train,
    "walkforward": cmd_walkforward,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return _COMMANDS[cfg.command](cfg)
    except (ValueError, ArithmeticError, OSError, OptimizerDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
