"""Windowed datasets, training loops, metrics, and the walk-forward backtest.

The flow: `make_windows` slices a feature matrix into fixed-length blocks,
`normalize_features` z-scores them with training-set statistics only,
`train_global` fits one model on everything, and `walk_forward` replays
history day by day, retraining incrementally and trading on the sign of each
prediction.
"""

from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .indicators import FeatureMatrix
from .nn import (
    NetworkParams,
    RmsPropState,
    Variant,
    backward,
    forward,
    init_network,
    init_rmsprop,
    mse_loss,
    rmsprop_step,
)

TRADING_DAYS_PER_YEAR = 252


class TooFewRowsError(ValueError):
    """Not enough feature rows to build even one training window."""


class TooShortHistoryError(ValueError):
    """The feature history does not cover the warm-up period."""


class NonFiniteLossError(ArithmeticError):
    """Training loss left the finite range; the run is unusable."""


class OneClassOnlyError(ValueError):
    """A ranking metric needs both positive and negative days."""


class ZeroVarianceWarning(UserWarning):
    """A feature column was constant over the training windows."""


# ---------------------------------------------------------------------------
# windowing


@dataclass(frozen=True)
class WindowedDataset:
    """Sliding windows over feature rows, each labeled with a next-day return.

    `windows[i]` packs rows `ends[i] - T + 1 .. ends[i]` of the source matrix
    and `targets[i]` is the return realized the day after `end_dates[i]`.
    """

    windows: np.ndarray             # (n_windows, T, n_features)
    targets: np.ndarray             # (n_windows,)
    end_dates: tuple[dt.date, ...]  # date of each window's last row
    ends: np.ndarray                # (n_windows,) row index of the last row

    def __len__(self) -> int:
        return len(self.windows)


def make_windows(features: FeatureMatrix, window_length: int) -> WindowedDataset:
    """Slide a `window_length`-row window over the feature matrix.

    The final row never terminates a window: its successor row, which carries
    the trade date for the window's prediction, does not exist yet.  So
    `rows` feature rows yield exactly `rows - window_length` windows.
    """
    T = int(window_length)
    if T < 1:
        raise ValueError(f"window length must be positive, got {T}")
    rows = len(features.dates)
    if rows <= T:
        raise TooFewRowsError(
            f"{rows} feature rows cannot fill a {T}-row window "
            "and still leave a successor row"
        )
    ends = np.arange(T - 1, rows - 1)
    offsets = np.arange(-(T - 1), 1)
    windows = features.values[ends[:, None] + offsets[None, :]]
    return WindowedDataset(
        windows,
        features.target[ends],
        tuple(features.dates[int(t)] for t in ends),
        ends,
    )


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class FeatureScaler:
    """Per-feature z-score parameters, fit once and reapplied unchanged."""

    mean: np.ndarray  # (n_features,)
    std: np.ndarray   # (n_features,), never zero

    def transform(self, windows: np.ndarray) -> np.ndarray:
        return (np.asarray(windows, dtype=np.float64) - self.mean) / self.std


def fit_scaler(train_windows: np.ndarray) -> FeatureScaler:
    """Per-feature mean and population std over every training-window entry.

    Constant columns are reported with :class:`ZeroVarianceWarning` and get
    std 1, so they normalize to all zeros instead of dividing by zero.
    """
    x = np.asarray(train_windows, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] == 0:
        raise ValueError(f"expected a non-empty (m, T, k) window stack, got {x.shape}")
    mean = x.mean(axis=(0, 1))
    std = x.std(axis=(0, 1))
    degenerate = np.flatnonzero(std == 0.0)
    if degenerate.size:
        warnings.warn(
            f"constant feature column(s) {degenerate.tolist()} in training "
            "windows; normalizing with std = 1",
            ZeroVarianceWarning,
            stacklevel=2,
        )
        std = np.where(std == 0.0, 1.0, std)
    return FeatureScaler(mean, std)


def normalize_features(
    train_windows: np.ndarray, apply_windows: np.ndarray
) -> tuple[np.ndarray, FeatureScaler]:
    """Scale `apply_windows` by statistics fit on `train_windows` alone."""
    scaler = fit_scaler(train_windows)
    return scaler.transform(apply_windows), scaler


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class Hyperparameters:
    hidden_units: int
    batch_size: int
    learning_rate: float
    epochs: int
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.hidden_units < 1:
            raise ValueError(f"hidden_units must be positive, got {self.hidden_units}")
        if self.batch_size < 2:
            # batch statistics need at least two rows
            raise ValueError(f"batch_size must be at least 2, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


_TUNED = {
    Variant.LSTM: Hyperparameters(128, 128, 0.01, 300),
    Variant.BILSTM: Hyperparameters(64, 128, 0.001, 300),
    Variant.AT_BILSTM: Hyperparameters(32, 128, 0.01, 300),
}


def default_hyperparameters(variant: Variant) -> Hyperparameters:
    """The tuned per-variant portfolio: units, batch size, rate, epochs."""
    return _TUNED[variant]


@dataclass(frozen=True)
class TrainResult:
    params: NetworkParams
    optimizer: RmsPropState
    losses: tuple[float, ...]  # mean training MSE per epoch


def run_epochs(
    params: NetworkParams,
    optimizer: RmsPropState,
    windows: np.ndarray,
    targets: np.ndarray,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
) -> list[float]:
    """Shuffled mini-batch MSE training, updating `params` in place.

    Returns the per-epoch loss curve (batch losses averaged per window).
    A trailing batch of one window is skipped: batch statistics are
    meaningless for it.
    """
    m = len(windows)
    tensors = params.trainable_tensors()
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(m)
        total = 0.0
        seen = 0
        for start in range(0, m, batch_size):
            batch = order[start:start + batch_size]
            if len(batch) < 2:
                continue
            scores, cache = forward(params, windows[batch], mode="train", rng=rng)
            loss, dscores = mse_loss(scores, targets[batch])
            if not np.isfinite(loss):
                raise NonFiniteLossError(
                    f"loss became non-finite at epoch {epoch}, "
                    f"batch starting at {start}"
                )
            grads = backward(params, cache, dscores)
            rmsprop_step(optimizer, tensors, grads)
            total += loss * len(batch)
            seen += len(batch)
        if seen == 0:
            raise TooFewRowsError(
                f"{m} windows cannot form a batch of two or more"
            )
        losses.append(total / seen)
    return losses


def train_global(
    dataset: WindowedDataset,
    variant: Variant,
    hyper: Hyperparameters | None = None,
    *,
    seed,
) -> TrainResult:
    """Train one model on the full dataset.  Deterministic for a fixed seed.

    The dataset is consumed as given; normalize it first if the features are
    on wild scales.
    """
    m, T, d = dataset.windows.shape
    if m < 2:
        raise TooFewRowsError(f"need at least 2 windows to train, got {m}")
    if hyper is None:
        hyper = default_hyperparameters(variant)
    rng = np.random.default_rng(seed)
    params = init_network(
        variant, d, hyper.hidden_units, T, rng, dropout_rate=hyper.dropout_rate
    )
    optimizer = init_rmsprop(
        params.trainable_tensors(), learning_rate=hyper.learning_rate
    )
    losses = run_epochs(
        params, optimizer, dataset.windows, dataset.targets,
        hyper.epochs, hyper.batch_size, rng,
    )
    return TrainResult(params, optimizer, tuple(losses))


# ---------------------------------------------------------------------------
# metrics


def directional_accuracy(scores: np.ndarray, realized: np.ndarray) -> float:
    """Fraction of days where the score's sign matches the realized return's.

    Zero-return days carry no direction and are excluded from the count.
    """
    scores = np.asarray(scores, dtype=np.float64)
    realized = np.asarray(realized, dtype=np.float64)
    if scores.shape != realized.shape or scores.ndim != 1:
        raise ValueError(f"shape mismatch: {scores.shape} vs {realized.shape}")
    mask = realized != 0.0
    if not mask.any():
        raise OneClassOnlyError("every realized return is zero")
    return float(np.mean(np.sign(scores[mask]) == np.sign(realized[mask])))


def roc_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Probability a positive day outranks a negative one; ties count half.

    Rank-sum formulation.  Every intermediate is an exact half-integer, so
    the result matches counting all positive/negative pairs bit for bit.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    if scores.shape != positive.shape or scores.ndim != 1:
        raise ValueError(f"shape mismatch: {scores.shape} vs {positive.shape}")
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnlyError(
            f"need both classes, got {n_pos} positive and {n_neg} negative days"
        )
    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate(scores: np.ndarray, realized: np.ndarray) -> tuple[float, float]:
    """Directional accuracy and AUC over the days with nonzero returns."""
    accuracy = directional_accuracy(scores, realized)
    realized = np.asarray(realized, dtype=np.float64)
    mask = realized != 0.0
    auc = roc_auc(np.asarray(scores, dtype=np.float64)[mask], realized[mask] > 0.0)
    return accuracy, auc


def backtest_equity(
    scores: np.ndarray, realized: np.ndarray, initial: float = 1000.0
) -> np.ndarray:
    """Long-or-flat compounding: hold the asset on days with a positive score.

    Full notional, no costs, no shorting.  `equity[0]` is the initial capital
    and `equity[i + 1]` applies day i's return if (and only if) long.
    """
    scores = np.asarray(scores, dtype=np.float64)
    realized = np.asarray(realized, dtype=np.float64)
    if scores.shape != realized.shape or scores.ndim != 1:
        raise ValueError(f"shape mismatch: {scores.shape} vs {realized.shape}")
    if initial <= 0:
        raise ValueError(f"initial capital must be positive, got {initial}")
    factors = np.where(scores > 0.0, 1.0 + realized, 1.0)
    return np.cumprod(np.concatenate(([float(initial)], factors)))


# ---------------------------------------------------------------------------
# walk-forward backtest


@dataclass(frozen=True)
class WalkForwardConfig:
    """Knobs for the day-by-day replay.

    `retrain_epochs = 0` freezes the warm-up model; otherwise each day ends
    with that many epochs over the newest `retrain_recent_windows` windows
    whose targets are already realized.
    """

    seed: int
    warmup_days: int = 300
    retrain_epochs: int = 5
    window_length: int = 30
    retrain_recent_windows: int = 300
    initial_capital: float = 1000.0
    hyper: Hyperparameters | None = None

    def __post_init__(self):
        if self.window_length < 1:
            raise ValueError(f"window_length must be positive, got {self.window_length}")
        if self.warmup_days < self.window_length:
            raise ValueError(
                f"warm-up of {self.warmup_days} days is shorter than "
                f"the {self.window_length}-day window"
            )
        if self.retrain_epochs < 0:
            raise ValueError(f"retrain_epochs must be nonnegative, got {self.retrain_epochs}")
        if self.retrain_recent_windows < 2:
            raise ValueError(
                f"retrain_recent_windows must be at least 2, got {self.retrain_recent_windows}"
            )
        if self.initial_capital <= 0:
            raise ValueError(f"initial_capital must be positive, got {self.initial_capital}")


@dataclass(frozen=True)
class DailyRecord:
    date: dt.date      # the day whose return was predicted and traded
    score: float       # model output from data strictly before `date`
    realized: float    # the return that actually arrived on `date`
    long: bool         # True when capital was in the asset that day
    equity: float      # capital at the end of `date`


_REPORT_HEADER = ("date", "score", "realized", "position", "equity")


@dataclass(frozen=True)
class BacktestReport:
    records: tuple[DailyRecord, ...]
    initial_capital: float

    def scores(self) -> np.ndarray:
        return np.array([r.score for r in self.records], dtype=np.float64)

    def realized(self) -> np.ndarray:
        return np.array([r.realized for r in self.records], dtype=np.float64)

    def equity_curve(self) -> np.ndarray:
        values = [r.equity for r in self.records]
        return np.array([self.initial_capital] + values, dtype=np.float64)

    def final_equity(self) -> float:
        return self.records[-1].equity if self.records else self.initial_capital

    def summary(self, periods_per_year: int = TRADING_DAYS_PER_YEAR) -> dict:
        """Headline metrics; ranking metrics are None when undefined."""
        final = self.final_equity()
        out = {
            "n_days": len(self.records),
            "initial_capital": self.initial_capital,
            "final_equity": final,
            "total_return": final / self.initial_capital - 1.0,
            "annualized_return": None,
            "accuracy": None,
            "auc": None,
        }
        if not self.records:
            return out
        growth = final / self.initial_capital
        if growth > 0:
            out["annualized_return"] = growth ** (periods_per_year / len(self.records)) - 1.0
        try:
            out["accuracy"] = directional_accuracy(self.scores(), self.realized())
        except OneClassOnlyError:
            pass
        try:
            realized = self.realized()
            mask = realized != 0.0
            out["auc"] = roc_auc(self.scores()[mask], realized[mask] > 0.0)
        except OneClassOnlyError:
            pass
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_REPORT_HEADER)
            for r in self.records:
                writer.writerow([
                    r.date.isoformat(),
                    repr(r.score),
                    repr(r.realized),
                    "long" if r.long else "flat",
                    repr(r.equity),
                ])


@dataclass(frozen=True)
class WalkForwardRun:
    """A backtest report plus the final model state for checkpointing.

    The model fields are None when a `predictor` stand-in replaced the
    network, or when the history ends before the first trading day.
    """

    report: BacktestReport
    params: NetworkParams | None
    optimizer: RmsPropState | None
    scaler: FeatureScaler | None


def warmup_train(
    features: FeatureMatrix, cfg: WalkForwardConfig, variant: Variant
) -> tuple[NetworkParams, RmsPropState, FeatureScaler]:
    """Fit the scaler and train the initial model on the pre-trading segment.

    Eligible windows end at rows `window_length - 1 .. warmup_days - 2`: the
    target of a window ending on the last warm-up day is not realized until
    after the first prediction is due.
    """
    if len(features.dates) < cfg.warmup_days:
        raise TooShortHistoryError(
            f"{len(features.dates)} feature rows cannot cover "
            f"a {cfg.warmup_days}-day warm-up"
        )
    dataset = make_windows(features, cfg.window_length)
    n_warm = cfg.warmup_days - cfg.window_length
    if n_warm < 2:
        raise TooFewRowsError(
            f"warm-up of {cfg.warmup_days} days with a "
            f"{cfg.window_length}-day window leaves only {n_warm} training windows"
        )
    hyper = cfg.hyper if cfg.hyper is not None else default_hyperparameters(variant)
    init_seq, warm_seq, _ = np.random.SeedSequence(cfg.seed).spawn(3)
    scaled, scaler = normalize_features(
        dataset.windows[:n_warm], dataset.windows[:n_warm]
    )
    params = init_network(
        variant,
        dataset.windows.shape[2],
        hyper.hidden_units,
        cfg.window_length,
        np.random.default_rng(init_seq),
        dropout_rate=hyper.dropout_rate,
    )
    optimizer = init_rmsprop(
        params.trainable_tensors(), learning_rate=hyper.learning_rate
    )
    run_epochs(
        params, optimizer, scaled, dataset.targets[:n_warm],
        hyper.epochs, hyper.batch_size, np.random.default_rng(warm_seq),
    )
    return params, optimizer, scaler


def run_walk_forward(
    features: FeatureMatrix,
    cfg: WalkForwardConfig,
    variant: Variant,
    *,
    predictor=None,
) -> WalkForwardRun:
    """Replay history one day at a time and trade on each day's prediction.

    Day t (row index) scores the window ending at t with the current model,
    trades the realized return of day t + 1, and only then retrains on the
    newest windows whose targets are realized, i.e. those ending at or
    before t - 1.  Nothing dated after t can touch the day-t prediction.

    `predictor`, when given, replaces the network: it is called with each
    day's window-end row index and must return that day's score.  This
    isolates the trading and accounting plumbing from the model.
    """
    n = len(features.dates)
    if n < cfg.warmup_days:
        raise TooShortHistoryError(
            f"{n} feature rows < {cfg.warmup_days}-day warm-up"
        )
    if n == cfg.warmup_days:
        # history ends exactly where trading would begin
        return WalkForwardRun(BacktestReport((), cfg.initial_capital), None, None, None)

    params = optimizer = scaler = None
    daily_rng = None
    hyper = cfg.hyper if cfg.hyper is not None else default_hyperparameters(variant)
    if predictor is None:
        params, optimizer, scaler = warmup_train(features, cfg, variant)
        _, _, daily_seq = np.random.SeedSequence(cfg.seed).spawn(3)
        daily_rng = np.random.default_rng(daily_seq)

    dataset = make_windows(features, cfg.window_length)
    T = cfg.window_length
    records = []
    equity = cfg.initial_capital
    for t in range(cfg.warmup_days - 1, n - 1):
        i = t - (T - 1)
        if predictor is not None:
            score = float(predictor(t))
        else:
            score, _ = forward(params, scaler.transform(dataset.windows[i]), mode="infer")
        realized = float(dataset.targets[i])
        long_ = bool(score > 0.0)
        if long_:
            equity = equity * (1.0 + realized)
        records.append(DailyRecord(features.dates[t + 1], score, realized, long_, equity))

        if predictor is None and cfg.retrain_epochs > 0:
            # targets are realized for windows ending at or before t - 1
            hi = t - T + 1
            lo = max(0, hi - cfg.retrain_recent_windows)
            scaled, scaler = normalize_features(
                dataset.windows[lo:hi], dataset.windows[lo:hi]
            )
            run_epochs(
                params, optimizer, scaled, dataset.targets[lo:hi],
                cfg.retrain_epochs, hyper.batch_size, daily_rng,
            )

    report = BacktestReport(tuple(records), cfg.initial_capital)
    return WalkForwardRun(report, params, optimizer, scaler)


def walk_forward(
    features: FeatureMatrix,
    cfg: WalkForwardConfig,
    variant: Variant,
    *,
    predictor=None,
) -> BacktestReport:
    """`run_walk_forward` without the model state; see there for semantics."""
    return run_walk_forward(features, cfg, variant, predictor=predictor).report
