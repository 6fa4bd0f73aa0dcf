import datetime as dt
import json
import subprocess
import sys

import numpy as np
import pytest

from rnntrader.cli import build_parser, main, read_config_file, resolve_config
from rnntrader.nn import Variant, load_checkpoint
from rnntrader.timeseries import FillFlag, PriceSeries

EXPECTED_HEADER = ("date,return,var10,var20,ma10,ma30,boll_high,boll_mid,"
                   "boll_low,psy,rsi,garch_mu,garch_sigma2,target")


def _write_daily(path, n, seed=3, start=dt.date(2021, 1, 4)):
    rng = np.random.default_rng(seed)
    prices = 100.0 * np.cumprod(1.0 + rng.normal(0.0005, 0.01, size=n))
    with open(path, "w") as fh:
        fh.write("date,price\n")
        for i, price in enumerate(prices):
            fh.write(f"{(start + dt.timedelta(days=i)).isoformat()},{float(price)!r}\n")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One cleaned-and-featurized asset shared by the model-stage tests."""
    root = tmp_path_factory.mktemp("cli")
    raw = root / "bitcoin.csv"
    _write_daily(raw, 110)
    out = root / "runs"
    assert main(["clean", "--asset", str(raw), "--out", str(out)]) == 0
    assert main(["features", "--asset", str(out / "cleaned" / "bitcoin.csv"),
                 "--out", str(out)]) == 0
    return {"root": root, "raw": raw, "out": out,
            "features": out / "features" / "bitcoin.csv"}


class TestClean:
    def test_gap_free_input_passes_through(self, tmp_path):
        raw = tmp_path / "btc.csv"
        _write_daily(raw, 14)
        out = tmp_path / "runs"
        assert main(["clean", "--asset", str(raw), "--out", str(out)]) == 0
        series = PriceSeries.from_csv(out / "cleaned" / "btc.csv")
        assert len(series) == 14
        assert all(flag is FillFlag.OBSERVED for flag in series.fill_flags)
        counts = json.loads((out / "cleaned" / "btc_fills.json").read_text())
        assert counts == {"observed": 14, "forward_filled": 0, "interpolated": 0}

    def test_single_interior_gap_interpolated_once(self, tmp_path):
        # two trading weeks, Wednesday the 13th missing; weekends are
        # non-trading days and must be carried forward, not interpolated
        raw = tmp_path / "gold.csv"
        days = [4, 5, 6, 7, 8, 11, 12, 14, 15]
        with open(raw, "w") as fh:
            for d in days:
                fh.write(f"2021-01-{d:02d},{100.0 + d}\n")
        out = tmp_path / "runs"
        assert main(["clean", "--asset", str(raw), "--out", str(out)]) == 0
        series = PriceSeries.from_csv(out / "cleaned" / "gold.csv")
        flags = list(series.fill_flags)
        assert len(series) == 12  # Jan 4 through Jan 15
        assert flags.count(FillFlag.INTERPOLATED) == 1
        assert flags.count(FillFlag.FORWARD_FILLED) == 2
        by_date = dict(zip(series.dates, flags))
        assert by_date[dt.date(2021, 1, 13)] is FillFlag.INTERPOLATED

    def test_missing_input_fails(self, tmp_path, capsys):
        assert main(["clean", "--asset", str(tmp_path / "nope.csv"),
                     "--out", str(tmp_path / "runs")]) == 1
        assert "error:" in capsys.readouterr().err


class TestFeatures:
    def test_header_matches_contract(self, workspace):
        first = workspace["features"].read_text().splitlines()[0]
        assert first == EXPECTED_HEADER

    def test_row_count_and_sidecar(self, workspace):
        lines = workspace["features"].read_text().splitlines()
        assert len(lines) - 1 == 110 - 30
        sidecar = json.loads(
            (workspace["out"] / "features" / "bitcoin_model.json").read_text())
        assert sidecar["garch_on"] == "returns"
        assert 0.0 <= sidecar["garch"]["alpha1"] < 1.0
        assert sidecar["adf"]["variant"] == "none"
        assert sidecar["adf"]["reject_at_1pct"] is True  # returns are stationary

    def test_rerun_is_byte_identical(self, workspace, tmp_path):
        out2 = tmp_path / "again"
        cleaned = workspace["out"] / "cleaned" / "bitcoin.csv"
        assert main(["features", "--asset", str(cleaned), "--out", str(out2)]) == 0
        assert (out2 / "features" / "bitcoin.csv").read_bytes() == \
            workspace["features"].read_bytes()

    def test_garch_on_prices(self, workspace, tmp_path):
        out2 = tmp_path / "prices"
        cleaned = workspace["out"] / "cleaned" / "bitcoin.csv"
        assert main(["features", "--asset", str(cleaned), "--out", str(out2),
                     "--garch-on", "prices"]) == 0
        sidecar = json.loads((out2 / "features" / "bitcoin_model.json").read_text())
        assert sidecar["garch_on"] == "prices"
        assert sidecar["adf"]["variant"] == "trend"

    def test_constant_prices_fail(self, tmp_path, capsys):
        raw = tmp_path / "flat.csv"
        with open(raw, "w") as fh:
            for i in range(60):
                fh.write(f"{(dt.date(2021, 1, 4) + dt.timedelta(days=i)).isoformat()},50.0\n")
        out = tmp_path / "runs"
        assert main(["clean", "--asset", str(raw), "--out", str(out)]) == 0
        assert main(["features", "--asset", str(out / "cleaned" / "flat.csv"),
                     "--out", str(out)]) == 1
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_end_to_end(self, workspace):
        out = workspace["out"]
        assert main(["train", "--asset", str(workspace["features"]),
                     "--out", str(out), "--window", "5", "--units", "4",
                     "--batch-size", "16", "--epochs", "3", "--seed", "5"]) == 0
        ckpt = out / "checkpoints" / "bitcoin_at-bilstm_s5_global.ckpt"
        assert ckpt.exists()
        params, _, extras, meta = load_checkpoint(ckpt)
        assert params.variant is Variant.AT_BILSTM
        assert params.hidden_units == 4
        assert "scaler.mean" in extras and "scaler.std" in extras
        assert meta["kind"] == "global"

        summary = json.loads(
            (out / "reports" / "bitcoin_at-bilstm_s5_global_summary.json").read_text())
        assert summary["hyperparameters"]["hidden_units"] == 4
        assert summary["splits"]["train"]["n_windows"] == 60
        assert summary["splits"]["holdout"]["n_windows"] == 15
        assert summary["final_training_mse"] > 0.0

        loss_lines = (out / "reports" / "bitcoin_at-bilstm_s5_loss.csv").read_text().splitlines()
        assert loss_lines[0] == "epoch,mse"
        assert len(loss_lines) == 1 + 3

    def test_seed_required(self, workspace, tmp_path, capsys):
        assert main(["train", "--asset", str(workspace["features"]),
                     "--out", str(tmp_path / "r")]) == 1
        assert "seed" in capsys.readouterr().err


class TestWalkforward:
    ARGS = ["--window", "5", "--warmup", "60", "--units", "4",
            "--batch-size", "16", "--epochs", "4", "--retrain-epochs", "1",
            "--seed", "11"]

    def _run(self, workspace, out):
        return main(["walkforward", "--asset", str(workspace["features"]),
                     "--out", str(out), *self.ARGS])

    def test_reruns_are_byte_identical(self, workspace, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert self._run(workspace, out_a) == 0
        assert self._run(workspace, out_b) == 0
        for rel in ("reports/bitcoin_at-bilstm_s11_walkforward.csv",
                    "reports/bitcoin_at-bilstm_s11_walkforward_summary.json",
                    "checkpoints/bitcoin_at-bilstm_s11_walkforward.ckpt"):
            assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel

    def test_report_contents(self, workspace, tmp_path):
        out = tmp_path / "wf"
        assert self._run(workspace, out) == 0
        lines = (out / "reports" / "bitcoin_at-bilstm_s11_walkforward.csv").read_text().splitlines()
        assert lines[0] == "date,score,realized,position,equity"
        assert len(lines) - 1 == 80 - 60  # one trade per post-warm-up day
        summary = json.loads(
            (out / "reports" / "bitcoin_at-bilstm_s11_walkforward_summary.json").read_text())
        assert summary["n_days"] == 20
        assert summary["warmup_days"] == 60
        assert summary["initial_capital"] == 1000.0

    def test_seed_required(self, workspace, tmp_path, capsys):
        assert main(["walkforward", "--asset", str(workspace["features"]),
                     "--out", str(tmp_path / "r"), "--window", "5",
                     "--warmup", "60"]) == 1
        assert "seed" in capsys.readouterr().err


class TestReport:
    def test_frozen_inference_report(self, workspace, tmp_path):
        out = tmp_path / "wf"
        assert main(["walkforward", "--asset", str(workspace["features"]),
                     "--out", str(out), *TestWalkforward.ARGS]) == 0
        ckpt = out / "checkpoints" / "bitcoin_at-bilstm_s11_walkforward.ckpt"
        assert main(["report", "--asset", str(workspace["features"]),
                     "--checkpoint", str(ckpt), "--out", str(out)]) == 0
        base = "bitcoin_bitcoin_at-bilstm_s11_walkforward"
        lines = (out / "reports" / f"{base}_report.csv").read_text().splitlines()
        assert len(lines) - 1 == 80 - 5  # every window scores once
        summary = json.loads(
            (out / "reports" / f"{base}_report_summary.json").read_text())
        assert summary["checkpoint_meta"]["kind"] == "walkforward"
        assert summary["n_days"] == 75

    def test_missing_checkpoint_fails(self, workspace, tmp_path, capsys):
        assert main(["report", "--asset", str(workspace["features"]),
                     "--checkpoint", str(tmp_path / "no.ckpt"),
                     "--out", str(tmp_path / "r")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_checkpoint_flag_required(self, workspace, tmp_path, capsys):
        assert main(["report", "--asset", str(workspace["features"]),
                     "--out", str(tmp_path / "r")]) == 1
        assert "checkpoint" in capsys.readouterr().err


class TestConfigResolution:
    def test_flags_beat_config_file_beats_defaults(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(
            "epochs = 2\n"
            "units = 3\n"
            "learning_rate = 0.02   # tuned down\n"
            "\n"
            "window = 7\n"
        )
        args = build_parser().parse_args(
            ["train", "--asset", "x.csv", "--seed", "1",
             "--config", str(cfg_file), "--units", "4"])
        cfg = resolve_config(args)
        assert cfg.hyper.hidden_units == 4      # flag wins
        assert cfg.hyper.epochs == 2            # file beats default
        assert cfg.hyper.learning_rate == 0.02
        assert cfg.hyper.batch_size == 128      # untouched default
        assert cfg.window == 7

    def test_default_variant_selects_32_unit_row(self):
        args = build_parser().parse_args(["train", "--asset", "x.csv", "--seed", "0"])
        cfg = resolve_config(args)
        assert cfg.variant is Variant.AT_BILSTM
        assert (cfg.hyper.hidden_units, cfg.hyper.batch_size,
                cfg.hyper.learning_rate, cfg.hyper.epochs) == (32, 128, 0.01, 300)

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("bogus = 1\n")
        with pytest.raises(ValueError, match="unknown setting"):
            read_config_file(cfg_file)

    def test_malformed_config_line_rejected(self, tmp_path):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("epochs\n")
        with pytest.raises(ValueError, match="key = value"):
            read_config_file(cfg_file)

    def test_indicator_overrides_via_config(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("ma_windows = 5, 9\nrsi_window = 7\n")
        args = build_parser().parse_args(
            ["features", "--asset", "x.csv", "--config", str(cfg_file)])
        cfg = resolve_config(args)
        assert cfg.indicators.ma_windows == (5, 9)
        assert cfg.indicators.rsi_window == 7
        assert cfg.indicators.boll_window == 20

    def test_asset_kind_guess(self):
        args = build_parser().parse_args(["clean", "--asset", "data/btc_usd.csv"])
        assert resolve_config(args).kind.value == "bitcoin"
        args = build_parser().parse_args(["clean", "--asset", "data/lbma.csv"])
        assert resolve_config(args).kind.value == "gold"


def test_module_entrypoint_help():
    proc = subprocess.run([sys.executable, "-m", "rnntrader.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "walkforward" in proc.stdout
