"""End-to-end tests for the command-line harness on a tiny synthetic run.

One session-scoped workspace carries a trained pair of checkpoints through
the forecast/evaluate/plot/multi tests; error-path tests get their own
throwaway directories.
"""

from __future__ import annotations

import datetime as dt
import json
import re
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from gridcast.cli import load_run_config, main
from gridcast.synth import synth_table, write_synth_csv

START = dt.date(2021, 1, 4)  # a Monday


def _write_config(path: Path, data_csv: Path, out_dir: Path, extra: str = "") -> Path:
    path.write_text(
        f"""
data: {{csv: {data_csv}}}
output_dir: {out_dir}
split:
  train: [2021-01-04, 2021-01-26]
  test: [2021-01-27, 2021-02-01]
schedule: {{steps: 8, beta_start: 1.0e-4, beta_end: 0.05}}
model: {{depth: 2, heads: 2, base_channels: 8, time_embed_dim: 16, seed: 0}}
train: {{learning_rate: 1.0e-3, batch_size: 16, epochs: 4, seed: 0}}
sampler: {{n_scenarios: 6, p_uncond: 0.3, seed: 0}}
intervals: {{gammas: [0.5, 0.8], kind: adaptive}}
multi: {{enabled: true}}
{extra}
"""
    )
    return path


@pytest.fixture(scope="session")
def workspace(tmp_path_factory) -> dict:
    """Synthetic 30-day dataset, trained checkpoints, one forecast day."""
    root = tmp_path_factory.mktemp("cli")
    data = write_synth_csv(root / "data.csv", days=30, start=START, step_minutes=60, seed=1)
    cfg = _write_config(root / "run.yaml", data, root / "out")
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["forecast", "--config", str(cfg), "--day", "2021-01-27"]) == 0
    return {"root": root, "cfg": cfg, "out": root / "out", "data": data}


class TestSynth:
    def test_deterministic_bytes(self, tmp_path):
        a = write_synth_csv(tmp_path / "a.csv", days=4, start=START, step_minutes=60, seed=9)
        b = write_synth_csv(tmp_path / "b.csv", days=4, start=START, step_minutes=60, seed=9)
        assert a.read_bytes() == b.read_bytes()
        c = write_synth_csv(tmp_path / "c.csv", days=4, start=START, step_minutes=60, seed=10)
        assert a.read_bytes() != c.read_bytes()

    def test_table_shape_and_ranges(self):
        table = synth_table(days=7, start=START, step_minutes=30, seed=0)
        assert len(table) == 7 * 48
        assert list(table.columns) == [
            "timestamp", "load", "pv", "wind", "weather_temp", "weather_irr", "weather_wind",
        ]
        assert (table["pv"] >= 0).all() and (table["wind"] >= 0).all()
        assert (table["load"] > 0).all()
        # night hours carry no pv
        hours = table["timestamp"].dt.hour
        assert np.all(table.loc[(hours < 5) | (hours > 20), "pv"] == 0.0)

    def test_weekend_amplitude_drop(self):
        table = synth_table(days=14, start=START, step_minutes=60, seed=2)
        dow = table["timestamp"].dt.dayofweek
        weekday = table.loc[dow < 5, "load"].mean()
        sunday = table.loc[dow == 6, "load"].mean()
        assert sunday < 0.9 * weekday

    def test_synth_cli_exit_codes(self, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["synth", "--out", str(out), "--days", "3", "--step-minutes", "60"]) == 0
        assert out.exists()
        assert main(["synth", "--out", str(out), "--days", "0"]) == 3
        assert main(["synth", "--out", str(out), "--days", "3", "--step-minutes", "7"]) == 3


class TestRunConfig:
    def test_defaults_and_overrides(self, tmp_path):
        data = write_synth_csv(tmp_path / "d.csv", days=8, start=START, step_minutes=60, seed=0)
        cfg = _write_config(tmp_path / "c.yaml", data, tmp_path / "o")
        parsed = load_run_config(cfg)
        assert parsed.steps == 8
        assert parsed.sampler.N == 6
        assert parsed.gammas == (0.5, 0.8)
        over = load_run_config(
            cfg, ("sampler.p_uncond=0.6", "model.depth=4", "intervals.kind=symmetric")
        )
        assert over.sampler.p_uncond == 0.6
        assert over.model["depth"] == 4
        assert over.interval_kind == "symmetric"

    def test_missing_data_file_names_path(self, tmp_path, capsys):
        cfg = _write_config(tmp_path / "c.yaml", tmp_path / "nope.csv", tmp_path / "o")
        assert main(["train", "--config", str(cfg)]) == 2
        assert "nope.csv" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "absent.yaml")]) == 2

    def test_config_rejections(self, tmp_path):
        data = write_synth_csv(tmp_path / "d.csv", days=8, start=START, step_minutes=60, seed=0)
        cfg = _write_config(tmp_path / "c.yaml", data, tmp_path / "o")
        for bad in (
            "typo_section.x=1",
            "intervals.gammas=[0.8, 0.5]",
            "intervals.gammas=[0.5, 1.5]",
            "intervals.kind=quantile",
            "sampler.p_uncond=1.5",
            "schedule.beta_start=0.9",
            "split.train=[2021-02-01, 2021-01-04]",
        ):
            assert main(["forecast", "--config", str(cfg), "--day", "2021-01-27",
                         "--set", bad]) == 2, bad

    def test_invalid_date_argument(self, workspace):
        assert main(["forecast", "--config", str(workspace["cfg"]), "--day", "not-a-date"]) == 2


class TestTrain:
    def test_checkpoints_and_traces_exist(self, workspace):
        out = workspace["out"]
        for role in ("cond", "uncond", "multi"):
            assert (out / f"model_{role}.ckpt").exists()
            trace = (out / f"loss_{role}.csv").read_text().splitlines()
            assert trace[0] == "epoch,mean_loss"
            assert len(trace) == 1 + 4  # header + epochs
            losses = [float(line.split(",")[1]) for line in trace[1:]]
            assert all(np.isfinite(losses))

    def test_retrain_gives_identical_loss_trace(self, workspace, tmp_path):
        cfg = _write_config(tmp_path / "r.yaml", workspace["data"], tmp_path / "out2",
                            extra="multi: {enabled: false}")
        assert main(["train", "--config", str(cfg)]) == 0
        a = (tmp_path / "out2" / "loss_cond.csv").read_bytes()
        b = (workspace["out"] / "loss_cond.csv").read_bytes()
        assert a == b

    def test_multi_epoch_override(self, workspace, tmp_path):
        cfg = _write_config(tmp_path / "m.yaml", workspace["data"], tmp_path / "om")
        assert main(["train", "--config", str(cfg), "--set", "multi.epochs=6"]) == 0
        multi = (tmp_path / "om" / "loss_multi.csv").read_text().splitlines()
        cond = (tmp_path / "om" / "loss_cond.csv").read_text().splitlines()
        assert len(multi) == 1 + 6  # override applies to the joint model only
        assert len(cond) == 1 + 4
        assert main(["train", "--config", str(cfg), "--set", "multi.epochs=0"]) == 2

    def test_empty_training_split_is_precondition(self, workspace, tmp_path):
        cfg = _write_config(tmp_path / "e.yaml", workspace["data"], tmp_path / "oe")
        # window needs 6 preceding days; a 3-day split yields none
        rc = main(["train", "--config", str(cfg),
                   "--set", "split.train=[2021-01-04, 2021-01-06]"])
        assert rc == 3

    def test_lock_blocks_concurrent_run(self, workspace, tmp_path):
        out = workspace["out"]
        lock = out / ".gridcast.lock"
        lock.write_text("held\n")
        try:
            rc = main(["forecast", "--config", str(workspace["cfg"]), "--day", "2021-01-28"])
            assert rc == 2
        finally:
            lock.unlink()


class TestForecast:
    def test_artifacts_and_shapes(self, workspace):
        out = workspace["out"]
        scen = pd.read_csv(out / "scenarios_2021-01-27.csv")
        assert list(scen.columns[:2]) == ["scenario_id", "provenance"]
        assert scen.shape == (6, 2 + 24)
        counts = scen["provenance"].value_counts()
        assert counts.get("unconditional", 0) == 2  # round(0.3 * 6)
        assert counts.get("conditional", 0) == 4

        iv = pd.read_csv(out / "intervals_2021-01-27.csv")
        assert list(iv.columns) == ["timestamp", "z_max", "lo_50", "hi_50", "lo_80", "hi_80"]
        assert len(iv) == 24
        assert (iv["lo_80"] <= iv["lo_50"]).all() and (iv["hi_50"] <= iv["hi_80"]).all()
        ts = pd.to_datetime(iv["timestamp"])
        assert ts.iloc[0] == pd.Timestamp("2021-01-27 00:00")
        assert (ts.diff().dropna() == pd.Timedelta(hours=1)).all()

        sidecar = json.loads((out / "scenarios_2021-01-27.json").read_text())
        assert sidecar["day"] == "2021-01-27"
        assert sidecar["provenance_counts"] == {"conditional": 4, "unconditional": 2}
        assert sidecar["schedule"]["steps"] == 8

    def test_rerun_byte_identical(self, workspace, tmp_path):
        cfg = _write_config(tmp_path / "c.yaml", workspace["data"], workspace["out"])
        before = (workspace["out"] / "scenarios_2021-01-27.csv").read_bytes()
        assert main(["forecast", "--config", str(cfg), "--day", "2021-01-27"]) == 0
        after = (workspace["out"] / "scenarios_2021-01-27.csv").read_bytes()
        assert after == before

    def test_missing_checkpoint_exit_2(self, workspace, tmp_path, capsys):
        cfg = _write_config(tmp_path / "c.yaml", workspace["data"], tmp_path / "empty_out")
        assert main(["forecast", "--config", str(cfg), "--day", "2021-01-27"]) == 2
        assert "checkpoint" in capsys.readouterr().err

    def test_day_without_history_exit_3(self, workspace):
        # 2021-01-05 has only one preceding day in the frame
        assert main(["forecast", "--config", str(workspace["cfg"]), "--day", "2021-01-05"]) == 3

    def test_schedule_mismatch_exit_3(self, workspace, tmp_path):
        cfg = _write_config(tmp_path / "c.yaml", workspace["data"], workspace["out"])
        rc = main(["forecast", "--config", str(cfg), "--day", "2021-01-27",
                   "--set", "schedule.steps=9"])
        assert rc == 3


class TestEvaluate:
    def test_report_written_with_totals(self, workspace):
        cfg, out = workspace["cfg"], workspace["out"]
        assert main(["evaluate", "--config", str(cfg),
                     "--first", "2021-01-27", "--last", "2021-01-29"]) == 0
        table = pd.read_csv(out / "report_2021-01-27_2021-01-29.csv")
        assert list(table.columns) == [
            "season", "count", "MAPE", "ACE_50", "PIAW_50", "Winkler_50",
            "ACE_80", "PIAW_80", "Winkler_80",
        ]
        total = table[table["season"] == "Total"].iloc[0]
        assert total["count"] == 3 * 24
        assert np.isfinite(total["MAPE"])
        payload = json.loads((out / "report_2021-01-27_2021-01-29.json").read_text())
        assert payload["sections"]["Total"]["count"] == 72

    def test_reuses_existing_scenario_files(self, workspace, tmp_path):
        # a stale checkpoint-free output dir with scenario CSVs present
        # must evaluate without touching the models
        out2 = tmp_path / "reuse"
        out2.mkdir()
        for name in ("scenarios_2021-01-27.csv",):
            (out2 / name).write_bytes((workspace["out"] / name).read_bytes())
        cfg = _write_config(tmp_path / "c.yaml", workspace["data"], out2)
        assert main(["evaluate", "--config", str(cfg),
                     "--first", "2021-01-27", "--last", "2021-01-27"]) == 0
        assert (out2 / "report_2021-01-27_2021-01-27.csv").exists()
        assert not (out2 / "model_cond.ckpt").exists()

    def test_empty_range_exit_3(self, workspace):
        rc = main(["evaluate", "--config", str(workspace["cfg"]),
                   "--first", "2021-01-29", "--last", "2021-01-27"])
        assert rc == 3

    def test_day_outside_data_exit_3(self, workspace):
        rc = main(["evaluate", "--config", str(workspace["cfg"]),
                   "--first", "2022-06-01", "--last", "2022-06-02"])
        assert rc == 3


class TestPlot:
    def test_svg_element_counts(self, workspace, tmp_path):
        out = tmp_path / "fan.svg"
        rc = main(["plot", "--intervals", str(workspace["out"] / "intervals_2021-01-27.csv"),
                   "--actuals", str(workspace["data"]), "--out", str(out)])
        assert rc == 0
        svg = out.read_text()
        root = ET.fromstring(svg)  # well-formed XML
        assert root.tag.endswith("svg")
        assert len(re.findall(r"<polygon\b", svg)) == 2  # one band per level
        assert len(re.findall(r"<polyline\b", svg)) == 2  # actual + max-density point

    def test_zero_width_bands_still_valid(self, tmp_path):
        times = [f"2021-01-27T{h:02d}:00:00" for h in range(4)]
        iv = tmp_path / "iv.csv"
        iv.write_text(
            "timestamp,z_max,lo_50,hi_50,lo_90,hi_90\n"
            + "\n".join(f"{t},5.0,5.0,5.0,5.0,5.0" for t in times)
            + "\n"
        )
        act = tmp_path / "act.csv"
        act.write_text("timestamp,net_load\n" + "\n".join(f"{t},5.0" for t in times) + "\n")
        out = tmp_path / "flat.svg"
        assert main(["plot", "--intervals", str(iv), "--actuals", str(act),
                     "--out", str(out)]) == 0
        svg = out.read_text()
        ET.fromstring(svg)
        assert len(re.findall(r"<polygon\b", svg)) == 2

    def test_misaligned_timestamps_exit_3(self, workspace, tmp_path):
        shifted = tmp_path / "shifted.csv"
        table = pd.read_csv(workspace["data"])
        table["timestamp"] = pd.to_datetime(table["timestamp"]) + pd.Timedelta(minutes=7)
        table.to_csv(shifted, index=False)
        rc = main(["plot", "--intervals", str(workspace["out"] / "intervals_2021-01-27.csv"),
                   "--actuals", str(shifted), "--out", str(tmp_path / "x.svg")])
        assert rc == 3

    def test_unreadable_interval_csv_exit_2(self, workspace, tmp_path):
        rc = main(["plot", "--intervals", str(tmp_path / "absent.csv"),
                   "--actuals", str(workspace["data"]), "--out", str(tmp_path / "x.svg")])
        assert rc == 2


class TestMulti:
    def test_joint_artifacts(self, workspace):
        cfg, out = workspace["cfg"], workspace["out"]
        assert main(["multi", "--config", str(cfg), "--day", "2021-01-28"]) == 0
        frames = {}
        for row in ("load", "res", "net_load"):
            path = out / f"multi_{row}_2021-01-28.csv"
            assert path.exists()
            frames[row] = pd.read_csv(path)
            assert frames[row].shape == (6, 2 + 24)
        cons = pd.read_csv(out / "consistency_2021-01-28.csv")
        assert list(cons.columns) == ["scenario_id", "mean_abs_residual_mw"]
        assert len(cons) == 6
        # the report is exactly the residual of the three dumps
        tcols = [f"t{k}" for k in range(24)]
        resid = np.abs(
            frames["load"][tcols].to_numpy()
            - frames["res"][tcols].to_numpy()
            - frames["net_load"][tcols].to_numpy()
        ).mean(axis=1)
        np.testing.assert_allclose(cons["mean_abs_residual_mw"].to_numpy(), resid, rtol=1e-12)

    def test_missing_multi_checkpoint_exit_2(self, workspace, tmp_path):
        out2 = tmp_path / "nock"
        out2.mkdir()
        for role in ("cond", "uncond"):  # only the univariate pair present
            (out2 / f"model_{role}.ckpt").write_bytes(
                (workspace["out"] / f"model_{role}.ckpt").read_bytes()
            )
        cfg = _write_config(tmp_path / "c.yaml", workspace["data"], out2)
        assert main(["multi", "--config", str(cfg), "--day", "2021-01-28"]) == 2


class TestFailureHygiene:
    def test_failed_run_leaves_no_partial_artifacts(self, workspace, tmp_path):
        out2 = tmp_path / "clean"
        cfg = _write_config(tmp_path / "c.yaml", workspace["data"], out2)
        rc = main(["forecast", "--config", str(cfg), "--day", "2021-01-27"])
        assert rc == 2  # no checkpoints
        leftovers = list(out2.glob("*")) if out2.exists() else []
        assert leftovers == []

    def test_lock_released_after_failure(self, workspace):
        # ineligible day fails inside the locked section; the lock must go
        rc = main(["forecast", "--config", str(workspace["cfg"]), "--day", "2021-01-05"])
        assert rc == 3
        assert not (workspace["out"] / ".gridcast.lock").exists()
        rc = main(["forecast", "--config", str(workspace["cfg"]), "--day", "2021-01-27"])
        assert rc == 0
