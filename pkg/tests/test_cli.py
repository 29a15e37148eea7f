import csv
import json
import logging

import pytest

from edgesched.cli import OUT_ENV, main, read_manifest
from edgesched.simengine import read_metrics_jsonl


@pytest.fixture(scope="module")
def profiled(tmp_path_factory):
    out = tmp_path_factory.mktemp("out")
    assert main(["profile", "--out-dir", str(out)]) == 0
    return out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_usage_errors_exit_2(tmp_path):
    assert main([]) == 2
    assert main(["run", "--router", "nope"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["--version"]) == 0


def test_run_without_profiles_explains(tmp_path, capsys):
    assert main(["run", "--out-dir", str(tmp_path), "--slots", "2"]) == 2
    assert "edgesched profile" in capsys.readouterr().err


def test_invalid_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    main(["init-config", str(bad)])
    bad.write_text(bad.read_text().replace("slots: 200", "slots: -3"))
    assert main(["run", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert "slots: must be >= 0" in capsys.readouterr().err


def test_profile_files(profiled):
    init = profiled / "init" / "seed0"
    rows = _rows(init / "profiles.csv")
    nodes = {r["node_id"] for r in rows}
    assert len(nodes) == 4 and len(rows) == 4 * 12
    man = read_manifest(init)
    assert set(man["artifacts"].values()) == {"latency_store.csv", "profiles.csv", "config.yaml"}


def test_profile_is_deterministic(profiled, tmp_path):
    assert main(["profile", "--out-dir", str(tmp_path)]) == 0
    for name in ("profiles.csv", "latency_store.csv", "config.yaml"):
        assert (tmp_path / "init/seed0" / name).read_bytes() == (profiled / "init/seed0" / name).read_bytes()


def test_run_slots_override(profiled):
    assert main(["run", "--out-dir", str(profiled), "--router", "random", "--inter-node", "off", "--slots", "5"]) == 0
    run = profiled / "random-off-seed0"
    header, rows = read_metrics_jsonl(run / "metrics.jsonl")
    assert len(rows) == 5 and header["schema_version"] == 1 and header["inter_node"] == "off"
    man = read_manifest(run)
    for rel in man["artifacts"].values():
        assert (run / rel).exists()
    assert not list(run.glob(".manifest-*"))


def test_ppo_run_writes_checkpoint_and_train_log(profiled):
    assert main(["run", "--out-dir", str(profiled), "--router", "ppo", "--slots", "3"]) == 0
    run = profiled / "ppo-on-seed0"
    man = read_manifest(run)
    assert man["artifacts"]["checkpoint"] == "policy.ckpt"
    assert len(_rows(run / "train_log.csv")) >= 1


def test_static_deployment_run_dir(profiled):
    assert main(["run", "--out-dir", str(profiled), "--router", "oracle", "--deployment", "mixed2",
                 "--slots", "2"]) == 0
    assert _rows(profiled / "mixed2-oracle-on-seed0" / "summary.csv")[0]["deployment"] == "mixed2"


def test_rerun_from_manifest_is_byte_identical(profiled, tmp_path):
    assert main(["run", "--out-dir", str(profiled), "--router", "linucb", "--slots", "4"]) == 0
    first = profiled / "linucb-on-seed0"
    cmd = read_manifest(first)["command"]
    # same inputs, different output root
    (tmp_path / "init").symlink_to(profiled / "init")
    i = cmd.index("--out-dir")
    cmd[i + 1] = str(tmp_path)
    assert main(cmd) == 0
    assert (tmp_path / first.name / "metrics.jsonl").read_bytes() == (first / "metrics.jsonl").read_bytes()


def test_out_dir_from_environment(profiled, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(profiled))
    assert main(["run", "--router", "oracle", "--slots", "1"]) == 0
    assert (profiled / "oracle-on-seed0" / "manifest.json").exists()


def test_fit_latency_synthetic(tmp_path):
    assert main(["fit-latency", "--synthetic", "--out-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "latency/rmse_table.csv")
    by_model = {}
    for r in rows:
        by_model.setdefault(r["model_id"], {})[r["family"]] = float(r["rmse"])
    for fams in by_model.values():
        assert fams["quadratic"] < fams["linear"]


def test_fit_latency_family_filter(tmp_path):
    assert main(["fit-latency", "--synthetic", "--families", "linear", "--out-dir", str(tmp_path)]) == 0
    assert {r["family"] for r in _rows(tmp_path / "latency/latency_store.csv")} == {"linear"}


def test_fit_latency_bad_samples(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("q,R,seconds\n")
    assert main(["fit-latency", "--samples", str(empty), "--out-dir", str(tmp_path)]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("q,R,seconds\n10,0.5,1.0\n10,abc,2\n")
    assert main(["fit-latency", "--samples", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert main(["fit-latency", "--synthetic", "--families", "spline", "--out-dir", str(tmp_path)]) == 2


def test_fit_latency_from_file(tmp_path):
    path = tmp_path / "s.csv"
    lines = [f"{q},{R},{(0.003 * q - 0.7 * R) ** 2 + 0.05 * q + 2}" for q in (0, 40, 80, 120) for R in (0.3, 0.6, 0.9)]
    path.write_text("\n".join(lines) + "\n")
    assert main(["fit-latency", "--samples", str(path), "--families", "quadratic", "linear",
                 "--out-dir", str(tmp_path)]) == 0
    ranks = {r["family"]: r["rank"] for r in _rows(tmp_path / "latency/rmse_table.csv")}
    assert ranks == {"quadratic": "1", "linear": "2"}


def test_bench_optimizer(tmp_path):
    assert main(["bench-optimizer", "--instances", "0", "--out-dir", str(tmp_path / "a")]) == 0
    assert json.loads((tmp_path / "a/bench/bench_report.json").read_text())["instances"] == 0
    for d in ("b", "c"):
        assert main(["bench-optimizer", "--instances", "4", "--seed", "5", "--out-dir", str(tmp_path / d)]) == 0
    assert (tmp_path / "b/bench/gaps.csv").read_bytes() == (tmp_path / "c/bench/gaps.csv").read_bytes()
    assert main(["bench-optimizer", "--instances", "-1", "--out-dir", str(tmp_path)]) == 2


def test_report(profiled, tmp_path, caplog):
    for router in ("oracle", "random"):
        assert main(["run", "--out-dir", str(profiled), "--router", router, "--slots", "2"]) == 0
    runs = [str(profiled / f"{r}-on-seed0") for r in ("oracle", "random")]
    stray = tmp_path / "stray"
    stray.mkdir()
    with caplog.at_level(logging.WARNING):
        assert main(["report", *runs, str(stray), "--out-dir", str(tmp_path)]) == 0
    assert "no manifest" in caplog.text
    rows = _rows(tmp_path / "report/runs.csv")
    assert [r["router"] for r in rows] == ["oracle", "random"]
    comp = _rows(tmp_path / "report/comparison.csv")
    assert {r["metric"] for r in comp} >= {"mean_quality", "mean_drop_rate"}
    assert _rows(tmp_path / "report/model_share.csv")
    assert main(["report", str(stray), "--out-dir", str(tmp_path)]) == 2


def test_report_warns_on_mixed_configs(profiled, tmp_path, caplog):
    assert main(["run", "--out-dir", str(profiled), "--router", "oracle", "--slots", "2"]) == 0
    assert main(["run", "--out-dir", str(profiled), "--router", "oracle", "--slots", "3",
                 "--inter-node", "off"]) == 0
    with caplog.at_level(logging.WARNING):
        assert main(["report", str(profiled / "oracle-on-seed0"), str(profiled / "oracle-off-seed0"),
                     "--out-dir", str(tmp_path)]) == 0
    assert "different configurations" in caplog.text


def test_init_config_round_trip(tmp_path):
    from edgesched.core import config_hash, default_config, load_config
    assert main(["init-config", str(tmp_path / "c.yaml"), "--seed", "3"]) == 0
    assert config_hash(load_config(tmp_path / "c.yaml")) == config_hash(default_config(3))


def test_run_with_trace(profiled, tmp_path):
    trace = tmp_path / "trace.txt"
    trace.write_bytes(b"120\r\n0\r\n80\r\n")
    assert main(["run", "--out-dir", str(profiled), "--router", "random", "--trace", str(trace)]) == 0
    _, rows = read_metrics_jsonl(profiled / "random-on-seed0" / "metrics.jsonl")
    assert [r["b_t"] for r in rows] == [120, 0, 80]
    trace.write_text("10\n-4\n")
    assert main(["run", "--out-dir", str(profiled), "--trace", str(trace)]) == 2
