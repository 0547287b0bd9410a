import hashlib
import json

import numpy as np
import pytest

from fxcast.cli import load_frame, main, DATA_DEFAULTS


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--t", "300", "--f", "4", "--planted", "2", "--seed", "7"]) == 0
    return out


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------- synth


def test_synth_is_byte_reproducible(tmp_path):
    args = ["--t", "500", "--f", "10", "--planted", "3", "--seed", "7"]
    assert main(["synth", "--out", str(tmp_path / "a")] + args) == 0
    assert main(["synth", "--out", str(tmp_path / "b")] + args) == 0
    for name in ("data.csv", "schema.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "data.csv").read_text().splitlines()[0]
    assert header == "date,rate," + ",".join(f"f{j}" for j in range(10))


def test_synth_bad_planted_index(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--f", "10", "--planted", "99"]) == 2
    assert "planted_feature 99" in capsys.readouterr().err


def test_manifest_lists_files_and_config(tmp_path):
    main(["synth", "--out", str(tmp_path), "--t", "50", "--f", "2"])
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["command"] == "synth"
    assert m["files"] == ["data.csv", "schema.json"]
    assert m["config"]["t"] == 50 and m["config"]["planted"] == 0


def test_argparse_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["bench", "--out", str(tmp_path), "--pairs", "32-16"])
    assert exc.value.code == 2


# ---------------------------------------------------------------- select


def test_select_finds_planted_feature(dataset, tmp_path, capsys):
    assert main(["select", "--out", str(tmp_path), "--data", str(dataset / "data.csv")]) == 0
    res = json.loads((tmp_path / "selection.json").read_text())
    assert "f2" in res["selected"]
    assert set(res) == {"selected", "trace", "lambda"}
    assert "f2" in capsys.readouterr().out


def test_select_max_features_one(dataset, tmp_path):
    assert main(["select", "--out", str(tmp_path), "--data", str(dataset / "data.csv"),
                 "--max-features", "1"]) == 0
    assert len(json.loads((tmp_path / "selection.json").read_text())["selected"]) == 1


def test_select_fixture_echoes_subset(dataset, tmp_path):
    assert main(["select", "--out", str(tmp_path), "--data", str(dataset / "data.csv"),
                 "--features", "paper-2024-selected"]) == 0
    res = json.loads((tmp_path / "selection.json").read_text())
    assert res["selected"] == ["HS300", "cpiu", "AUDUSD", "EURUSD", "um2", "inputu", "trade",
                               "udr", "USDX", "date"]
    assert res["trace"] == []


def test_select_explicit_candidates(dataset, tmp_path):
    assert main(["select", "--out", str(tmp_path), "--data", str(dataset / "data.csv"),
                 "--features", "f0,f2"]) == 0
    assert json.loads((tmp_path / "selection.json").read_text())["selected"][0] == "f2"
    assert main(["select", "--out", str(tmp_path), "--data", str(dataset / "data.csv"),
                 "--features", "f0,zz"]) == 3


def test_data_errors_exit_3(dataset, tmp_path):
    assert main(["select", "--out", str(tmp_path), "--data", str(tmp_path / "missing.csv")]) == 3
    bad = tmp_path / "bad.csv"
    text = (dataset / "data.csv").read_text().splitlines()
    text[5] = text[5].replace(text[5].split(",")[1], "abc", 1)
    bad.write_text("\n".join(text) + "\n")
    assert main(["select", "--out", str(tmp_path / "o"), "--data", str(bad),
                 "--schema", str(dataset / "schema.json")]) == 3


def test_exactly_one_data_source(dataset, tmp_path):
    assert main(["select", "--out", str(tmp_path)]) == 2
    assert main(["select", "--out", str(tmp_path), "--data", str(dataset / "data.csv"),
                 "--synth", "T=100"]) == 2
    assert main(["select", "--out", str(tmp_path), "--synth", "T=100,bogus=1"]) == 2


def test_date_filter(dataset):
    cfg = DATA_DEFAULTS | {"data": str(dataset / "data.csv"), "date_from": "2015-02-01",
                           "date_to": "2015-03-31"}
    frame = load_frame(cfg)
    assert len(frame) == 59
    assert str(frame.timestamps[0]) == "2015-02-01"


def test_inputs_are_not_mutated(dataset, tmp_path):
    before = {p.name: digest(p) for p in dataset.iterdir()}
    main(["select", "--out", str(tmp_path), "--data", str(dataset / "data.csv")])
    assert {p.name: digest(p) for p in dataset.iterdir()} == before


# ---------------------------------------------------------------- bench


BENCH = ["--models", "tsmixer,mlp", "--pairs", "32:16", "--epochs", "2", "--width", "8"]


def test_bench_two_row_grid_and_determinism(dataset, tmp_path, capsys):
    data = ["--data", str(dataset / "data.csv")]
    assert main(["bench", "--out", str(tmp_path / "a")] + data + BENCH) == 0
    assert main(["bench", "--out", str(tmp_path / "b")] + data + BENCH) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    rep = json.loads((a / "report.json").read_text())
    assert [(r["model"], r["L"], r["H"]) for r in rep["runs"]] == [("tsmixer", 32, 16), ("mlp", 32, 16)]
    manifest = json.loads((a / "manifest.json").read_text())
    assert "forecasts/mlp_L32_H16.csv" in manifest["files"]
    assert manifest["config"]["epochs"] == 2
    assert "tsmixer" in capsys.readouterr().out


def test_bench_rejects_zero_epochs(dataset, tmp_path):
    assert main(["bench", "--out", str(tmp_path), "--data", str(dataset / "data.csv"), "--epochs", "0"]) == 2
    assert main(["bench", "--out", str(tmp_path), "--data", str(dataset / "data.csv"),
                 "--models", "timesnet"]) == 2


def test_bench_partial_failure_exit_4(dataset, tmp_path):
    code = main(["bench", "--out", str(tmp_path), "--data", str(dataset / "data.csv"), "--models",
                 "mlp,transformer", "--pairs", "16:8", "--epochs", "1", "--width", "4"])
    assert code == 0  # widths are rounded to the head count
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"hparams": {"transformer": {"d_model": 12}}}))
    code = main(["bench", "--out", str(tmp_path / "x"), "--config", str(cfg), "--data",
                 str(dataset / "data.csv"), "--models", "mlp,transformer", "--pairs", "16:8",
                 "--epochs", "1", "--width", "4"])
    assert code == 4
    rep = json.loads((tmp_path / "x" / "report.json").read_text())
    assert "error" in rep["runs"][1] and "error" not in rep["runs"][0]


def test_config_file_precedence(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 3, "models": ["mlp"], "pairs": [[16, 8]], "width": 4}))
    data = ["--data", str(dataset / "data.csv")]
    assert main(["bench", "--out", str(tmp_path / "a"), "--config", str(cfg)] + data) == 0
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["config"]["epochs"] == 3
    assert main(["bench", "--out", str(tmp_path / "b"), "--config", str(cfg), "--epochs", "1"] + data) == 0
    echo = json.loads((tmp_path / "b" / "manifest.json").read_text())["config"]
    assert echo["epochs"] == 1 and echo["models"] == ["mlp"]
    cfg.write_text(json.dumps({"epochz": 3}))
    assert main(["bench", "--out", str(tmp_path / "c"), "--config", str(cfg)] + data) == 2


def test_bench_auto_features(dataset, tmp_path):
    assert main(["bench", "--out", str(tmp_path), "--data", str(dataset / "data.csv"), "--features",
                 "auto", "--models", "mlp", "--pairs", "16:8", "--epochs", "1", "--width", "4"]) == 0
    feats = json.loads((tmp_path / "manifest.json").read_text())["config"]["features"]
    assert feats[0] == "rate" and "f2" in feats


# ---------------------------------------------------------------- explain


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    assert main(["bench", "--out", str(out), "--data", str(dataset / "data.csv"), "--models", "tsmixer",
                 "--pairs", "32:16", "--epochs", "30", "--checkpoints"]) == 0
    return out / "checkpoints" / "tsmixer_L32_H16_fold4.fxck"


def test_explain_default_windows_top_feature_is_planted(dataset, trained, tmp_path, capsys):
    assert main(["explain", "--out", str(tmp_path), "--data", str(dataset / "data.csv"),
                 "--checkpoint", str(trained)]) == 0
    assert "top feature: f2" in capsys.readouterr().out
    hm = json.loads((tmp_path / "heatmaps.json").read_text())
    mass = hm["aggregate_column_mass"]
    assert max(mass, key=mass.get) == "f2"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert "aggregate.svg" in manifest["files"] and manifest["config"]["fold"] == 4


def test_explain_single_window_aggregate_is_identical(dataset, trained, tmp_path):
    assert main(["explain", "--out", str(tmp_path), "--data", str(dataset / "data.csv"),
                 "--checkpoint", str(trained), "--windows", "7:8"]) == 0
    assert (tmp_path / "window_7.csv").read_bytes() == (tmp_path / "aggregate.csv").read_bytes()


def test_explain_out_of_range_window(dataset, trained, tmp_path):
    assert main(["explain", "--out", str(tmp_path), "--data", str(dataset / "data.csv"),
                 "--checkpoint", str(trained), "--windows", "100000"]) == 2


def test_explain_checkpoint_mismatch(dataset, trained, tmp_path):
    assert main(["explain", "--out", str(tmp_path), "--synth", "T=300,F=2",
                 "--checkpoint", str(trained)]) == 5
    assert main(["explain", "--out", str(tmp_path), "--data", str(dataset / "data.csv"),
                 "--features", "f0,f1", "--checkpoint", str(trained)]) == 5
    assert main(["explain", "--out", str(tmp_path), "--data", str(dataset / "data.csv"),
                 "--checkpoint", str(dataset / "data.csv")]) == 5
    assert main(["explain", "--out", str(tmp_path), "--data", str(dataset / "data.csv"),
                 "--checkpoint", str(tmp_path / "none.fxck")]) == 5


def test_explain_outputs_are_reproducible(dataset, trained, tmp_path):
    args = ["--data", str(dataset / "data.csv"), "--checkpoint", str(trained), "--windows", "3,9"]
    main(["explain", "--out", str(tmp_path / "a")] + args)
    main(["explain", "--out", str(tmp_path / "b")] + args)
    for name in ("aggregate.csv", "heatmaps.json", "manifest.json", "window_9.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_explain_input_gradient_method(dataset, trained, tmp_path):
    assert main(["explain", "--out", str(tmp_path), "--data", str(dataset / "data.csv"),
                 "--checkpoint", str(trained), "--windows", "0:3", "--method", "input_gradient"]) == 0
    vals = np.loadtxt(tmp_path / "aggregate.csv", delimiter=",", skiprows=1, usecols=range(1, 6))
    assert vals.max() == 1.0
