import io
import json
import logging
from unittest.mock import Mock

import pandas as pd
import pytest

import cli
from trip_data import History, dump_trips, load_trips
from conftest import make_trip


def test_invalid_log_level_warn(monkeypatch, caplog):
    mock_run = Mock(return_value=0)
    monkeypatch.setattr(cli, "run", mock_run)
    monkeypatch.setenv("ROUTEPREDICT_LOG_LEVEL", "BADLEVEL")

    with caplog.at_level(logging.WARNING):
        with pytest.raises(SystemExit) as exc:
            cli.main()

    assert exc.value.code == 0
    assert "Invalid log level BADLEVEL provided, falling back to INFO" in caplog.text
    mock_run.assert_called_once_with()


@pytest.fixture
def corpus_dir(tmp_path, cfg):
    out = tmp_path / "corpus"
    status = cli.run(
        [
            "generate",
            "--output",
            str(out),
            "--grid",
            "12,12",
            "--pois",
            "5",
            "--od-pairs",
            "6",
            "--trips",
            "60",
            "--seed",
            "3",
        ]
    )
    assert status == 0
    return out


@pytest.fixture
def toy_trips(tmp_path):
    east = [f"e{k}" for k in range(8)]
    west = [f"w{k}" for k in range(8)]
    history = History(
        trips=tuple(make_trip(f"t{k}", east if k % 2 else west) for k in range(6))
    )
    path = tmp_path / "toy.jsonl"
    with path.open("w") as fh:
        dump_trips(history, fh)
    return path


def test_generate_writes_corpus(corpus_dir):
    history = load_trips(corpus_dir / "trips.jsonl")
    assert len(history) == 60
    truth = json.loads((corpus_dir / "ground_truth.json").read_text())
    assert len(truth["od_pairs"]) == 6


def test_generate_is_deterministic(corpus_dir, tmp_path):
    again = tmp_path / "again"
    argv = ["generate", "--output", str(again), "--grid", "12,12", "--pois", "5"]
    argv += ["--od-pairs", "6", "--trips", "60", "--seed", "3"]
    assert cli.run(argv) == 0
    assert (again / "trips.jsonl").read_bytes() == (corpus_dir / "trips.jsonl").read_bytes()


def test_cluster_partitions_trips(corpus_dir, tmp_path):
    out = tmp_path / "clusters.json"
    argv = ["cluster", "--input", str(corpus_dir / "trips.jsonl"), "--output", str(out)]
    assert cli.run(argv + ["--clustering", "route"]) == 0
    clusters = json.loads(out.read_text())["clusters"]
    members = [t for c in clusters for t in c["trip_ids"]]
    assert sorted(members) == sorted(load_trips(corpus_dir / "trips.jsonl").trip_ids)


def test_train_and_predict(toy_trips, tmp_path, cfg):
    bundle = tmp_path / "model.json"
    assert cli.run(["train", "--input", str(toy_trips), "--output", str(bundle)]) == 0
    stored = json.loads(bundle.read_text())
    assert len(stored["segments"]) == 16
    assert len(stored["clusters"]) == 2

    stdin = io.StringIO("\n".join(["e0", "e0", "e1", "e2", "e3"]) + "\n")
    stdout = io.StringIO()
    assert cli.run(["predict", "--input", str(bundle)], stdin=stdin, stdout=stdout) == 0
    lines = [json.loads(line) for line in stdout.getvalue().splitlines()]
    assert [line["segments_seen"] for line in lines] == [1, 2]
    assert lines[0]["decided"] is None
    assert lines[-1]["decided"] == "e0->e7"
    for line in lines:
        assert sum(line["posteriors"].values()) == pytest.approx(1.0)


def test_predict_unseen_segments_only(toy_trips, tmp_path, cfg):
    bundle = tmp_path / "model.json"
    assert cli.run(["train", "--input", str(toy_trips), "--output", str(bundle)]) == 0
    stdout = io.StringIO()
    stdin = io.StringIO("q1\nq2\n")
    assert cli.run(["predict", "--input", str(bundle)], stdin=stdin, stdout=stdout) == 0
    lines = [json.loads(line) for line in stdout.getvalue().splitlines()]
    assert len(lines) == 2
    assert lines[1]["posteriors"] == lines[0]["posteriors"]
    assert lines[1]["decided"] is None


def test_evaluate_loo(toy_trips, tmp_path, cfg):
    out = tmp_path / "eval"
    stdout = io.StringIO()
    argv = ["evaluate", "--input", str(toy_trips), "--output", str(out), "--protocol", "loo"]
    assert cli.run(argv, stdout=stdout) == 0
    outcomes = pd.read_csv(out / "outcomes.csv")
    assert len(outcomes) == 6
    assert list(outcomes["segments_at_decision"]) == [2] * 6
    summary = pd.read_csv(out / "summary.csv")
    assert summary.loc[0, "failure_rate"] == 0.0
    assert summary.loc[0, "protocol"] == "loo"
    assert stdout.getvalue() == (out / "summary.csv").read_text()


def test_evaluate_incremental(corpus_dir, tmp_path, cfg):
    out = tmp_path / "eval"
    argv = ["evaluate", "--input", str(corpus_dir / "trips.jsonl"), "--output", str(out)]
    argv += ["--protocol", "incremental", "--step", "20"]
    assert cli.run(argv, stdout=io.StringIO()) == 0
    series = pd.read_csv(out / "incremental.csv")
    assert list(series["m"]) == [1, 21, 41]
    assert not (out / "outcomes.csv").exists()


def test_sweep_is_deterministic(corpus_dir, tmp_path, cfg):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for path in paths:
        argv = ["sweep", "--input", str(corpus_dir / "trips.jsonl"), "--output", str(path)]
        argv += ["--protocol", "split", "--rounds", "2", "--alphas", "0.1,0.3"]
        argv += ["--epsilons", "1e-6,0.01"]
        assert cli.run(argv) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    frame = pd.read_csv(paths[0])
    assert len(frame) == 8
    assert set(frame["clustering_mode"]) == {"od", "route"}


def test_invalid_alpha_exits_nonzero(toy_trips, tmp_path, cfg, capsys):
    argv = ["train", "--input", str(toy_trips), "--output", str(tmp_path / "m.json")]
    assert cli.run(argv + ["--alpha", "1.5"]) == 1
    assert "routepredict: error: Invalid settings" in capsys.readouterr().err


def test_missing_input_exits_nonzero(tmp_path, cfg, capsys):
    argv = ["cluster", "--input", str(tmp_path / "nope.jsonl"), "--output", "-"]
    assert cli.run(argv) == 1
    assert "routepredict: error:" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(cfg):
    with pytest.raises(SystemExit) as exc:
        cli.run(["train", "--bogus"])
    assert exc.value.code == 2


def _predict_lines(bundle, stdin_text, *extra):
    stdout = io.StringIO()
    argv = ["predict", "--input", str(bundle), *extra]
    assert cli.run(argv, stdin=io.StringIO(stdin_text), stdout=stdout) == 0
    return [json.loads(line) for line in stdout.getvalue().splitlines()]


def test_predict_epsilon_precedence(toy_trips, tmp_path, monkeypatch, cfg):
    bundle = tmp_path / "model.json"
    assert cli.run(["train", "--input", str(toy_trips), "--output", str(bundle)]) == 0
    stream = "e0\ne1\n"
    stored = _predict_lines(bundle, stream)
    flagged = _predict_lines(bundle, stream, "--epsilon", "0.01")
    assert flagged[1]["posteriors"] != stored[1]["posteriors"]

    trained = tmp_path / "model-0.01.json"
    argv = ["train", "--input", str(toy_trips), "--output", str(trained), "--epsilon", "0.01"]
    assert cli.run(argv) == 0
    assert _predict_lines(trained, stream) == flagged

    settings = tmp_path / "settings.json"
    settings.write_text(json.dumps({"epsilon": 0.01}))
    assert _predict_lines(bundle, stream, "--config", str(settings)) == flagged

    monkeypatch.setenv("ROUTEPREDICT_EPSILON", "0.01")
    cfg.reload_defaults()
    assert _predict_lines(bundle, stream) == flagged


def test_predict_has_no_pi_flag(toy_trips, tmp_path, cfg):
    bundle = tmp_path / "model.json"
    assert cli.run(["train", "--input", str(toy_trips), "--output", str(bundle)]) == 0
    with pytest.raises(SystemExit) as exc:
        cli.run(["predict", "--input", str(bundle), "--pi", "ml"])
    assert exc.value.code == 2
