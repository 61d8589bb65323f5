import hashlib

import pytest

from uwbgem import cli
from uwbgem.dataset import load_csv


def run(*argv):
    return cli.main([str(a) for a in argv])


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--n-samples", 400, "--seed", 5, "--out", d / "all.csv") == 0
    assert run("split", "--in", d / "all.csv", "--out", d / "train.csv", "--test-out", d / "test.csv") == 0
    return d


def test_synth_line_count_and_rerun(tmp_path):
    assert run("synth", "--n-samples", 100, "--seed", 1, "--out", tmp_path / "a.csv") == 0
    assert run("synth", "--n-samples", 100, "--seed", 1, "--out", tmp_path / "b.csv") == 0
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 101
    assert digest(tmp_path / "a.csv") == digest(tmp_path / "b.csv")


def test_synth_empty(tmp_path):
    assert run("synth", "--n-samples", 0, "--out", tmp_path / "e.csv") == 0
    assert len((tmp_path / "e.csv").read_text().splitlines()) == 1


def test_corrupt_full_supervision_is_identity(data, tmp_path):
    assert run("corrupt", "--in", data / "train.csv", "--out", tmp_path / "w.csv", "--eta-k", 1, "--eta-e", 1) == 0
    assert load_csv(tmp_path / "w.csv") == load_csv(data / "train.csv")


def test_train_eval_pipeline(data, tmp_path, capsys):
    before = digest(data / "train.csv")
    assert run("train", "--train-csv", data / "train.csv", "--out", tmp_path / "m.json", "--epochs", 40,
               "--history", tmp_path / "h.csv", "--baseline-out", tmp_path / "b.json") == 0
    assert digest(data / "train.csv") == before
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 41
    assert run("eval", "--model", tmp_path / "m.json", "--baseline-model", tmp_path / "b.json",
               "--test-csv", data / "test.csv", "--out", tmp_path / "rep", "--timing-samples", 5) == 0
    rows = {r.split(",")[0]: r.split(",") for r in (tmp_path / "rep" / "report.csv").read_text().splitlines()[1:]}
    assert float(rows["gem"][3]) < float(rows["unmitigated"][3])
    assert (tmp_path / "rep" / "cdf_gem.csv").exists()


def test_missing_input_fails_cleanly(tmp_path, capsys):
    code = run("train", "--train-csv", tmp_path / "nope.csv", "--out", tmp_path / "m.json")
    assert code != 0
    assert not (tmp_path / "m.json").exists()
    assert "error" in capsys.readouterr().err


def test_output_may_not_overwrite_input(data):
    assert run("corrupt", "--in", data / "train.csv", "--out", data / "train.csv") != 0


def test_missing_required_option():
    with pytest.raises(SystemExit) as exc:
        run("synth")
    assert exc.value.code != 0


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "synth.cfg"
    cfg.write_text("# demo\nn_samples = 30\nseed = 4\nout = " + str(tmp_path / "c.csv") + "\n")
    assert run("synth", "--config", cfg) == 0
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 31
    assert run("synth", "--config", cfg, "--n-samples", 10) == 0
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 11


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus = 1\n")
    with pytest.raises(SystemExit):
        run("synth", "--config", cfg, "--out", tmp_path / "x.csv")


def test_small_sweep(data, tmp_path):
    assert run("sweep", "--train-csv", data / "train.csv", "--test-csv", data / "test.csv", "--out", tmp_path / "s",
               "--eta-k", "1.0", "--eta-e", "0.5,1.0", "--epochs", 2, "--timing-samples", 0) == 0
    lines = (tmp_path / "s" / "report.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 3
