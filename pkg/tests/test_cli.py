import csv

import pytest

from analogylab.cli import RunConfig, main, parse_config_text
from analogylab.errors import ValidationError


def _run_dir(out, command):
    dirs = sorted(out.glob(f"{command}-*"))
    assert dirs, f"no {command} run directory"
    return dirs[-1]


@pytest.fixture(scope="module")
def corpus_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["gen-corpus", "--out", str(out)]) == 0
    return _run_dir(out, "gen-corpus") / "corpus.vslc"


class TestConfig:
    def test_defaults_documented(self):
        cfg = RunConfig()
        assert (cfg.m_pos, cfg.m_neg, cfg.lr, cfg.batch_size, cfg.steps) == (0.2, 0.4, 0.05, 32, 5000)

    def test_parse(self):
        cfg = parse_config_text("# comment\nsteps = 10\ndistractor_sizes = 100, 500\nloss_mode = single\n")
        assert cfg.steps == 10 and cfg.distractor_sizes == (100, 500) and cfg.loss_mode == "single"

    @pytest.mark.parametrize("text", ["nonsense", "bogus_key = 1", "steps = ten"])
    def test_bad_lines(self, text):
        with pytest.raises(ValidationError):
            parse_config_text(text)

    def test_echo_round_trips(self):
        cfg = parse_config_text("m_neg = 0.5\nks = 1, 3\n")
        assert parse_config_text(cfg.render()) == cfg


class TestGenCorpus:
    def test_count_and_echo(self, corpus_file, capsys):
        run = corpus_file.parent
        assert (run / "config.txt").read_text().count("\n") == len(RunConfig.__dataclass_fields__)

    def test_byte_identical_rerun(self, corpus_file, tmp_path, capsys):
        assert main(["gen-corpus", "--out", str(tmp_path)]) == 0
        assert "576 images" in capsys.readouterr().out
        again = _run_dir(tmp_path, "gen-corpus") / "corpus.vslc"
        assert again.read_bytes() == corpus_file.read_bytes()

    def test_invalid_config(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("num_categories = 1\n")
        assert main(["gen-corpus", "--config", str(cfg), "--out", str(tmp_path)]) == 1


class TestTrainEval:
    def test_train_then_eval(self, corpus_file, tmp_path):
        out = str(tmp_path)
        argv = ["train", "--corpus", str(corpus_file), "--steps", "20", "--loss", "double", "--mp", "0.2", "--mn", "0.4"]
        assert main(argv + ["--out", out]) == 0
        run = _run_dir(tmp_path, "train")
        echoed = parse_config_text((run / "config.txt").read_text())
        assert (echoed.loss_mode, echoed.m_pos, echoed.m_neg, echoed.steps) == ("double", 0.2, 0.4, 20)
        with open(run / "training_log.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 20
        ckpt = run / "checkpoint.vslg"
        assert main(["eval", "--corpus", str(corpus_file), "--checkpoint", str(ckpt),
                     "--n-questions", "50", "--out", out]) == 0
        ev = _run_dir(tmp_path, "eval")
        with open(ev / "results.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["regime"] for r in rows} == {"seen", "unseen"} and len(rows) == 12
        assert (ev / "recall_seen.svg").exists() and (ev / "audit_unseen_100.csv").exists()

    def test_single_margin_flags(self, corpus_file, tmp_path):
        assert main(["train", "--corpus", str(corpus_file), "--steps", "3", "--loss", "single", "--m", "0.4",
                     "--out", str(tmp_path)]) == 0

    def test_margin_violation(self, tmp_path):
        assert main(["train", "--mp", "0.5", "--mn", "0.4", "--out", str(tmp_path)]) == 1

    def test_missing_corpus_names_path(self, tmp_path, capsys):
        missing = tmp_path / "nowhere.vslc"
        assert main(["train", "--corpus", str(missing), "--out", str(tmp_path)]) == 2
        assert str(missing) in capsys.readouterr().err

    def test_corrupt_checkpoint(self, corpus_file, tmp_path):
        bad = tmp_path / "bad.vslg"
        bad.write_bytes(b"VSLG\x01\x00")
        assert main(["eval", "--corpus", str(corpus_file), "--checkpoint", str(bad), "--out", str(tmp_path)]) == 2

    def test_random_baseline(self, corpus_file, tmp_path):
        assert main(["eval", "--corpus", str(corpus_file), "--baseline", "random", "--n-questions", "30",
                     "--out", str(tmp_path)]) == 0
        with open(_run_dir(tmp_path, "eval") / "results.csv") as fh:
            assert {r["loss_mode"] for r in csv.DictReader(fh)} == {"random"}

    def test_classifier_baseline(self, corpus_file, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("classifier_steps = 5\nn_questions = 20\n")
        assert main(["eval", "--config", str(cfg), "--corpus", str(corpus_file), "--baseline", "classifier",
                     "--out", str(tmp_path)]) == 0

    def test_distractor_sweep(self, tmp_path):
        cfg = tmp_path / "big.cfg"
        cfg.write_text("num_categories = 40\nnum_properties = 12\nexemplars_per_cell = 6\nn_questions = 20\n"
                       "test_exemplars = 0\nregimes = seen\n")
        assert main(["eval", "--config", str(cfg), "--baseline", "random", "--distractors", "100,500,1000,2000",
                     "--out", str(tmp_path)]) == 0
        with open(_run_dir(tmp_path, "eval") / "results.csv") as fh:
            sizes = {int(r["n_distractors"]) for r in csv.DictReader(fh)}
        assert sizes == {100, 500, 1000, 2000}

    def test_distractors_exceed_pool(self, corpus_file, tmp_path):
        assert main(["eval", "--corpus", str(corpus_file), "--baseline", "random", "--distractors", "2000",
                     "--out", str(tmp_path)]) == 1


def test_ablate_small(tmp_path, capsys):
    cfg = tmp_path / "a.cfg"
    cfg.write_text(
        "num_categories = 5\nnum_properties = 4\nexemplars_per_cell = 3\nn_unseen_categories = 0\n"
        "n_heldout_types = 4\ntest_exemplars = 1\nsteps = 3\nbatch_size = 8\nseeds = 0, 1\n"
        "n_questions = 10\ndistractor_sizes = 5\nks = 1, 5\n"
    )
    assert main(["ablate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    run = _run_dir(tmp_path, "ablate")
    with open(run / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 8 * 2
    assert (run / "ablation.svg").exists() and "questions seed 0 seen" in out


class TestSelfcheck:
    def test_passes(self, tmp_path, capsys):
        assert main(["selfcheck", "--out", str(tmp_path)]) == 0
        assert "FAIL" not in capsys.readouterr().out

    def test_corrupted_backward_fails_with_layer(self, tmp_path, capsys):
        assert main(["selfcheck", "--corrupt-layer", "conv2", "--out", str(tmp_path)]) == 3
        out = capsys.readouterr().out
        assert "FAIL" in out and "conv2" in out.split("FAIL", 1)[1]
