"""End-to-end tests of the command-line commands."""
import json
from unittest.mock import patch

import pytest

from nmtlab.cli import main
from nmtlab.const import (
    EXIT_COMPATIBILITY,
    EXIT_CONFIG,
    EXIT_FAILURE,
    EXIT_INPUT,
    EXIT_IO,
    EXIT_OK,
)
from nmtlab.training import BlockCheck, GradCheckReport

SMALL = [
    "model.embed_dim=3",
    "model.hidden=4",
    "data.synth.vocab_size=6",
    "data.synth.min_len=2",
    "data.synth.max_len=4",
    "data.synth.train_size=16",
    "data.synth.valid_size=3",
    "data.synth.test_size=3",
    "train.batch_size=8",
    "train.max_epochs=1",
    "train.dropout=0",
    "decode.beam=2",
]


def _settings(*extra):
    args = []
    for item in SMALL + list(extra):
        args += ["--set", item]
    return args


@pytest.fixture(autouse=True)
def quiet_logging():
    """Leave pytest's log handlers in place."""
    with patch("nmtlab.cli.setup_logging"):
        yield


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic corpus plus a model trained on it."""
    root = tmp_path_factory.mktemp("cli")
    with patch("nmtlab.cli.setup_logging"):
        assert main(["gen-data", "--out", str(root / "data")] + _settings()) == 0
        code = main(
            ["train", "--checkpoint", str(root / "model.ckpt")]
            + ["--log", str(root / "train.log.jsonl")]
            + _settings()
        )
    assert code == EXIT_OK
    return root


class TestGenData:
    def test_split_sizes(self, tmp_path, capsys):
        """--n splits 80/10/10."""
        out = tmp_path / "corpus"
        assert main(["gen-data", "--out", str(out), "--n", "20"] + _settings()) == 0
        lines = {
            name: len((out / f"{name}.src").read_text(encoding="utf-8").splitlines())
            for name in ("train", "valid", "test")
        }
        assert lines == {"train": 16, "valid": 2, "test": 2}
        assert "train: 16 pairs" in capsys.readouterr().out

    def test_impossible_task(self, tmp_path):
        """A task that cannot be generated is a usage error."""
        code = main(
            ["gen-data", "--out", str(tmp_path), "--set", "data.synth.min_len=5"]
            + ["--set", "data.synth.max_len=2"]
        )
        assert code == 2


class TestTrainAndTranslate:
    def test_training_outputs(self, workspace):
        """The checkpoint and one log line per validation are written."""
        assert (workspace / "model.ckpt").stat().st_size > 0
        records = [
            json.loads(line)
            for line in (workspace / "train.log.jsonl").read_text().splitlines()
        ]
        assert [r["update"] for r in records] == [2]
        assert {"loss", "valid_bleu", "elapsed"} <= set(records[0])

    def test_translate_with_alignments(self, workspace, tmp_path):
        """One output line and one sidecar per input sentence."""
        output = tmp_path / "hyp.txt"
        code = main(
            [
                "translate",
                str(workspace / "model.ckpt"),
                str(workspace / "data" / "test.src"),
                str(output),
                "--post-process",
                "--beam",
                "3",
                "--align",
                str(tmp_path / "align"),
            ]
        )
        assert code == EXIT_OK
        assert len(output.read_text(encoding="utf-8").splitlines()) == 3
        sidecars = sorted(p.name for p in (tmp_path / "align").iterdir())
        assert sidecars == ["00001.csv", "00002.csv", "00003.csv"]

        report = tmp_path / "diag.json"
        code = main(["diagnose", str(tmp_path / "align"), "--out", str(report)])
        assert code == EXIT_OK
        data = json.loads(report.read_text(encoding="utf-8"))
        assert set(data["alignments"]) == set(sidecars)
        assert 0.0 <= data["repetition_rate"] <= 1.0

    def test_pgm_sidecars(self, workspace, tmp_path):
        """Alignments can be written as images."""
        code = main(
            [
                "translate",
                str(workspace / "model.ckpt"),
                str(workspace / "data" / "valid.src"),
                str(tmp_path / "hyp.txt"),
                "--align",
                str(tmp_path),
                "--align-format",
                "pgm",
            ]
        )
        assert code == EXIT_OK
        assert (tmp_path / "00001.pgm").read_bytes().startswith(b"P5\n")

    def test_empty_input_line(self, workspace, tmp_path):
        """Blank source lines are refused."""
        source = tmp_path / "in.txt"
        source.write_text("w1 w2\n\n", encoding="utf-8")
        code = main(
            ["translate", str(workspace / "model.ckpt"), str(source), str(source)]
        )
        assert code == EXIT_INPUT


class TestEvaluate:
    def test_identity(self, tmp_path, capsys):
        """A file scored against itself is perfect."""
        ref = tmp_path / "ref.txt"
        ref.write_text("a b c d\ne f g\n", encoding="utf-8")
        assert main(["evaluate", str(ref), str(ref), "--json", "-"]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith("BLEU = 100.00")
        assert json.loads(out[out.index("{") :])["score"] == pytest.approx(1.0)

    def test_multiple_references(self, tmp_path):
        """Every reference file contributes clipping counts."""
        hyp = tmp_path / "hyp.txt"
        hyp.write_text("a a b\n", encoding="utf-8")
        (tmp_path / "r1.txt").write_text("a b\n", encoding="utf-8")
        (tmp_path / "r2.txt").write_text("a a x y\n", encoding="utf-8")
        report = tmp_path / "bleu.json"
        code = main(
            ["evaluate", str(hyp), str(tmp_path / "r1.txt"), str(tmp_path / "r2.txt")]
            + ["--json", str(report)]
        )
        assert code == EXIT_OK
        data = json.loads(report.read_text(encoding="utf-8"))
        assert data["matches"][0] == 3
        assert data["ref_length"] == 2

    def test_line_count_mismatch(self, tmp_path):
        """Hypothesis and reference files must align."""
        (tmp_path / "h").write_text("a\nb\n", encoding="utf-8")
        (tmp_path / "r").write_text("a\n", encoding="utf-8")
        code = main(["evaluate", str(tmp_path / "h"), str(tmp_path / "r")])
        assert code == EXIT_INPUT

    def test_undecodable_hypothesis(self, tmp_path, caplog):
        """Files that are not UTF-8 are input errors, not crashes."""
        (tmp_path / "h").write_bytes(b"\xff\xfe a\n")
        (tmp_path / "r").write_text("a\n", encoding="utf-8")
        code = main(["evaluate", str(tmp_path / "h"), str(tmp_path / "r")])
        assert code == EXIT_INPUT
        assert "not valid UTF-8" in caplog.text


class TestDiagnose:
    def test_constructed_pathologies(self, tmp_path):
        """A repeated peak and an unattended word are flagged separately."""
        (tmp_path / "rep.csv").write_text(
            ",a,b\nx,1,0\ny,1,0\nz,0,1\n", encoding="utf-8"
        )
        (tmp_path / "gap.csv").write_text(
            ",a,b,c\nx,1,0,0\ny,0,0,1\n", encoding="utf-8"
        )
        report = tmp_path / "report.json"
        code = main(["diagnose", str(tmp_path), "--out", str(report)])
        assert code == EXIT_OK
        data = json.loads(report.read_text(encoding="utf-8"))
        rep, gap = data["alignments"]["rep.csv"], data["alignments"]["gap.csv"]
        assert rep["flags"] == {"repetition": True, "coverage": False}
        assert rep["runs"] == [{"start": 1, "source": 1, "length": 2}]
        assert gap["flags"] == {"repetition": False, "coverage": True}
        assert gap["uncovered"] == [{"position": 2, "mass": 0.0}]
        assert data["repetition_rate"] == 0.5

    def test_thresholds_from_flags(self, tmp_path, capsys):
        """A longer run threshold silences short runs."""
        (tmp_path / "rep.csv").write_text(",a,b\nx,1,0\ny,1,0\nz,0,1\n")
        code = main(["diagnose", str(tmp_path / "rep.csv"), "--run-threshold", "3"])
        assert code == EXIT_OK
        assert "rep.csv: ok" in capsys.readouterr().out

    def test_empty_directory(self, tmp_path, capsys):
        """No sidecars is an empty report."""
        assert main(["diagnose", str(tmp_path)]) == EXIT_OK
        assert "0 alignments" in capsys.readouterr().out


class TestGradCheck:
    def test_passes(self, tmp_path):
        """Analytic gradients of a RecAtt model match finite differences."""
        report = tmp_path / "grad.json"
        code = main(
            ["gradcheck", "--set", "model.attention=recatt"]
            + ["--embed", "4", "--hidden", "3", "--condition", "3", "--vocab", "9"]
            + ["--max-entries", "4", "--json", str(report)]
        )
        assert code == EXIT_OK
        data = json.loads(report.read_text(encoding="utf-8"))
        assert data["passed"] and data["model"] == "recatt+base"
        assert "att.V" in data["blocks"]

    def test_failure_exit_code(self, capsys):
        """A failing block makes the command fail."""
        failing = GradCheckReport("base+base", 1e-4, [BlockCheck("att.W", 0.5, 3)])
        with patch("nmtlab.cli.grad_check", return_value=failing):
            assert main(["gradcheck"]) == EXIT_FAILURE
        assert "FAIL" in capsys.readouterr().out


def test_compare(tmp_path, capsys):
    """Test that each listed variant gets a table row."""
    report = tmp_path / "compare.json"
    code = main(
        ["compare", "--models", "base+base", "base+conddec"]
        + ["--out", str(tmp_path / "runs"), "--json", str(report)]
        + _settings()
    )
    assert code == EXIT_OK
    table = capsys.readouterr().out
    assert "base+base" in table and "base+conddec" in table
    rows = json.loads(report.read_text(encoding="utf-8"))
    assert [r["model"] for r in rows] == ["base+base", "base+conddec"]
    assert (tmp_path / "runs" / "base_conddec.ckpt").exists()


class TestExitCodes:
    def test_invalid_configuration(self, tmp_path):
        """Rejected settings exit with the configuration code."""
        code = main(["train", "--set", "model.hidden=0"])
        assert code == EXIT_CONFIG

    def test_missing_checkpoint(self, tmp_path):
        """Unreadable files exit with the I/O code."""
        code = main(
            ["translate", str(tmp_path / "none.ckpt"), str(tmp_path / "in"), "out"]
        )
        assert code == EXIT_IO

    def test_foreign_checkpoint(self, tmp_path):
        """Files that are not checkpoints exit with the compatibility code."""
        bogus = tmp_path / "bogus.ckpt"
        bogus.write_bytes(b"not a model")
        code = main(["translate", str(bogus), str(tmp_path / "in"), "out"])
        assert code == EXIT_COMPATIBILITY

    def test_missing_command(self):
        """argparse rejects a call without a command."""
        with pytest.raises(SystemExit) as err:
            main([])
        assert err.value.code == 2
