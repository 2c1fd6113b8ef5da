import io
import math
import sys
from pathlib import Path

import numpy as np
import pytest

from app.main import main
from app.schemas.schemas import TrainConfig
from app.services import train_tasks
from app.services.cli_io import save_model
from app.services.ga_core import AlgebraSignature
from app.services.spinor import make_rotor, plane_blade
from app.services.train_tasks import initialize_spinor_model, initialize_vector_model, synthetic_analogy_family

TEST_FILES = Path(__file__).resolve().parent.parent / "test_files"
REPETITIVE = str(TEST_FILES / "repetitive.txt")


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def analogy_model(tmp_path):
    sig = AlgebraSignature(3, 0)
    table, _, _ = synthetic_analogy_family(sig, make_rotor(plane_blade(sig, (1, 2)), 1.2))
    model = initialize_spinor_model(table.vocab, TrainConfig())
    model.table.generators[:] = table.generators
    path = tmp_path / "analogy.json"
    save_model(model, path)
    return str(path)


@pytest.fixture
def small_model(tmp_path):
    path = tmp_path / "small.json"
    save_model(initialize_spinor_model(["a", "b", "c"], TrainConfig(init_scale=0.5)), path)
    return str(path)


class TestAlgebraCommands:
    def test_summary(self, capsys):
        code, out, _ = run(capsys, "algebra", "--p", "3", "--q", "0")
        assert code == 0
        assert out.splitlines() == ["signature,Cl(3,0)", "p,3", "q,0", "n,3", "dim,8", "even_dim,4", "bivectors,3"]

    def test_table(self, capsys):
        code, out, _ = run(capsys, "algebra", "--p", "2", "--q", "0", "--table")
        assert code == 0
        lines = out.splitlines()
        assert lines[7] == "Cayley table for Cl(2,0)"
        assert lines[-1] == "e12   e12   -e2   e1    -1"

    def test_invalid_signature(self, capsys):
        code, _, err = run(capsys, "algebra", "--p", "0", "--q", "0")
        assert code == 2
        assert err

    def test_table_too_large(self, capsys):
        code, _, _ = run(capsys, "algebra", "--p", "6", "--table")
        assert code == 2

    def test_demo720(self, capsys):
        code, out, _ = run(capsys, "demo720", "--p", "2", "--q", "0")
        assert code == 0
        assert out.splitlines() == [
            "step,angle_deg,one_sided_sign,two_sided_identity",
            "0,0.0,1,true",
            "1,90.0,0,false",
            "2,180.0,0,false",
            "3,270.0,0,false",
            "4,360.0,-1,true",
            "5,450.0,0,false",
            "6,540.0,0,false",
            "7,630.0,0,false",
            "8,720.0,1,true",
        ]

    def test_demo720_needs_a_circular_plane(self, capsys):
        code, _, _ = run(capsys, "demo720", "--p", "1", "--q", "1")
        assert code == 2


class TestTrainingCommands:
    def test_train_lm(self, capsys, tmp_path):
        out_path = tmp_path / "model.json"
        code, out, _ = run(capsys, "train-lm", "--corpus", REPETITIVE, "--p", "2", "--epochs", "2",
                           "--out", str(out_path))
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "epoch,train_perplexity,validation_perplexity"
        assert [line.split(",")[0] for line in lines[1:]] == ["0", "1", "2"]
        assert all(math.isfinite(float(value)) for line in lines[1:] for value in line.split(",")[1:])
        assert out_path.exists()

    def test_reruns_are_byte_identical(self, capsys, tmp_path):
        outputs = []
        for name in ("first.json", "second.json"):
            path = tmp_path / name
            _, out, _ = run(capsys, "train-lm", "--corpus", REPETITIVE, "--p", "3", "--epochs", "1",
                            "--seed", "7", "--out", str(path))
            outputs.append((out, path.read_bytes()))
        assert outputs[0] == outputs[1]

    @pytest.mark.slow
    def test_default_flags_learn_the_repetitive_corpus(self, capsys):
        code, out, _ = run(capsys, "train-lm", "--corpus", REPETITIVE)
        assert code == 0
        assert float(out.splitlines()[-1].split(",")[2]) < 1.3

    def test_train_baseline(self, capsys, tmp_path):
        out_path = tmp_path / "baseline.json"
        code, out, _ = run(capsys, "train-baseline", "--corpus", REPETITIVE, "--epochs", "1",
                           "--out", str(out_path))
        assert code == 0
        assert len(out.splitlines()) == 3
        assert '"kind": "vector"' in out_path.read_text()

    def test_ablate(self, capsys):
        code, out, _ = run(capsys, "ablate", "--corpus", REPETITIVE, "--epochs", "1", "--signatures", "2,0;3,0")
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "signature,p,q,parameters,final_validation_perplexity,seconds"
        assert lines[1].startswith("Cl(2,0),2,0,87,")
        assert lines[2].startswith("Cl(3,0),3,0,163,")

    def test_missing_corpus(self, capsys, tmp_path):
        code, _, err = run(capsys, "train-lm", "--corpus", str(tmp_path / "none.txt"))
        assert code == 2
        assert "file not found" in err

    def test_bad_batch(self, capsys):
        code, _, _ = run(capsys, "train-lm", "--corpus", REPETITIVE, "--batch", "1")
        assert code == 2

    def test_divergence_exit_code(self, capsys, monkeypatch):
        monkeypatch.setattr(train_tasks, "_window_loss",
                            lambda tape, model, bound, tokens: tape.constant(np.inf))
        code, _, err = run(capsys, "train-lm", "--corpus", REPETITIVE, "--p", "2", "--epochs", "1")
        assert code == 4
        assert "epoch 1" in err


class TestAnalysisCommands:
    def test_analogy(self, capsys, analogy_model):
        code, out, _ = run(capsys, "analogy", "--model", analogy_model,
                           "--pairs", str(TEST_FILES / "analogy_pairs.txt"),
                           "--holdout", str(TEST_FILES / "analogy_holdout.txt"))
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "accuracy,1.0"
        assert float(lines[1].split(",")[1]) < 1e-8
        assert lines[2] == "blade,coefficient"
        assert [line.split(",")[0] for line in lines[3:]] == ["1", "e12", "e13", "e23"]

    def test_analogy_needs_spinor_model(self, capsys, tmp_path):
        path = tmp_path / "vector.json"
        save_model(initialize_vector_model(["s0", "t0"], TrainConfig()), path)
        code, _, _ = run(capsys, "analogy", "--model", str(path), "--pairs", str(TEST_FILES / "analogy_pairs.txt"))
        assert code == 2

    def test_attend(self, capsys, small_model):
        code, out, _ = run(capsys, "attend", "--model", small_model, "--text", "a b c a")
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "query,a,b,c,a"
        assert len(lines) == 5
        assert lines[1].split(",")[1:] == ["1.0", "0.0", "0.0", "0.0"]

    def test_attend_unknown_word(self, capsys, small_model):
        code, _, _ = run(capsys, "attend", "--model", small_model, "--text", "a zebra")
        assert code == 2

    def test_project_to_stdout(self, capsys, small_model):
        code, out, _ = run(capsys, "project", "--model", small_model)
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "token,x,y"
        assert [line.split(",")[0] for line in lines[1:]] == ["a", "b", "c"]

    def test_project_to_file(self, capsys, small_model, tmp_path):
        path = tmp_path / "projection.csv"
        code, out, _ = run(capsys, "--log-level", "info", "project", "--model", small_model, "--out", str(path))
        assert code == 0
        assert out == ""
        assert path.read_text().startswith("token,x,y\n")

    def test_malformed_model(self, capsys, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"format_version": 1,')
        code, _, err = run(capsys, "project", "--model", str(path))
        assert code == 3
        assert "line 1" in err

    def test_future_model_version(self, capsys, tmp_path):
        path = tmp_path / "future.json"
        path.write_text('{"format_version": 9}')
        code, _, _ = run(capsys, "project", "--model", str(path))
        assert code == 3


class TestLogging:
    def test_second_run_after_stderr_was_closed(self, monkeypatch, capsys):
        for _ in range(2):
            stream = io.TextIOWrapper(io.BytesIO(), encoding="utf-8")
            monkeypatch.setattr(sys, "stderr", stream)
            assert main(["algebra", "--p", "2"]) == 0
            stream.close()
        capsys.readouterr()

    def test_records_go_to_the_current_stderr(self, monkeypatch, small_model, tmp_path):
        first = io.StringIO()
        monkeypatch.setattr(sys, "stderr", first)
        main(["--log-level", "info", "project", "--model", small_model, "--out", str(tmp_path / "a.csv")])
        second = io.StringIO()
        monkeypatch.setattr(sys, "stderr", second)
        main(["--log-level", "info", "project", "--model", small_model, "--out", str(tmp_path / "b.csv")])
        assert second.getvalue()
