"""End-to-end tests of the command-line interface.

Commands run in-process through main(argv); exit codes follow the
contract 0 = success, 1 = validation/check failure, 2 = usage error,
3 = numerical abort.
"""

import numpy as np
import pytest

from negsamp import encoder as enc
from negsamp.cli import main
from negsamp.config import TrainConfig
from negsamp.corpus import build_vocab
from negsamp.encoder import EncoderSpec
from negsamp.lm import init_model
from negsamp.modelfile import load_model, save_model

from _synthetic import chain_text, make_chain, sample_chain


def write_skewed_tsv(path):
    path.write_text("x\ty\tp\na\tu\t0.4\na\tv\t0.1\nb\tu\t0.1\nb\tv\t0.4\n")


@pytest.fixture(scope="module")
def chain_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    trans, _, ppl = make_chain(n_states=15, rank=4, seed=0, eos_boost=1.2)
    (root / "train.txt").write_text(chain_text(sample_chain(trans, 40_000, seed=1), 15))
    (root / "valid.txt").write_text(chain_text(sample_chain(trans, 5_000, seed=2), 15))
    (root / "test.txt").write_text(chain_text(sample_chain(trans, 5_000, seed=3), 15))
    return root, ppl


class TestVerify:
    def test_default_invocation_passes(self, capsys, tmp_path):
        report = tmp_path / "verify.txt"
        code = main(["verify", "--seed", "0", "--report", str(report)])
        out = capsys.readouterr().out
        assert code == 0
        assert "all checks passed" in out
        lines = report.read_text().splitlines()
        assert all("status=pass" in line for line in lines)
        assert all("value=" in line and "threshold=" in line for line in lines)
        assert (tmp_path / "verify.txt.config").exists()

    def test_corrupted_gradient_fails(self, capsys):
        code = main(["verify", "--corrupt-gradient"])
        out = capsys.readouterr().out
        assert code == 1
        assert "FAIL" in out

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            main(["verify", "--bogus-flag"])
        assert exc.value.code == 2


class TestEmbedJoint:
    def test_exact_five_by_five_recovery(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        p = rng.random((5, 5))
        p /= p.sum()
        lines = ["x\ty\tp"]
        for i in range(5):
            for j in range(5):
                lines.append(f"r{i}\tc{j}\t{p[i, j]:.17g}")
        dist_file = tmp_path / "dist.tsv"
        dist_file.write_text("\n".join(lines) + "\n")

        out = tmp_path / "factors.negf"
        code = main(["embed-joint", "--dist", str(dist_file), "--d", "5",
                     "--k", "1", "--out", str(out)])
        printed = capsys.readouterr().out
        assert code == 0
        values = dict(line.split("=") for line in printed.strip().splitlines())
        assert float(values["kl_gap"]) <= 1e-6
        assert float(values["score"]) <= float(values["pmi_score"]) + 1e-12
        assert out.exists() and (tmp_path / "factors.negf.config").exists()
        model = load_model(out)
        assert model.x_labels == [f"r{i}" for i in range(5)]

    def test_low_rank_leaves_gap(self, tmp_path, capsys):
        write_skewed_tsv(tmp_path / "dist.tsv")
        code = main(["embed-joint", "--dist", str(tmp_path / "dist.tsv"), "--d", "1",
                     "--k", "1", "--out", str(tmp_path / "f.negf")])
        printed = capsys.readouterr().out
        assert code == 0
        values = dict(line.split("=") for line in printed.strip().splitlines())
        assert float(values["kl_gap"]) > 1e-3

    def test_rank_sweep_gap_nonincreasing(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        p = rng.random((4, 4))
        p /= p.sum()
        lines = ["x\ty\tp"] + [
            f"r{i}\tc{j}\t{p[i, j]:.17g}" for i in range(4) for j in range(4)
        ]
        dist_file = tmp_path / "dist.tsv"
        dist_file.write_text("\n".join(lines) + "\n")
        gaps = []
        for d in (1, 2, 3, 4):
            main(["embed-joint", "--dist", str(dist_file), "--d", str(d),
                  "--k", "1", "--out", str(tmp_path / f"f{d}.negf")])
            values = dict(
                line.split("=") for line in capsys.readouterr().out.strip().splitlines()
            )
            gaps.append(float(values["kl_gap"]))
        assert all(a >= b - 1e-9 for a, b in zip(gaps, gaps[1:]))

    def test_malformed_tsv_fails(self, tmp_path, capsys):
        (tmp_path / "bad.tsv").write_text("wrong\theader\there\n")
        code = main(["embed-joint", "--dist", str(tmp_path / "bad.tsv"), "--d", "2",
                     "--out", str(tmp_path / "f.negf")])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_partial_support_fails(self, tmp_path, capsys):
        (tmp_path / "partial.tsv").write_text("x\ty\tp\na\tu\t0.5\nb\tv\t0.5\n")
        code = main(["embed-joint", "--dist", str(tmp_path / "partial.tsv"), "--d", "2",
                     "--out", str(tmp_path / "f.negf")])
        assert code == 1
        assert "support" in capsys.readouterr().err


class TestTrainAndEval:
    def train_args(self, root, out, seed="0", epochs="3"):
        return [
            "train-lm", "--train", str(root / "train.txt"),
            "--valid", str(root / "valid.txt"), "--mode", "neglm",
            "--encoder", "window", "--d", "16", "--hidden", "16", "--window", "1",
            "--dropout", "0.0", "--lr", "1.0", "--decay", "1.2", "--decay-start", "2",
            "--epochs", epochs, "--clip", "5.0", "--batch", "20", "--unroll", "20",
            "--k", "5", "--alpha", "0.75", "--seed", seed, "--out", str(out),
        ]

    def test_train_writes_artifacts(self, chain_corpus, tmp_path, capsys):
        root, _ = chain_corpus
        out = tmp_path / "model.negf"
        code = main(self.train_args(root, out))
        printed = capsys.readouterr().out
        assert code == 0
        assert out.exists()
        assert (tmp_path / "model.negf.metrics").exists()
        assert (tmp_path / "model.negf.config").exists()
        assert "best_valid_ppl=" in printed
        metrics = (tmp_path / "model.negf.metrics").read_text().splitlines()
        assert len(metrics) == 3
        assert all("valid_ppl=" in line and "lr=" in line for line in metrics)
        config = dict(
            line.split("=", 1) for line in
            (tmp_path / "model.negf.config").read_text().splitlines()
        )
        assert config["mode"] == "neglm" and config["seed"] == "0"

    def test_same_seed_reproduces(self, chain_corpus, tmp_path, capsys):
        root, _ = chain_corpus
        out1, out2 = tmp_path / "m1.negf", tmp_path / "m2.negf"
        assert main(self.train_args(root, out1, epochs="2")) == 0
        assert main(self.train_args(root, out2, epochs="2")) == 0
        capsys.readouterr()
        assert out1.read_bytes() == out2.read_bytes()

        def stable_fields(path):
            rows = []
            for line in path.read_text().splitlines():
                fields = dict(kv.split("=", 1) for kv in line.split())
                fields.pop("wall_time")
                rows.append(fields)
            return rows

        assert stable_fields(tmp_path / "m1.negf.metrics") == stable_fields(
            tmp_path / "m2.negf.metrics"
        )

    def test_eval_saved_model(self, chain_corpus, tmp_path, capsys):
        root, _ = chain_corpus
        out = tmp_path / "model.negf"
        main(self.train_args(root, out))
        capsys.readouterr()
        code = main(["eval", "--model", str(out), "--test", str(root / "test.txt")])
        printed = capsys.readouterr().out
        assert code == 0
        values = dict(line.split("=") for line in printed.strip().splitlines())
        ppl_neglm = float(values["perplexity"])
        assert np.isfinite(ppl_neglm)

        # identical parameters, NEG-mode evaluation is strictly worse
        code = main(["eval", "--model", str(out), "--test", str(root / "test.txt"),
                     "--mode-override", "neg"])
        values = dict(line.split("=") for line in capsys.readouterr().out.strip().splitlines())
        assert code == 0
        assert float(values["perplexity"]) > ppl_neglm

    def test_eval_uniform_neg_model_gives_vocab_size(self, chain_corpus, tmp_path, capsys):
        root, _ = chain_corpus
        vocab = build_vocab((root / "train.txt").read_text())
        spec = EncoderSpec(kind="window", input_dim=4, hidden_dim=4, window_size=1)
        cfg = TrainConfig(k=2, alpha=0.75, seed=0, epochs=1, batch_size=2, unroll=2)
        model = init_model("neg", vocab, spec, cfg, np.random.default_rng(0))
        for arr in model.param_blocks().values():
            arr[:] = 0.0
        path = tmp_path / "uniform.negf"
        save_model(path, model)
        code = main(["eval", "--model", str(path), "--test", str(root / "test.txt")])
        values = dict(line.split("=") for line in capsys.readouterr().out.strip().splitlines())
        assert code == 0
        assert float(values["perplexity"]) == pytest.approx(vocab.size, rel=1e-10)

    def test_eval_corrupted_model_fails(self, chain_corpus, tmp_path, capsys):
        root, _ = chain_corpus
        out = tmp_path / "model.negf"
        main(self.train_args(root, out, epochs="2"))
        capsys.readouterr()
        blob = bytearray(out.read_bytes())
        blob[10] ^= 0x55
        out.write_bytes(bytes(blob))
        code = main(["eval", "--model", str(out), "--test", str(root / "test.txt")])
        assert code == 1
        assert "checksum" in capsys.readouterr().err

    def test_eval_writes_report_when_asked(self, chain_corpus, tmp_path, capsys):
        root, _ = chain_corpus
        out = tmp_path / "model.negf"
        main(self.train_args(root, out, epochs="2"))
        report = tmp_path / "eval.metrics"
        code = main(["eval", "--model", str(out), "--test", str(root / "test.txt"),
                     "--out", str(report)])
        capsys.readouterr()
        assert code == 0
        assert report.exists() and (tmp_path / "eval.metrics.config").exists()
