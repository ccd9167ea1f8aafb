import json

import numpy as np
import pytest

from specnl import affinity as aff_mod
from specnl.checkpoint import load_checkpoint, save_checkpoint
from specnl.cli import main


def run_cli(args):
    return main(args)


def write_config(tmp_path, **over):
    doc = dict(seed=5, output_dir=str(tmp_path / "out"), variant="none",
               insertion_stage=2,
               task={"image_size": 28, "train_size": 96, "test_size": 32},
               optimizer={"epochs": 1})
    doc.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return str(path)


class TestBench:
    def test_snl_published_size(self, capsys):
        assert run_cli(["bench", "--variant", "SNL", "--c1", "1024", "--cs", "512"]) == 0
        out = capsys.readouterr().out
        assert "2,621,440" in out

    def test_nl_published_size(self, capsys):
        assert run_cli(["bench", "--variant", "NL", "--c1", "1024", "--cs", "512"]) == 0
        assert "2,097,152" in capsys.readouterr().out

    def test_tiny_snl_with_bn(self, capsys):
        assert run_cli(["bench", "--variant", "SNL", "--c1", "2", "--cs", "1"]) == 0
        out = capsys.readouterr().out
        assert "params    10" in out
        assert "bn params 4" in out

    def test_gmacs_reported(self, capsys):
        run_cli(["bench", "--variant", "SNL", "--c1", "1024", "--cs", "512",
                 "--hw", "14x14"])
        out = capsys.readouterr().out
        assert "G-MACs" in out

    def test_bad_hw(self, capsys):
        assert run_cli(["bench", "--variant", "SNL", "--c1", "4", "--cs", "2",
                        "--hw", "wide"]) == 2

    def test_invalid_variant_usage_error(self):
        assert run_cli(["bench", "--variant", "XXL", "--c1", "4", "--cs", "2"]) == 2


class TestVerifyCommand:
    def test_single_fast_suite(self, capsys, tmp_path):
        code = run_cli(["verify", "--suite", "oracle", "--trials", "20",
                        "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "oracle" in out and "PASS" in out

    def test_suite_flag_routing(self, capsys, tmp_path):
        run_cli(["verify", "--suite", "reductions", "--trials", "5",
                 "--out", str(tmp_path)])
        out = capsys.readouterr().out
        assert "reductions" in out
        assert "oracle" not in out

    def test_mutation_caught_and_case_serialized(self, capsys, tmp_path, monkeypatch):
        # deliberate fault injection: a sign error in the symmetric
        # normalization must break the reduction identities
        orig = aff_mod.normalize_sym

        def broken(aff, allow_negative=False):
            out = orig(aff, allow_negative)
            return aff_mod.AffinityMatrix(m=-out.m, norm=out.norm, kernel=out.kernel)

        monkeypatch.setattr(aff_mod, "normalize_sym", broken)
        code = run_cli(["verify", "--suite", "reductions", "--trials", "5",
                        "--out", str(tmp_path)])
        assert code == 1
        out = capsys.readouterr().out
        assert "FAIL" in out
        dump = tmp_path / "verify_fail_reductions.snl1"
        assert dump.exists()
        assert "x" in load_checkpoint(str(dump))


class TestTrainCommand:
    def test_missing_config_exit_2(self, capsys):
        assert run_cli(["train", "--config", "/nope/missing.json"]) == 2
        assert "missing.json" in capsys.readouterr().err

    def test_writes_metrics_and_checkpoint(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert run_cli(["train", "--config", cfg]) == 0
        out_dir = tmp_path / "out"
        lines = (out_dir / "metrics.csv").read_text().strip().split("\n")
        assert lines[0] == "epoch,lr,train_loss,top1,top5"
        assert len(lines) == 2
        ck = load_checkpoint(str(out_dir / "checkpoint.snl1"))
        assert "conv1.w" in ck

    def test_strict_deterministic_identical_csvs(self, tmp_path):
        cfg = write_config(tmp_path, output_dir=str(tmp_path / "a"))
        assert run_cli(["train", "--config", cfg, "--seed", "7",
                        "--strict-deterministic"]) == 0
        blob_a = (tmp_path / "a" / "metrics.csv").read_bytes()
        cfg2 = write_config(tmp_path, output_dir=str(tmp_path / "b"))
        assert run_cli(["train", "--config", cfg2, "--seed", "7",
                        "--strict-deterministic"]) == 0
        blob_b = (tmp_path / "b" / "metrics.csv").read_bytes()
        assert blob_a == blob_b

    def test_variant_override(self, tmp_path, capsys):
        cfg = write_config(tmp_path, c1=32, cs=16)
        assert run_cli(["train", "--config", cfg, "--variant", "SNL"]) == 0

    def test_block_vs_plain_same_seed_two_csvs(self, tmp_path, capsys):
        # the comparison pair behind the benefit study: same seed, with and
        # without the block
        cfg_a = write_config(tmp_path, c1=32, cs=16, output_dir=str(tmp_path / "snl"))
        assert run_cli(["train", "--config", cfg_a, "--variant", "SNL", "--seed", "3"]) == 0
        cfg_b = write_config(tmp_path, c1=32, cs=16, output_dir=str(tmp_path / "plain"))
        assert run_cli(["train", "--config", cfg_b, "--variant", "none", "--seed", "3"]) == 0
        a = (tmp_path / "snl" / "metrics.csv").read_text()
        b = (tmp_path / "plain" / "metrics.csv").read_text()
        assert a.splitlines()[0] == b.splitlines()[0]
        assert a != b

    def test_zero_epochs_checkpoint_equals_init(self, tmp_path, capsys):
        cfg = write_config(tmp_path, optimizer={"epochs": 0})
        assert run_cli(["train", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert "0 epochs" in out
        lines = (tmp_path / "out" / "metrics.csv").read_text().strip().split("\n")
        assert lines == ["epoch,lr,train_loss,top1,top5"]

    @pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
    def test_divergence_keeps_last_good_checkpoint(self, tmp_path, capsys):
        cfg = write_config(tmp_path, optimizer={"epochs": 3, "lr": 10000.0})
        assert run_cli(["train", "--config", cfg]) == 1
        err = capsys.readouterr().err
        assert "aborted" in err
        ck = load_checkpoint(str(tmp_path / "out" / "checkpoint.snl1"))
        assert all(np.all(np.isfinite(v)) for v in ck.values())


class TestAttnCommand:
    def _train_snl(self, tmp_path):
        cfg = write_config(tmp_path, variant="SNL", c1=32, cs=16,
                           task={"image_size": 28, "train_size": 64, "test_size": 32})
        assert run_cli(["train", "--config", cfg]) == 0
        return cfg, tmp_path / "out"

    def test_export_and_symmetry(self, tmp_path, capsys):
        cfg, out_dir = self._train_snl(tmp_path)
        rng = np.random.default_rng(0)
        img = rng.standard_normal((28, 28))
        inp = tmp_path / "input.snl1"
        save_checkpoint(str(inp), {"input": img})
        dest = tmp_path / "maps"
        code = run_cli(["attn", "--checkpoint", str(out_dir / "checkpoint.snl1"),
                        "--config", cfg, "--input", str(inp),
                        "--positions", "0,5", "--out", str(dest)])
        assert code == 0
        assert (dest / "attn_pos0.pgm").exists()
        blob = (dest / "attn_pos0.pgm").read_bytes()
        assert blob.startswith(b"P5\n7 7\n255\n")  # stage-2 grid of a 28px input
        # SNL attention is symmetric: value at 5 in map(0) == value at 0 in map(5)
        rows0 = [r.split(",") for r in (dest / "attn_pos0.csv").read_text().strip().split("\n")]
        rows5 = [r.split(",") for r in (dest / "attn_pos5.csv").read_text().strip().split("\n")]
        a0 = np.array(rows0, dtype=np.float64).reshape(-1)
        a5 = np.array(rows5, dtype=np.float64).reshape(-1)
        assert abs(a0[5] - a5[0]) < 1e-6

    def test_position_out_of_range(self, tmp_path, capsys):
        cfg, out_dir = self._train_snl(tmp_path)
        inp = tmp_path / "input.snl1"
        save_checkpoint(str(inp), {"input": np.zeros((28, 28))})
        code = run_cli(["attn", "--checkpoint", str(out_dir / "checkpoint.snl1"),
                        "--config", cfg, "--input", str(inp),
                        "--positions", "49", "--out", str(tmp_path / "m")])
        assert code == 2
        assert "0..48" in capsys.readouterr().err

    def test_variant_none_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        code = run_cli(["attn", "--checkpoint", "x", "--config", cfg,
                        "--input", "y", "--positions", "0"])
        assert code == 2
