import json

import numpy as np
import pytest

from descratch import cli, data, degrade, train


@pytest.fixture
def clean_dir(tmp_path):
    d = tmp_path / "clean"
    d.mkdir()
    rng = np.random.default_rng(0)
    for k in range(3):
        data.save_image(d / f"img{k}.png", rng.random((3, 48, 48)))
    return d


def run(*argv):
    return cli.main(list(argv))


def small_train_config(tmp_path, epochs=1):
    cfg = {"epochs": epochs, "batch_size": 2, "patch": 34, "median_k": 3,
           "n_patches_per_pair": 2, "augment": False, "checkpoint_every": 1}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


class TestSynth:
    def test_writes_dataset_and_specs(self, tmp_path, clean_dir, capsys):
        out = tmp_path / "ds"
        assert run("synth", "--clean-dir", str(clean_dir),
                   "--out-dir", str(out), "--seed", "3") == 0
        assert "wrote 3 pairs" in capsys.readouterr().out
        pairs = data.load_dataset(out)
        assert [p.id for p in pairs] == ["img0", "img1", "img2"]
        for p in pairs:
            p.validate()
            specs = degrade.specs_from_text(
                (out / "specs" / f"{p.id}.txt").read_text())
            assert specs

    def test_specs_regenerate_the_corruption(self, tmp_path, clean_dir):
        out = tmp_path / "ds"
        run("synth", "--clean-dir", str(clean_dir), "--out-dir", str(out),
            "--seed", "3")
        specs = degrade.specs_from_text((out / "specs" / "img0.txt").read_text())
        clean = data.load_image(clean_dir / "img0.png")
        rebuilt = degrade.composite(clean, specs)
        stored = data.load_image(out / "corrupted" / "img0.png")
        assert np.max(np.abs(rebuilt.corrupted - stored)) <= 0.5 / 255 + 1e-12

    def test_count_limits_output(self, tmp_path, clean_dir):
        out = tmp_path / "ds"
        run("synth", "--clean-dir", str(clean_dir), "--out-dir", str(out),
            "--count", "2")
        assert len(data.load_dataset(out)) == 2

    def test_deterministic(self, tmp_path, clean_dir):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run("synth", "--clean-dir", str(clean_dir), "--out-dir", str(out),
                "--seed", "9")
        assert (a / "corrupted" / "img1.png").read_bytes() == \
            (b / "corrupted" / "img1.png").read_bytes()

    def test_missing_dir_is_usage_error(self, tmp_path, capsys):
        code = run("synth", "--clean-dir", str(tmp_path / "nope"),
                   "--out-dir", str(tmp_path / "o"))
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_empty_dir_is_usage_error(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert run("synth", "--clean-dir", str(empty),
                   "--out-dir", str(tmp_path / "o")) == 2


@pytest.fixture
def dataset(tmp_path, clean_dir):
    out = tmp_path / "ds"
    run("synth", "--clean-dir", str(clean_dir), "--out-dir", str(out),
        "--seed", "1")
    return out


class TestTrain:
    def test_full_cycle(self, tmp_path, dataset, capsys):
        cfg = small_train_config(tmp_path)
        out = tmp_path / "run"
        assert run("train", "--data", str(dataset), "--config", str(cfg),
                   "--out", str(out)) == 0
        assert (out / "final.frck").exists()
        assert (out / "log.tsv").read_text().startswith("step\t")
        assert "training complete" in capsys.readouterr().out

    def test_invalid_config_lists_all_problems(self, tmp_path, dataset, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"epochs": 0, "batch_size": 1}))
        assert run("train", "--data", str(dataset), "--config", str(bad),
                   "--out", str(tmp_path / "o")) == 2
        err = capsys.readouterr().err
        assert "epochs" in err and "batch_size" in err

    def test_unknown_config_key_is_usage_error(self, tmp_path, dataset):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"lr": 0.1}))
        assert run("train", "--data", str(dataset), "--config", str(bad),
                   "--out", str(tmp_path / "o")) == 2

    def test_missing_config_file(self, tmp_path, dataset):
        assert run("train", "--data", str(dataset),
                   "--config", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "o")) == 2

    def test_missing_dataset_is_runtime_error(self, tmp_path):
        cfg = small_train_config(tmp_path)
        assert run("train", "--data", str(tmp_path / "nope"),
                   "--config", str(cfg), "--out", str(tmp_path / "o")) == 1


@pytest.fixture
def checkpoint_path(tmp_path, dataset):
    cfg = small_train_config(tmp_path)
    out = tmp_path / "run"
    assert run("train", "--data", str(dataset), "--config", str(cfg),
               "--out", str(out)) == 0
    return out / "final.frck"


class TestInfer:
    def test_directory_mode(self, tmp_path, dataset, checkpoint_path):
        out = tmp_path / "restored"
        assert run("infer", "--checkpoint", str(checkpoint_path),
                   "--in", str(dataset / "corrupted"), "--out", str(out)) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["img0.png", "img1.png", "img2.png"]
        img = data.load_image(out / "img0.png")
        assert img.shape == (3, 48, 48)

    def test_single_file_mode(self, tmp_path, dataset, checkpoint_path):
        dst = tmp_path / "one" / "fixed.png"
        assert run("infer", "--checkpoint", str(checkpoint_path),
                   "--in", str(dataset / "corrupted" / "img0.png"),
                   "--out", str(dst)) == 0
        assert dst.exists()

    def test_deterministic(self, tmp_path, dataset, checkpoint_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            run("infer", "--checkpoint", str(checkpoint_path),
                "--in", str(dataset / "corrupted"), "--out", str(out))
            outs.append((out / "img0.png").read_bytes())
        assert outs[0] == outs[1]

    def test_missing_checkpoint(self, tmp_path, dataset):
        assert run("infer", "--checkpoint", str(tmp_path / "nope.frck"),
                   "--in", str(dataset / "corrupted"),
                   "--out", str(tmp_path / "o")) == 2

    def test_corrupt_checkpoint_is_runtime_error(self, tmp_path, dataset):
        bad = tmp_path / "bad.frck"
        bad.write_bytes(b"FRCK" + bytes([1]) + b"garbage")
        assert run("infer", "--checkpoint", str(bad),
                   "--in", str(dataset / "corrupted"),
                   "--out", str(tmp_path / "o")) == 1


class TestEval:
    def test_report_and_tsv(self, tmp_path, dataset, capsys):
        out = tmp_path / "report.tsv"
        assert run("eval", "--restored", str(dataset / "corrupted"),
                   "--reference", str(dataset / "clean"),
                   "--out", str(out)) == 0
        printed = capsys.readouterr().out
        assert "PSNR" in printed and "mean" in printed
        lines = out.read_text().splitlines()
        assert lines[0] == "id\tpsnr_db\tssim"
        assert len([ln for ln in lines if "\t" in ln]) == 5  # 3 + mean + header

    def test_id_mismatch_is_usage_error(self, tmp_path, dataset, capsys):
        other = tmp_path / "other"
        other.mkdir()
        data.save_image(other / "zzz.png", np.zeros((3, 8, 8)))
        assert run("eval", "--restored", str(other),
                   "--reference", str(dataset / "clean")) == 2
        assert "counterpart" in capsys.readouterr().err

    def test_missing_dir_is_usage_error(self, tmp_path, dataset):
        assert run("eval", "--restored", str(tmp_path / "nope"),
                   "--reference", str(dataset / "clean")) == 2


class TestParser:
    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 2

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["synth", "--bogus"])
        assert exc.value.code == 2
