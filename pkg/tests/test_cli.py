import json

import pytest
import torch

from styleforge.architectures import ArchitectureSpec, build, reconstruct
from styleforge.checkpoint import checkpoint_from_model, save_checkpoint
from styleforge.cli import UsageError, main, parse_and_validate, parse_beta_sweep
from styleforge.codec import Encoder, standin_weights
from styleforge.images import read_image, save_png, write_toy_dataset


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    torch.manual_seed(0)
    save_png(torch.rand(3, 32, 48), d / "c.png")
    save_png(torch.rand(3, 32, 32), d / "s.png")
    return d


@pytest.fixture(scope="module")
def ckpt(files, encoder):
    # untrained weights saved as a checkpoint still count as a loadable, trained model
    model = build(ArchitectureSpec.artnet(), encoder, seed=4)
    save_checkpoint(checkpoint_from_model(model), files / "artnet")
    return files / "artnet"


def stylize_args(files, *extra):
    return ["stylize", "--content", str(files / "c.png"), "--style", str(files / "s.png"), *extra]


class TestParse:
    def test_example(self, files):
        cfg = parse_and_validate(stylize_args(files, "--arch", "artnet", "--transfer", "wct",
                                              "--beta", "0.8", "-o", "out.png"), env={})
        assert cfg.values["beta"] == 0.8
        assert cfg.spec() == ArchitectureSpec.artnet(transfer="wct", mst="3")

    def test_beta_out_of_range(self, files, capsys):
        assert main(stylize_args(files, "--beta", "1.5", "-o", "o.png"), env={}) == 2
        assert "beta must be in [0,1]" in capsys.readouterr().err

    def test_precedence(self, files, tmp_path):
        cfg_file = tmp_path / "c.json"
        cfg_file.write_text(json.dumps({"beta": 0.3, "seed": 11, "device": "cuda:9"}))
        cfg = parse_and_validate(stylize_args(files, "--config", str(cfg_file), "--beta", "0.9", "-o", "o.png"),
                                 env={"STYLEFORGE_DEVICE": "cpu"})
        assert cfg.values["beta"] == 0.9
        assert cfg.values["seed"] == 11
        assert cfg.values["device"] == "cpu"
        assert cfg.sources["seed"].startswith("config file")
        flag = parse_and_validate(stylize_args(files, "--device", "meta", "-o", "o.png"), env={"STYLEFORGE_DEVICE": "cpu"})
        assert flag.values["device"] == "meta"

    def test_config_value_error_names_source(self, files, tmp_path, capsys):
        cfg_file = tmp_path / "c.json"
        cfg_file.write_text(json.dumps({"beta": 2}))
        assert main(stylize_args(files, "--config", str(cfg_file), "-o", "o.png"), env={}) == 2
        err = capsys.readouterr().err
        assert "beta" in err and "config file" in err

    def test_print_config(self, files, capsys):
        assert main(stylize_args(files, "-o", "o.png", "--print-config"), env={}) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["command"] == "stylize" and doc["beta"] == 1.0

    @pytest.mark.parametrize("argv,needle", [
        (["stylize", "--content", "c.png"], "style"),
        (["train", "--data", "d"], "out_dir"),
        (["eval", "--metric", "frechet", "--images", "d"], "reference"),
        (["stylize", "--content", "a", "--style", "b", "-o", "c", "--arch", "artnet", "--mst", "inf"], "MST-inf"),
        (["stylize", "--content", "a", "--style", "b", "-o", "c", "--beta-sweep", "0:1"], "beta_sweep"),
        (["bench", "--resolutions", "256by128"], "WxH"),
        (["bench", "--runs", "3"], "runs"),
    ])
    def test_usage_errors(self, argv, needle, capsys):
        assert main(argv, env={}) == 2
        assert needle in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg_file = tmp_path / "c.json"
        cfg_file.write_text(json.dumps({"bogus": 1}))
        assert main(["bench", "--config", str(cfg_file)], env={}) == 2
        assert "bogus" in capsys.readouterr().err

    def test_argparse_error_is_usage(self, capsys):
        assert main(["stylize", "--arch", "resnet"], env={}) == 2

    def test_beta_sweep_values(self):
        assert parse_beta_sweep("0:1:0.2") == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
        with pytest.raises(UsageError):
            parse_beta_sweep("0:2:0.5")


class TestRuntime:
    def test_untrained_exit_1(self, files, tmp_path, capsys):
        out = tmp_path / "o.png"
        assert main(stylize_args(files, "-o", str(out)), env={}) == 1
        assert "UntrainedModel" in capsys.readouterr().err
        assert not out.exists()

    def test_missing_checkpoint(self, files, tmp_path, capsys):
        assert main(stylize_args(files, "-o", str(tmp_path / "o.png"), "--checkpoint", str(tmp_path / "nope")), env={}) == 1
        assert "not found" in capsys.readouterr().err

    def test_unreadable_image(self, files, ckpt, tmp_path, capsys):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"garbage")
        argv = ["stylize", "--content", str(bad), "--style", str(files / "s.png"), "-o", str(tmp_path / "o.png"),
                "--checkpoint", str(ckpt)]
        assert main(argv, env={}) == 1
        assert not (tmp_path / "o.png").exists()

    def test_checkpoint_graph_mismatch(self, files, ckpt, tmp_path, capsys):
        argv = stylize_args(files, "-o", str(tmp_path / "o.png"), "--checkpoint", str(ckpt), "--arch", "photonet")
        assert main(argv, env={}) == 1
        assert "CheckpointMismatch" in capsys.readouterr().err

    def test_stylize_with_checkpoint(self, files, ckpt, tmp_path):
        out = tmp_path / "o.png"
        assert main(stylize_args(files, "-o", str(out), "--checkpoint", str(ckpt), "--beta", "0.5"), env={}) == 0
        assert read_image(out).shape == (3, 32, 48)

    def test_deterministic_bytes(self, files, tmp_path):
        outs = []
        for name in ("a.png", "b.png"):
            argv = stylize_args(files, "-o", str(tmp_path / name), "--allow-untrained", "--seed", "7", "--mst", "5")
            assert main(argv, env={}) == 0
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]

    def test_beta_sweep(self, files, ckpt, encoder, tmp_path):
        argv = stylize_args(files, "-o", str(tmp_path / "out.png"), "--checkpoint", str(ckpt), "--beta-sweep", "0:1:0.2")
        assert main(argv, env={}) == 0
        produced = sorted(tmp_path.glob("out_beta*.png"))
        assert [p.name for p in produced] == [f"out_beta{b:.2f}.png" for b in (0, 0.2, 0.4, 0.6, 0.8, 1.0)]
        from styleforge.checkpoint import load_model
        model = load_model(ckpt, Encoder(standin_weights(0)))
        save_png(reconstruct(model, read_image(files / "c.png")), tmp_path / "recon.png")
        assert produced[0].read_bytes() == (tmp_path / "recon.png").read_bytes()
        assert produced[-1].read_bytes() != produced[0].read_bytes()

    def test_train_then_eval(self, tmp_path, capsys):
        data = tmp_path / "data"
        write_toy_dataset(data, n=4, size=40, seed=2)
        out_dir = tmp_path / "run"
        argv = ["train", "--data", str(data), "--out-dir", str(out_dir), "--arch", "vanilla", "--transfer", "none",
                "--crop-size", "32", "--batch-size", "2", "--steps", "2", "--epochs", "1"]
        assert main(argv, env={}) == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["steps"] == 2
        assert (out_dir / "train_log.jsonl").exists()

        assert main(["eval", "--metric", "recon", "--images", str(data), "--arch", "vanilla", "--transfer", "none",
                     "--checkpoint", str(out_dir / "checkpoint")], env={}) == 0
        recon = json.loads(capsys.readouterr().out)
        assert recon["metric"] == "recon" and recon["value"] > 0 and recon["n"] == 4

        assert main(["eval", "--metric", "tv", "--images", str(data)], env={}) == 0
        assert json.loads(capsys.readouterr().out)["value"] > 0

        assert main(["eval", "--metric", "frechet", "--images", str(data), "--reference", str(data)], env={}) == 0
        fd = json.loads(capsys.readouterr().out)
        assert fd["value"] < 1e-6 and "Inception" in fd["note"]

    def test_eval_recon_needs_model(self, files, capsys):
        assert main(["eval", "--metric", "recon", "--images", str(files)], env={}) == 1
        assert "UntrainedModel" in capsys.readouterr().err

    def test_bench_json(self, capsys):
        assert main(["bench", "--resolutions", "32x16", "--runs", "5", "--format", "json"], env={}) == 0
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["rows"]) == 1 and doc["rows"][0]["resolution"] == [32, 16]
