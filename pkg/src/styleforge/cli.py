"""Command-line entry point: ``styleforge {stylize,train,eval,bench}``.

Configuration is layered defaults < --config JSON < STYLEFORGE_DEVICE < flags.
Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .architectures import ArchitectureSpec, build, stylize
from .checkpoint import load_model
from .codec import Encoder, load_weights, standin_weights
from .errors import StyleForgeError, UntrainedModel
from .evaluation import FRECHET_NOTE, STANDARD_RESOLUTIONS, bench, embed_images, frechet_distance, recon_error, tv_score
from .images import list_images, read_image, save_png
from .training import TrainConfig, train

DEFAULTS = {
    "seed": 0,
    "device": "cpu",
    "weights": None,
    "checkpoint": None,
    "allow_untrained": False,
    "arch": "artnet",
    "transfer": "wct",
    "mst": None,
    "beta": 1.0,
    "beta_sweep": None,
    "content": None,
    "style": None,
    "output": None,
    "data": None,
    "out_dir": None,
    "alpha": 0.5,
    "learning_rate": 1e-4,
    "epochs": 5,
    "batch_size": 4,
    "crop_size": 256,
    "steps": None,
    "metric": None,
    "images": None,
    "reference": None,
    "resolutions": ",".join(f"{w}x{h}" for w, h in STANDARD_RESOLUTIONS),
    "runs": 5,
    "format": "table",
}

REQUIRED = {
    "stylize": ("content", "style", "output"),
    "train": ("data", "out_dir"),
    "eval": ("metric", "images"),
    "bench": (),
}

CHOICES = {
    "arch": ("vanilla", "artnet", "photonet"),
    "transfer": ("none", "adain", "wct"),
    "mst": ("none", "3", "5", "inf"),
    "metric": ("recon", "tv", "frechet"),
    "format": ("json", "table"),
    "device": None,
}

DEFAULT_MST = {"vanilla": "none", "artnet": "3", "photonet": "inf"}


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    command: str
    values: dict
    sources: dict = field(default_factory=dict)
    print_config: bool = False

    def spec(self):
        v = self.values
        mst = v["mst"] or DEFAULT_MST[v["arch"]]
        if v["arch"] == "vanilla":
            return ArchitectureSpec("vanilla", use_fa=False, use_ns=False, mst=mst, transfer_kind=v["transfer"])
        if v["arch"] == "artnet":
            return ArchitectureSpec.artnet(transfer=v["transfer"], mst=mst)
        return ArchitectureSpec.photonet(transfer=v["transfer"], mst=mst)

    def train_config(self):
        v = self.values
        return TrainConfig(
            alpha=v["alpha"], learning_rate=v["learning_rate"], epochs=v["epochs"],
            batch_size=v["batch_size"], crop_size=v["crop_size"], seed=v["seed"],
            max_steps=v["steps"],
        )

    def to_json(self):
        return json.dumps({"command": self.command, **self.values}, indent=2, sort_keys=True)


def _parser():
    p = argparse.ArgumentParser(prog="styleforge", description="Fast single-pass universal style transfer.")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON file with option values")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--device")
    shared.add_argument("--weights", help="VGG-19 weight archive prefix (default: seeded stand-in)")
    shared.add_argument("--checkpoint", help="trained decoder checkpoint prefix")
    shared.add_argument("--allow-untrained", action="store_true", default=None)
    shared.add_argument("--arch", choices=CHOICES["arch"])
    shared.add_argument("--transfer", choices=CHOICES["transfer"])
    shared.add_argument("--mst", choices=CHOICES["mst"])
    shared.add_argument("--print-config", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stylize", parents=[shared], help="stylize a content image")
    s.add_argument("--content")
    s.add_argument("--style")
    s.add_argument("-o", "--output")
    s.add_argument("--beta", type=float)
    s.add_argument("--beta-sweep", help="a:b:step, writes one output per beta")

    t = sub.add_parser("train", parents=[shared], help="train a decoder")
    t.add_argument("--data")
    t.add_argument("--out-dir")
    t.add_argument("--alpha", type=float)
    t.add_argument("--learning-rate", "--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--crop-size", type=int)
    t.add_argument("--steps", type=int, help="stop after this many steps")

    e = sub.add_parser("eval", parents=[shared], help="compute a metric")
    e.add_argument("--metric", choices=CHOICES["metric"])
    e.add_argument("--images", help="directory of images")
    e.add_argument("--reference", help="reference directory (frechet)")

    b = sub.add_parser("bench", parents=[shared], help="latency sweep over resolutions")
    b.add_argument("--resolutions", help="comma-separated WxH list")
    b.add_argument("--runs", type=int)
    b.add_argument("--format", choices=CHOICES["format"])
    return p


def parse_beta_sweep(text):
    try:
        a, b, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"beta_sweep must look like a:b:step, got {text!r}") from None
    if step <= 0 or not 0 <= a <= b <= 1:
        raise UsageError("beta_sweep needs 0 <= a <= b <= 1 and step > 0")
    n = int(round((b - a) / step))
    return [min(1.0, round(a + i * step, 10)) for i in range(n + 1)]


def parse_resolutions(text):
    out = []
    for item in str(text).split(","):
        try:
            w, h = (int(x) for x in item.lower().split("x"))
        except ValueError:
            raise UsageError(f"resolution must look like WxH, got {item!r}") from None
        out.append((w, h))
    return out


def _validate(cfg):
    v, src = cfg.values, cfg.sources

    def where(key):
        return f"(from {src.get(key, 'default')})"

    for key, choices in CHOICES.items():
        if choices and v[key] is not None and str(v[key]) not in choices:
            raise UsageError(f"{key} must be one of {', '.join(choices)}; got {v[key]!r} {where(key)}")
    if not isinstance(v["beta"], (int, float)) or not 0.0 <= v["beta"] <= 1.0:
        raise UsageError(f"beta must be in [0,1]; got {v['beta']!r} {where('beta')}")
    if not 0.0 <= v["alpha"] <= 1.0:
        raise UsageError(f"alpha must be in [0,1]; got {v['alpha']!r} {where('alpha')}")
    if v["crop_size"] % 16:
        raise UsageError(f"crop_size must be a multiple of 16; got {v['crop_size']} {where('crop_size')}")
    if v["runs"] < 5:
        raise UsageError(f"runs must be >= 5; got {v['runs']} {where('runs')}")
    if v["learning_rate"] <= 0:
        raise UsageError(f"learning_rate must be > 0 {where('learning_rate')}")
    for key in REQUIRED[cfg.command]:
        if v[key] is None:
            raise UsageError(f"missing required key {key!r} for {cfg.command}")
    if cfg.command == "eval" and v["metric"] == "frechet" and v["reference"] is None:
        raise UsageError("missing required key 'reference' for eval --metric frechet")
    if v["beta_sweep"] is not None:
        parse_beta_sweep(v["beta_sweep"])
    parse_resolutions(v["resolutions"])
    mst = v["mst"] or DEFAULT_MST[v["arch"]]
    try:
        cfg.spec().validate()
    except StyleForgeError as exc:
        raise UsageError(f"invalid architecture (arch={v['arch']}, mst={mst}): {exc}") from None


def parse_and_validate(argv, env=None):
    env = os.environ if env is None else env
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        raise UsageError("invalid command line") if exc.code else exc
    values = dict(DEFAULTS)
    sources = {k: "default" for k in values}

    if args.config:
        try:
            with open(args.config) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"config file {args.config} must hold a JSON object")
        for key, value in doc.items():
            key = key.replace("-", "_")
            if key not in values:
                raise UsageError(f"unknown key {key!r} in config file {args.config}")
            values[key] = value
            sources[key] = f"config file {args.config}"

    if env.get("STYLEFORGE_DEVICE"):
        values["device"] = env["STYLEFORGE_DEVICE"]
        sources["device"] = "env STYLEFORGE_DEVICE"

    for key, value in vars(args).items():
        if key in ("command", "config", "print_config") or value is None:
            continue
        values[key] = value
        sources[key] = "command line"

    cfg = CliConfig(args.command, values, sources, print_config=args.print_config)
    _validate(cfg)
    return cfg


def _encoder(cfg):
    if cfg.values["weights"]:
        archive = load_weights(cfg.values["weights"])
    else:
        print("note: no --weights given, using seeded stand-in VGG-19 weights", file=sys.stderr)
        archive = standin_weights(0)
    return Encoder(archive).to(cfg.values["device"])


def _model(cfg, encoder):
    spec = cfg.spec()
    if cfg.values["checkpoint"]:
        return load_model(cfg.values["checkpoint"], encoder, expected_spec=spec).to(cfg.values["device"])
    return build(spec, encoder, seed=cfg.values["seed"]).to(cfg.values["device"])


def _sweep_path(output, beta):
    out = Path(output)
    return out.with_name(f"{out.stem}_beta{beta:.2f}{out.suffix or '.png'}")


def _run_stylize(cfg, written):
    v = cfg.values
    encoder = _encoder(cfg)
    model = _model(cfg, encoder)
    content, style = read_image(v["content"]), read_image(v["style"])
    jobs = [(v["beta"], Path(v["output"]))]
    if v["beta_sweep"]:
        jobs = [(beta, _sweep_path(v["output"], beta)) for beta in parse_beta_sweep(v["beta_sweep"])]
    for beta, path in jobs:
        out = stylize(model, content, style, beta=beta, allow_untrained=bool(v["allow_untrained"]))
        written.append(path)
        save_png(out, path)
        print(path)


def _run_train(cfg, written):
    v = cfg.values
    encoder = _encoder(cfg)
    ckpt = train(v["data"], cfg.spec(), cfg.train_config(), encoder, out_dir=v["out_dir"])
    last = ckpt.loss_history[-1] if ckpt.loss_history else None
    print(json.dumps({"steps": ckpt.step, "final_loss": last[3] if last else None,
                      "checkpoint": str(Path(v["out_dir"]) / "checkpoint")}))


def _run_eval(cfg, written):
    v = cfg.values
    images = [read_image(p) for p in list_images(v["images"])]
    if v["metric"] == "tv":
        scores = [tv_score(im) for im in images]
        result = {"metric": "tv", "scale": "0-255", "n": len(scores),
                  "value": sum(scores) / len(scores) if scores else None}
    elif v["metric"] == "recon":
        model = _model(cfg, _encoder(cfg))
        if not model.trained and not v["allow_untrained"]:
            raise UntrainedModel("recon needs --checkpoint or --allow-untrained")
        result = {"metric": "recon", "scale": "0-255", "n": len(images), "value": recon_error(images, model)}
    else:
        encoder = _encoder(cfg)
        reference = [read_image(p) for p in list_images(v["reference"])]
        a = embed_images(images, encoder, source=v["images"])
        b = embed_images(reference, encoder, source=v["reference"])
        result = {"metric": "frechet", "value": frechet_distance(a, b), "note": FRECHET_NOTE}
    print(json.dumps(result, indent=2))


def _run_bench(cfg, written):
    v = cfg.values
    report = bench([cfg.spec()], parse_resolutions(v["resolutions"]), v["runs"], _encoder(cfg),
                   seed=v["seed"], device=v["device"])
    print(report.to_json() if v["format"] == "json" else report.to_table())


def dispatch(cfg):
    torch.manual_seed(cfg.values["seed"])
    torch.use_deterministic_algorithms(True)
    written = []
    runner = {"stylize": _run_stylize, "train": _run_train, "eval": _run_eval, "bench": _run_bench}[cfg.command]
    try:
        runner(cfg, written)
    except (StyleForgeError, OSError, ValueError, RuntimeError) as exc:
        for path in written:
            Path(path).unlink(missing_ok=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None, env=None):
    try:
        cfg = parse_and_validate(sys.argv[1:] if argv is None else argv, env)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    if cfg.print_config:
        print(cfg.to_json())
        return 0
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
