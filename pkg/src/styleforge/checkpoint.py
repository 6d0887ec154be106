"""Checkpoints: decoder/fusion parameters in the weight-archive format plus JSON metadata."""

from dataclasses import asdict, dataclass, field

import torch

from .architectures import ArchitectureSpec, build
from .codec import read_archive, write_archive
from .errors import CheckpointMismatch


@dataclass
class Checkpoint:
    params: dict  # name -> tensor
    spec: ArchitectureSpec
    train_config: dict = field(default_factory=dict)
    step: int = 0
    loss_history: list = field(default_factory=list)  # (step, l_recon, l_percep, l_total)


def save_checkpoint(ckpt, path):
    meta = {
        "spec": ckpt.spec.to_dict(),
        "train_config": ckpt.train_config,
        "step": ckpt.step,
        "loss_history": [list(row) for row in ckpt.loss_history],
    }
    write_archive(path, ckpt.params, meta=meta)


def load_checkpoint(path):
    archive = read_archive(path)
    if "spec" not in archive.meta:
        raise CheckpointMismatch(f"{path} has no embedded architecture spec")
    params = {name: torch.from_numpy(arr.copy()) for name, arr in archive.tensors.items()}
    return Checkpoint(
        params=params,
        spec=ArchitectureSpec.from_dict(archive.meta["spec"]),
        train_config=archive.meta.get("train_config", {}),
        step=archive.meta.get("step", 0),
        loss_history=[tuple(row) for row in archive.meta.get("loss_history", [])],
    )


def _same_graph(a, b):
    # transfer settings don't change the parameter set, so they may differ
    return (a.kind, a.use_fa, a.use_ns, a.decoder_channels) == (b.kind, b.use_fa, b.use_ns, b.decoder_channels)


def model_from_checkpoint(ckpt, encoder, expected_spec=None):
    """Rebuild a trained model; ``expected_spec`` overrides the transfer settings.

    Raises CheckpointMismatch when the stored graph differs from the requested one.
    """
    spec = ckpt.spec
    if expected_spec is not None:
        if not _same_graph(spec, expected_spec):
            raise CheckpointMismatch(
                f"checkpoint was trained for {spec.label()}, requested {expected_spec.label()}"
            )
        spec = expected_spec
    model = build(spec, encoder)
    missing = set(model.decoder_params()) ^ set(ckpt.params)
    if missing:
        raise CheckpointMismatch(f"checkpoint parameter set differs: {sorted(missing)}")
    model.load_state_dict(ckpt.params)
    model.trained = True
    return model


def load_model(path, encoder, expected_spec=None):
    return model_from_checkpoint(load_checkpoint(path), encoder, expected_spec)


def checkpoint_from_model(model, train_config=None, step=0, loss_history=()):
    params = {name: p.detach().cpu().clone() for name, p in model.decoder_params().items()}
    cfg = asdict(train_config) if train_config is not None and not isinstance(train_config, dict) else (train_config or {})
    return Checkpoint(params=params, spec=model.spec, train_config=cfg, step=step, loss_history=list(loss_history))
