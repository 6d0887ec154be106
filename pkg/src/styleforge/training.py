"""Decoder training: reconstruction + perceptual loss with Adam."""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .architectures import build
from .checkpoint import checkpoint_from_model, save_checkpoint
from .errors import EmptyDataset, NonFiniteLoss, ShapeMismatch
from .images import list_images

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha: float = 0.5
    learning_rate: float = 1e-4
    epochs: int = 5
    batch_size: int = 4
    crop_size: int = 256
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_steps: int = None
    log_every: int = 1

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.crop_size % 16:
            raise ValueError(f"crop_size must be a multiple of 16, got {self.crop_size}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        return self


def _resize_min_side(im, size):
    w, h = im.size
    scale = size / min(w, h)
    new = (max(size, round(w * scale)), max(size, round(h * scale)))
    return im.resize(new, Image.BICUBIC)


def _to_tensor(im):
    arr = np.asarray(im, dtype=np.float32) / 255.0
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def _random_crop(img, size, rng):
    _, h, w = img.shape
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[:, top:top + size, left:left + size]


def load_dataset(directory, crop_size):
    """Decode every image in ``directory`` resized so its short side is ``crop_size``."""
    images = []
    for path in list_images(directory):
        try:
            with Image.open(path) as im:
                images.append(_to_tensor(_resize_min_side(im.convert("RGB"), crop_size)))
        except Exception as exc:  # noqa: BLE001 - any decoder failure skips the file
            log.warning("skipping %s: %s", path, exc)
    if not images:
        raise EmptyDataset(f"no decodable images in {directory}")
    return images


def load_batch(directory, batch_size, crop_size, seed):
    images = load_dataset(directory, crop_size)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(images), size=batch_size, replace=batch_size > len(images))
    return [_random_crop(images[i], crop_size, rng) for i in idx]


def _batched(x):
    return x.unsqueeze(0) if x.dim() == 3 else x


def _frobenius(diff):
    return diff.flatten(1).norm(dim=1)


def recon_loss(I_in, I_out):
    """Frobenius norm of the pixel difference; batch mean for 4-D inputs."""
    if I_in.shape != I_out.shape:
        raise ShapeMismatch(f"{tuple(I_in.shape)} vs {tuple(I_out.shape)}")
    if I_in.dim() <= 3:
        return (I_in - I_out).norm()
    return _frobenius(I_in - I_out).mean()


def perceptual_loss(I_in, I_out, encoder, target_features=None):
    """Sum over the five encoder stages of the feature-difference Frobenius norms."""
    if I_in.shape != I_out.shape:
        raise ShapeMismatch(f"{tuple(I_in.shape)} vs {tuple(I_out.shape)}")
    if target_features is None:
        with torch.no_grad():
            target_features = encoder(_batched(I_in))
    out_features = encoder(_batched(I_out))
    total = 0.0
    for a, b in zip(target_features, out_features):
        total = total + _frobenius(a - b)
    return total.mean()


def total_loss(I_in, I_out, alpha, encoder):
    return _combine(recon_loss(I_in, I_out), perceptual_loss(I_in, I_out, encoder), alpha)


def _combine(l_recon, l_percep, alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    return alpha * l_recon + (1.0 - alpha) * l_percep


def smoothed(values, window=20):
    """Trailing mean over ``window`` entries."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    for i in range(len(values)):
        out[i] = values[max(0, i - window + 1):i + 1].mean()
    return out


def train(dataset_dir, spec, cfg, encoder, out_dir=None, model=None, images=None):
    """Train the decoder/fusion layers of ``spec`` on reconstruction.

    Transfers are skipped, the encoder stays frozen. Stops after ``cfg.epochs``
    epochs or ``cfg.max_steps`` steps, whichever comes first. With ``out_dir``
    a checkpoint is written at every epoch end and a JSON-lines log per
    logged step. Returns the final Checkpoint; ``model.trained`` is set.
    """
    cfg.validate()
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    if images is None:
        images = load_dataset(dataset_dir, cfg.crop_size)
    if model is None:
        model = build(spec, encoder, seed=cfg.seed)
    model.train()
    before = encoder.checksum()

    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.adam_betas, eps=cfg.adam_eps)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "train_log.jsonl", "w")

    history = []
    step = 0
    steps_per_epoch = math.ceil(len(images) / cfg.batch_size)
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(images))
            for b in range(steps_per_epoch):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                t0 = time.perf_counter()
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                batch = torch.stack([_random_crop(images[i], cfg.crop_size, rng) for i in idx])
                stages = model.encode(batch)
                out = model.decode(stages)
                l_recon = recon_loss(batch, out)
                l_percep = perceptual_loss(batch, out, encoder, target_features=stages)
                loss = _combine(l_recon, l_percep, cfg.alpha)
                step += 1
                if not torch.isfinite(loss):
                    if log_file is not None:
                        log_file.write(json.dumps({"step": step, "error": "non-finite loss"}) + "\n")
                    raise NonFiniteLoss(step, loss.item())
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                if step % cfg.log_every == 0:
                    row = (step, l_recon.item(), l_percep.item(), loss.item())
                    history.append(row)
                    if log_file is not None:
                        wall_ms = 1000.0 * (time.perf_counter() - t0)
                        log_file.write(json.dumps({
                            "step": step, "l_recon": row[1], "l_percep": row[2],
                            "l_total": row[3], "wall_ms": round(wall_ms, 3),
                        }) + "\n")
                        log_file.flush()
            if out_dir is not None:
                save_checkpoint(checkpoint_from_model(model, cfg, step, history), out_dir / "checkpoint")
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
    finally:
        if log_file is not None:
            log_file.close()
        model.eval()

    assert encoder.checksum() == before, "encoder weights changed during training"
    model.trained = True
    return checkpoint_from_model(model, asdict(cfg), step, history)
