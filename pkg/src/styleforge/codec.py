"""Frozen VGG-19 feature extractor and its weight archive format.

An archive is a pair of files sharing a prefix::

    <name>.manifest.json   [{"name": ..., "shape": [...], "dtype": "f32"}, ...]
    <name>.bin             little-endian float32 blobs, concatenated in manifest order

Checkpoints reuse the same layout but store an object in the manifest,
``{"tensors": [...], ...metadata}``, so extra JSON blocks can ride along.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ImageTooSmall, MissingTensor, ShapeMismatch, StyleForgeError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

STAGE_CHANNELS = (64, 128, 256, 512, 512)
MIN_SIZE = 16

# (name, out_channels, in_channels) for every 3x3 conv of VGG-19 in order.
VGG19_CONVS = (
    ("conv1_1", 64, 3), ("conv1_2", 64, 64),
    ("conv2_1", 128, 64), ("conv2_2", 128, 128),
    ("conv3_1", 256, 128), ("conv3_2", 256, 256), ("conv3_3", 256, 256), ("conv3_4", 256, 256),
    ("conv4_1", 512, 256), ("conv4_2", 512, 512), ("conv4_3", 512, 512), ("conv4_4", 512, 512),
    ("conv5_1", 512, 512), ("conv5_2", 512, 512), ("conv5_3", 512, 512), ("conv5_4", 512, 512),
)
# The encoder stops at relu5_1, so only these are required.
ENCODER_CONVS = VGG19_CONVS[:13]

VGG19_SHAPES = {}
for _name, _out, _in in VGG19_CONVS:
    VGG19_SHAPES[f"{_name}.weight"] = (_out, _in, 3, 3)
    VGG19_SHAPES[f"{_name}.bias"] = (_out,)
REQUIRED_TENSORS = tuple(
    f"{name}.{kind}" for name, _, _ in ENCODER_CONVS for kind in ("weight", "bias")
)


@dataclass(frozen=True)
class WeightArchive:
    manifest: list
    tensors: dict = field(repr=False)
    meta: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, name):
        return self.tensors[name]

    def __len__(self):
        return len(self.tensors)

    def names(self):
        return [entry["name"] for entry in self.manifest]


def archive_paths(path):
    """Map ``foo``, ``foo.bin`` or ``foo.manifest.json`` to both file paths."""
    path = str(path)
    for suffix in (".manifest.json", ".bin"):
        if path.endswith(suffix):
            path = path[: -len(suffix)]
            break
    return Path(path + ".manifest.json"), Path(path + ".bin")


def read_archive(path):
    """Read any archive (encoder weights or checkpoint) without VGG validation."""
    manifest_path, bin_path = archive_paths(path)
    if not manifest_path.exists() or not bin_path.exists():
        raise FileNotFoundError(f"archive not found: {manifest_path} / {bin_path}")
    with open(manifest_path) as f:
        doc = json.load(f)
    if isinstance(doc, list):
        entries, meta = doc, {}
    elif isinstance(doc, dict) and isinstance(doc.get("tensors"), list):
        entries = doc["tensors"]
        meta = {k: v for k, v in doc.items() if k != "tensors"}
    else:
        raise StyleForgeError(f"malformed manifest {manifest_path}")

    raw = bin_path.read_bytes()
    tensors = {}
    offset = 0
    manifest = []
    for entry in entries:
        if entry.get("dtype", "f32") != "f32":
            raise StyleForgeError(f"unsupported dtype {entry.get('dtype')!r} for {entry['name']}")
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = 4 * count
        if offset + nbytes > len(raw):
            raise StyleForgeError(f"blob file truncated at tensor {entry['name']!r}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        arr = arr.astype(np.float32)
        arr.setflags(write=False)
        tensors[entry["name"]] = arr
        manifest.append({"name": entry["name"], "shape": list(shape), "dtype": "f32"})
        offset += nbytes
    if offset != len(raw):
        raise StyleForgeError(f"{len(raw) - offset} trailing bytes in {bin_path}")
    return WeightArchive(manifest=manifest, tensors=tensors, meta=meta)


def write_archive(path, tensors, meta=None):
    """Write named arrays as an archive; atomic per file (temp + rename).

    The blob file is committed first so a visible manifest always points at
    complete data.
    """
    manifest_path, bin_path = archive_paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    tmp_bin = bin_path.with_name(bin_path.name + ".tmp")
    with open(tmp_bin, "wb") as f:
        for name, value in tensors.items():
            if isinstance(value, torch.Tensor):
                value = value.detach().cpu().numpy()
            arr = np.ascontiguousarray(value, dtype="<f4")
            f.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "dtype": "f32"})
        f.flush()
        os.fsync(f.fileno())
    doc = entries if meta is None else {"tensors": entries, **meta}
    tmp_manifest = manifest_path.with_name(manifest_path.name + ".tmp")
    with open(tmp_manifest, "w") as f:
        json.dump(doc, f, indent=1)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp_bin, bin_path)
    os.replace(tmp_manifest, manifest_path)


def validate_vgg19(archive):
    for name in REQUIRED_TENSORS:
        if name not in archive.tensors:
            raise MissingTensor(name)
    for name, arr in archive.tensors.items():
        expected = VGG19_SHAPES.get(name)
        if expected is None:
            raise ShapeMismatch(f"unexpected tensor {name!r} in VGG-19 archive")
        if tuple(arr.shape) != expected:
            raise ShapeMismatch(f"{name}: expected shape {expected}, got {tuple(arr.shape)}")
    return archive


def load_weights(path):
    """Load and validate a VGG-19 weight archive."""
    return validate_vgg19(read_archive(path))


def standin_weights(seed=0, layers=VGG19_CONVS):
    """Seeded random VGG-19 weights with the real layer shapes.

    Used wherever pretrained ImageNet weights are not available; the archive
    is a drop-in for one produced by ``tools/convert_vgg19.py``.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, out_ch, in_ch in layers:
        fan_in = in_ch * 9
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_ch, in_ch, 3, 3))
        b = rng.normal(0.0, 0.05, size=(out_ch,))
        tensors[f"{name}.weight"] = w.astype(np.float32)
        tensors[f"{name}.bias"] = b.astype(np.float32)
    manifest = []
    for name, arr in tensors.items():
        arr.setflags(write=False)
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "f32"})
    return validate_vgg19(WeightArchive(manifest=manifest, tensors=tensors))


def from_torchvision_state_dict(state_dict):
    """Rename a torchvision ``vgg19().features`` state dict to archive names."""
    conv_indices = (0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34)
    tensors = {}
    for (name, _, _), idx in zip(VGG19_CONVS, conv_indices):
        for kind in ("weight", "bias"):
            key = f"{idx}.{kind}"
            if key not in state_dict:
                key = f"features.{idx}.{kind}"
            tensors[f"{name}.{kind}"] = state_dict[key].detach().cpu().numpy().astype(np.float32)
    return tensors


def conv_pad(x, pad=1):
    # reflect padding needs every spatial dim > pad
    mode = "reflect" if min(x.shape[-2:]) > pad else "replicate"
    return F.pad(x, (pad, pad, pad, pad), mode=mode)


def preprocess(images):
    mean = images.new_tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = images.new_tensor(IMAGENET_STD).view(1, 3, 1, 1)
    return (images - mean) / std


class Encoder(nn.Module):
    """VGG-19 up to relu5_1; returns relu1_1 .. relu5_1 activations.

    Takes RGB images in [0, 1] shaped (N, 3, H, W) and applies ImageNet
    normalization internally. Parameters never require grad.
    """

    # conv layers after which a stage output is tapped, and where pools go
    _STAGE_ENDS = ("conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1")
    _POOL_BEFORE = ("conv2_1", "conv3_1", "conv4_1", "conv5_1")

    def __init__(self, archive):
        super().__init__()
        self.convs = nn.ModuleDict()
        for name, out_ch, in_ch in ENCODER_CONVS:
            conv = nn.Conv2d(in_ch, out_ch, 3)
            conv.weight.data.copy_(torch.from_numpy(np.array(archive[f"{name}.weight"])))
            conv.bias.data.copy_(torch.from_numpy(np.array(archive[f"{name}.bias"])))
            self.convs[name] = conv
        self.requires_grad_(False)
        self.eval()

    def forward(self, images, upto_stage=5):
        if images.dim() == 3:
            images = images.unsqueeze(0)
        h, w = images.shape[-2:]
        if h < MIN_SIZE or w < MIN_SIZE:
            raise ImageTooSmall(f"image is {h}x{w}; need at least {MIN_SIZE}x{MIN_SIZE}")
        if not 1 <= upto_stage <= 5:
            raise ValueError(f"upto_stage must be in 1..5, got {upto_stage}")
        x = preprocess(images)
        stages = []
        for name, _, _ in ENCODER_CONVS:
            if name in self._POOL_BEFORE:
                x = F.max_pool2d(x, 2, ceil_mode=True)
            x = F.relu(self.convs[name](conv_pad(x)))
            if name in self._STAGE_ENDS:
                stages.append(x)
                if len(stages) == upto_stage:
                    break
        return stages

    def checksum(self):
        h = hashlib.sha256()
        for name, tensor in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()


def encode(image, weights, upto_stage=5):
    """Stage features of ``image`` (C, H, W or N, C, H, W) under ``weights``.

    ``weights`` may be a WeightArchive or an already built Encoder.
    """
    encoder = weights if isinstance(weights, Encoder) else Encoder(weights)
    with torch.no_grad():
        return encoder(image, upto_stage)
