import json

import numpy as np
import pytest
import torch

from styleforge.codec import (
    Encoder, IMAGENET_MEAN, STAGE_CHANNELS, archive_paths, encode, load_weights, read_archive, write_archive,
)
from styleforge.errors import ImageTooSmall, MissingTensor, ShapeMismatch, StyleForgeError


@pytest.fixture
def archive_file(tmp_path, archive):
    write_archive(tmp_path / "vgg", archive.tensors)
    return tmp_path / "vgg"


def test_load_valid_archive(archive_file):
    loaded = load_weights(archive_file)
    assert len(loaded) == 32
    assert loaded["conv1_1.weight"].shape == (64, 3, 3, 3)
    assert not loaded["conv1_1.weight"].flags.writeable


def test_manifest_matches_blob_lengths(archive_file):
    manifest_path, bin_path = archive_paths(archive_file)
    entries = json.loads(manifest_path.read_text())
    total = sum(int(np.prod(e["shape"])) for e in entries)
    assert bin_path.stat().st_size == 4 * total
    assert all(e["dtype"] == "f32" for e in entries)


@pytest.mark.parametrize("suffix", ["", ".bin", ".manifest.json"])
def test_path_forms(archive_file, suffix):
    assert len(load_weights(str(archive_file) + suffix)) == 32


def test_missing_tensor(tmp_path, archive):
    tensors = dict(archive.tensors)
    del tensors["conv5_1.bias"]
    write_archive(tmp_path / "w", tensors)
    with pytest.raises(MissingTensor) as err:
        load_weights(tmp_path / "w")
    assert err.value.name == "conv5_1.bias"


def test_shape_mismatch(tmp_path, archive):
    tensors = dict(archive.tensors)
    tensors["conv1_1.weight"] = np.zeros((64, 3, 5, 5), np.float32)
    write_archive(tmp_path / "w", tensors)
    with pytest.raises(ShapeMismatch):
        load_weights(tmp_path / "w")


def test_truncated_blob(tmp_path, archive):
    write_archive(tmp_path / "w", archive.tensors)
    _, bin_path = archive_paths(tmp_path / "w")
    bin_path.write_bytes(bin_path.read_bytes()[:-8])
    with pytest.raises(StyleForgeError):
        load_weights(tmp_path / "w")


def test_object_manifest_carries_metadata(tmp_path):
    write_archive(tmp_path / "c", {"a": np.arange(6, dtype=np.float32).reshape(2, 3)}, meta={"step": 7})
    arc = read_archive(tmp_path / "c")
    assert arc.meta == {"step": 7}
    np.testing.assert_array_equal(arc["a"], np.arange(6).reshape(2, 3))


def test_encoder_only_needs_first_thirteen_convs(tmp_path, archive):
    tensors = {k: v for k, v in archive.tensors.items() if not k.startswith(("conv5_2", "conv5_3", "conv5_4"))}
    write_archive(tmp_path / "w", tensors)
    assert len(load_weights(tmp_path / "w")) == 26


@pytest.mark.parametrize("h,w", [(256, 256), (256, 128)])
def test_stage_shapes(encoder, h, w):
    stages = encode(torch.rand(3, h, w), encoder)
    for i, (s, c) in enumerate(zip(stages, STAGE_CHANNELS)):
        assert s.shape == (1, c, -(-h // 2 ** i), -(-w // 2 ** i))
        assert (s >= 0).all()
    if (h, w) == (256, 128):
        assert stages[4].shape[1:] == (512, 16, 8)


def test_odd_sizes_use_ceil(encoder):
    stages = encode(torch.rand(3, 17, 33), encoder)
    assert [tuple(s.shape[-2:]) for s in stages] == [(17, 33), (9, 17), (5, 9), (3, 5), (2, 3)]


def test_upto_stage(encoder):
    assert len(encode(torch.rand(3, 32, 32), encoder, upto_stage=2)) == 2


def test_too_small(encoder):
    with pytest.raises(ImageTooSmall):
        encode(torch.rand(3, 15, 64), encoder)


def test_constant_input_matches_brute_force(archive, encoder):
    # an image equal to the ImageNet mean is all-zero after preprocessing
    image = torch.tensor(IMAGENET_MEAN).view(3, 1, 1).expand(3, 32, 32).clone()
    stages = encode(image, encoder)

    # oracle: a spatially constant map stays constant through reflect-padded convs
    # and max pools, so each conv reduces to (sum of kernel taps) @ v + b
    v = np.zeros(3)
    expected = []
    order = ["conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv3_4",
             "conv4_1", "conv4_2", "conv4_3", "conv4_4", "conv5_1"]
    for name in order:
        w = archive[f"{name}.weight"].astype(np.float64)
        v = np.maximum(w.sum(axis=(2, 3)) @ v + archive[f"{name}.bias"], 0.0)
        if name.endswith("_1"):
            expected.append(v.copy())
    for got, want in zip(stages, expected):
        g = got[0].double().numpy()
        np.testing.assert_allclose(g, np.broadcast_to(want[:, None, None], g.shape), rtol=1e-4, atol=1e-5)


def test_deterministic(encoder):
    x = torch.rand(3, 48, 48, generator=torch.Generator().manual_seed(3))
    a, b = encode(x, encoder), encode(x.clone(), encoder)
    assert all(torch.equal(s, t) for s, t in zip(a, b))


def test_translation_consistency(archive):
    enc = Encoder(archive).double()
    x = torch.rand(1, 3, 32, 384, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    # receptive-field radius (input pixels) of relu1_1 .. relu5_1
    radius = (1, 5, 13, 37, 85)
    full = enc(x)
    for i in range(5):
        shift = 2 ** i
        shifted = enc(x[..., shift:])[i]
        margin = -(-radius[i] // shift) + 1
        a = full[i][..., margin + 1:-margin]
        b = shifted[..., margin:margin + a.shape[-1]]
        assert a.shape[-1] > 0
        torch.testing.assert_close(b, a, rtol=1e-9, atol=1e-9)


def test_encoder_frozen(encoder):
    assert all(not p.requires_grad for p in encoder.parameters())
