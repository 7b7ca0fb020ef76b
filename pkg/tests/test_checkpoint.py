import struct

import numpy as np
import pytest

from slicesplat.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from slicesplat.deformnet import DeformationNet
from slicesplat.optim import DensityStats, GaussianAdam, densify_and_prune

from conftest import make_scene


def perturbed_net(seed=4, width_px=32, height_px=32):
    net = DeformationNet(width_px, height_px, hidden_width=16, depth=4,
                         seed=seed)
    params = net.parameters()
    rng = np.random.default_rng(seed + 1)
    # mild perturbation keeps rendered footprints finite
    for a in params:
        a += 0.05 * rng.standard_normal(a.shape)
    net.set_parameters(params)
    return net


def assert_models_bitwise_equal(a, b):
    assert np.array_equal(a.means, b.means)
    assert np.array_equal(a.log_scales, b.log_scales)
    assert np.array_equal(a.rotations, b.rotations)
    assert np.array_equal(a.opacity_logits, b.opacity_logits)
    assert np.array_equal(a.intensities, b.intensities)
    assert (a.width, a.height) == (b.width, b.height)
    assert (a.z0, a.sz0) == (b.z0, b.sz0)


def test_roundtrip_with_net(tmp_path):
    model = make_scene(0, n=17, size=32)
    net = perturbed_net()
    path = tmp_path / "ckpt.emg"
    save_checkpoint(path, model, net)
    model2, net2 = load_checkpoint(path)
    assert_models_bitwise_equal(model, model2)
    assert net2 is not None
    for a, b in zip(net.parameters(), net2.parameters()):
        assert np.array_equal(a, b)
    assert net2.l_pos == net.l_pos
    assert net2.l_time == net.l_time
    assert net2.mean_scale == net.mean_scale
    assert net2.hidden_width == net.hidden_width
    assert net2.depth == net.depth


def test_roundtrip_without_net(tmp_path):
    model = make_scene(1, n=5)
    path = tmp_path / "plain.emg"
    save_checkpoint(path, model, None)
    model2, net2 = load_checkpoint(path)
    assert net2 is None
    assert_models_bitwise_equal(model, model2)


def test_roundtrip_after_density_event(tmp_path):
    # odd, post-topology-change counts must survive
    model = make_scene(2, n=9, size=32)
    adam = GaussianAdam(model)
    stats = DensityStats.zeros(9)
    stats.add(np.full((9, 2), 1.0), np.ones(9, dtype=bool))
    densify_and_prune(model, stats, adam, np.random.default_rng(0),
                      grad_threshold=0.5)
    path = tmp_path / "densified.emg"
    save_checkpoint(path, model, perturbed_net(7))
    model2, _ = load_checkpoint(path)
    assert_models_bitwise_equal(model, model2)


def test_header_contains_count_and_reserved_words(tmp_path):
    model = make_scene(3, n=6)
    path = tmp_path / "hdr.emg"
    save_checkpoint(path, model)
    blob = path.read_bytes()
    assert blob[:4] == MAGIC
    count, r1, r2 = struct.unpack("<III", blob[4:16])
    assert count == 6
    assert r1 == 0 and r2 == 0
    # first f64 after the 16-byte header is mean.x of Gaussian 0
    first = struct.unpack("<d", blob[16:24])[0]
    assert first == model.means[0, 0]


def test_rejects_mismatched_image_dims(tmp_path):
    model = make_scene(6, n=4, size=16)
    with pytest.raises(ValueError, match="image size"):
        save_checkpoint(tmp_path / "x.emg", model, perturbed_net(3))


def test_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.emg"
    path.write_bytes(b"NOPE" + bytes(32))
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_rejects_truncation(tmp_path):
    model = make_scene(4, n=8, size=32)
    path = tmp_path / "full.emg"
    save_checkpoint(path, model, perturbed_net(9))
    blob = path.read_bytes()
    cut = tmp_path / "cut.emg"
    cut.write_bytes(blob[:len(blob) // 2])
    with pytest.raises(ValueError):
        load_checkpoint(cut)


def test_loaded_net_renders_identically(tmp_path):
    from slicesplat.rasterizer import render
    model = make_scene(5, n=12, size=24)
    model.width = 32
    model.height = 24
    net = perturbed_net(11, 32, 24)
    path = tmp_path / "r.emg"
    save_checkpoint(path, model, net)
    model2, net2 = load_checkpoint(path)
    t = 0.37
    img1, _ = render(model, net.batched_forward(model.means, t))
    img2, _ = render(model2, net2.batched_forward(model2.means, t))
    assert np.array_equal(img1, img2)
