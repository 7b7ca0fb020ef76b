import numpy as np
import pytest

from slicesplat.deformnet import (DeformationNet, SKIP_LAYER, ema_update,
                                  encoding_dim)
from slicesplat.model import DeformationDelta

FD_STEP = 1e-5


def make_net(seed=5, width=32, depth=4):
    return DeformationNet(64, 64, hidden_width=width, depth=depth,
                          l_pos=10, l_time=6, seed=seed)


def perturbed_net(seed=5, scale=0.05):
    net = make_net(seed)
    params = net.parameters()
    rng = np.random.default_rng(seed + 1)
    for a in params:
        a += rng.standard_normal(a.shape) * scale
    net.set_parameters(params)
    return net


def test_encoding_dim():
    # sin+cos per frequency, per input channel, plus the raw channels
    assert encoding_dim(10, 6) == 2 * 2 * 10 + 2 * 6 + 3
    assert encoding_dim(1, 1) == 4 + 2 + 3


def test_output_arity_is_five():
    net = perturbed_net()
    means = np.random.default_rng(0).uniform(0, 64, size=(13, 2))
    out = net.batched_forward(means, 0.4)
    assert out.shape == (13, 5)
    delta = net.forward(means[0], 0.4)
    assert isinstance(delta, DeformationDelta)


def test_zero_initialized_head_gives_identity_deformation():
    for seed in range(5):
        net = make_net(seed=seed)
        means = np.random.default_rng(seed).uniform(0, 64, size=(20, 2))
        for t in (0.0, 0.25, 1.0):
            out = net.batched_forward(means, t)
            assert np.all(out == 0.0)


def test_forward_deterministic_and_seed_sensitive():
    a = perturbed_net(seed=3)
    b = perturbed_net(seed=3)
    c = perturbed_net(seed=4)
    means = np.random.default_rng(1).uniform(0, 64, size=(9, 2))
    out_a = a.batched_forward(means, 0.7)
    assert np.array_equal(out_a, b.batched_forward(means, 0.7))
    assert not np.array_equal(out_a, c.batched_forward(means, 0.7))


def test_batched_matches_single():
    net = perturbed_net()
    means = np.random.default_rng(2).uniform(0, 64, size=(6, 2))
    batch = net.batched_forward(means, 0.31)
    for i in range(6):
        row = net.batched_forward(means[i][None, :], 0.31)[0]
        assert np.allclose(row, batch[i], rtol=1e-12, atol=1e-15)


def test_empty_batch():
    net = perturbed_net()
    out = net.batched_forward(np.zeros((0, 2)), 0.5)
    assert out.shape == (0, 5)


def test_t_outside_unit_interval_rejected():
    net = make_net()
    means = np.zeros((1, 2))
    with pytest.raises(ValueError):
        net.batched_forward(means, -0.01)
    with pytest.raises(ValueError):
        net.batched_forward(means, 1.5)


def test_mean_offsets_bounded_by_tanh_scale():
    net = perturbed_net(scale=5.0)  # drive tanh deep into saturation
    means = np.random.default_rng(3).uniform(0, 64, size=(50, 2))
    out = net.batched_forward(means, 0.9)
    assert np.max(np.abs(out[:, :2])) <= net.mean_scale
    # other outputs are unbounded; with this drive they exceed the scale
    assert np.max(np.abs(out[:, 2:])) > net.mean_scale


def test_skip_concatenates_encoding():
    net = make_net(depth=6)
    enc = encoding_dim(10, 6)
    w = net.weights
    assert w[SKIP_LAYER].shape[1] == net.hidden_width + enc
    for i in range(1, 6):
        if i != SKIP_LAYER:
            assert w[i].shape[1] == net.hidden_width
    shallow = make_net(depth=2)
    assert all(wi.shape[1] in (enc, shallow.hidden_width)
               for wi in shallow.weights)


def test_param_gradients_match_finite_differences():
    for seed in (0, 1, 2):
        net = perturbed_net(seed=seed)
        means = np.random.default_rng(seed + 10).uniform(0, 64, size=(7, 2))
        gout = np.random.default_rng(seed + 20).standard_normal((7, 5))
        ngrads, _ = net.backward(means, 0.37, gout)
        analytic = ngrads.parameters()
        flat = net.parameters()
        probe = np.random.default_rng(seed + 30)

        def loss():
            return float(np.sum(net.batched_forward(means, 0.37) * gout))

        for li, arr in enumerate(flat):
            picks = probe.choice(arr.size, size=min(arr.size, 8),
                                 replace=False)
            for f in picks:
                idx = np.unravel_index(f, arr.shape)
                orig = arr[idx]
                arr[idx] = orig + FD_STEP
                net.set_parameters(flat)
                hi = loss()
                arr[idx] = orig - FD_STEP
                net.set_parameters(flat)
                lo = loss()
                arr[idx] = orig
                net.set_parameters(flat)
                numeric = (hi - lo) / (2 * FD_STEP)
                err = abs(analytic[li][idx] - numeric)
                assert err <= max(1e-3 * abs(numeric), 1e-6)


def test_mean_gradients_match_finite_differences():
    # this configuration was checked to keep every ReLU pre-activation
    # clear of zero within the probe step (a kink breaks central
    # differences without being a gradient error)
    net = perturbed_net(seed=9)
    means = np.random.default_rng(44).uniform(1, 63, size=(7, 2))
    gout = np.random.default_rng(45).standard_normal((7, 5))
    _, gmeans = net.backward(means, 0.5, gout)

    def loss():
        return float(np.sum(net.batched_forward(means, 0.5) * gout))

    for idx in np.ndindex(7, 2):
        orig = means[idx]
        means[idx] = orig + FD_STEP
        hi = loss()
        means[idx] = orig - FD_STEP
        lo = loss()
        means[idx] = orig
        numeric = (hi - lo) / (2 * FD_STEP)
        err = abs(gmeans[idx] - numeric)
        assert err <= max(1e-3 * abs(numeric), 1e-6)


def test_copy_is_independent():
    net = perturbed_net()
    dup = net.copy()
    dup.weights[0][0, 0] += 1.0
    assert net.weights[0][0, 0] != dup.weights[0][0, 0]


def test_set_parameters_validates():
    net = make_net()
    with pytest.raises(ValueError):
        net.set_parameters(net.parameters()[:-1])
    bad = net.parameters()
    bad[0] = np.zeros((1, 1))
    with pytest.raises(ValueError):
        net.set_parameters(bad)


def test_ema_fixed_point():
    teacher = perturbed_net(seed=11)
    student = teacher.copy()
    before = [p.copy() for p in teacher.parameters()]
    ema_update(teacher, student, 0.995)
    for a, b in zip(teacher.parameters(), before):
        assert np.max(np.abs(a - b)) < 1e-12


def test_ema_geometric_convergence():
    teacher = make_net(seed=12)
    student = perturbed_net(seed=13, scale=1.0)
    target = [p.copy() for p in student.parameters()]
    start = [p.copy() for p in teacher.parameters()]
    alpha = 0.9
    for k in range(1, 51):
        ema_update(teacher, student, alpha)
    # after k steps: teacher = alpha^k start + (1 - alpha^k) target
    ak = alpha ** 50
    for got, s0, tgt in zip(teacher.parameters(), start, target):
        want = ak * s0 + (1.0 - ak) * tgt
        assert np.max(np.abs(got - want)) < 1e-12


def test_ema_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        ema_update(make_net(depth=2), make_net(depth=3), 0.5)


def test_time_input_changes_output():
    net = perturbed_net(seed=15)
    means = np.random.default_rng(5).uniform(0, 64, size=(4, 2))
    a = net.batched_forward(means, 0.2)
    b = net.batched_forward(means, 0.8)
    assert not np.array_equal(a, b)
