import numpy as np
import pytest

from slicesplat.phantom import SplitMix64, generate_phantom


def reference_splitmix64(seed, count):
    """Straight transcription of the mixing constants, independent of the
    implementation under test."""
    mask = (1 << 64) - 1
    state = seed & mask
    out = []
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        z = z ^ (z >> 31)
        out.append(z)
    return out


def test_splitmix64_matches_reference():
    for seed in (0, 1, 7, 2 ** 63, 0xDEADBEEF):
        prng = SplitMix64(seed)
        got = [prng.next_u64() for _ in range(20)]
        assert got == reference_splitmix64(seed, 20)


def test_splitmix64_uniform_unit_interval():
    prng = SplitMix64(123)
    vals = [prng.uniform() for _ in range(2000)]
    assert all(0.0 <= v < 1.0 for v in vals)
    assert abs(np.mean(vals) - 0.5) < 0.02
    # 53-bit mantissa construction
    prng2 = SplitMix64(123)
    raw = reference_splitmix64(123, 3)
    for r, v in zip(raw, vals[:3]):
        assert v == (r >> 11) * 2.0 ** -53


def test_splitmix64_uniform_in_range():
    prng = SplitMix64(9)
    vals = [prng.uniform_in(-2.0, 3.0) for _ in range(500)]
    assert all(-2.0 <= v < 3.0 for v in vals)


def test_phantom_deterministic():
    a = generate_phantom(seed=7, dims=(16, 16, 16), n_structures=4)
    b = generate_phantom(seed=7, dims=(16, 16, 16), n_structures=4)
    assert np.array_equal(a, b)
    c = generate_phantom(seed=8, dims=(16, 16, 16), n_structures=4)
    assert not np.array_equal(a, c)


def test_phantom_shape_and_range():
    vol = generate_phantom(seed=3, dims=(24, 20, 18), n_structures=5)
    assert vol.shape == (18, 20, 24)  # (depth, height, width)
    assert vol.dtype == np.float64
    assert vol.min() >= 0.0
    assert vol.max() <= 1.0
    assert vol.max() > 0.1  # something was actually drawn


def test_phantom_rejects_small_dims():
    with pytest.raises(ValueError):
        generate_phantom(seed=0, dims=(8, 64, 64))
    with pytest.raises(ValueError):
        generate_phantom(seed=0, dims=(64, 64, 15))


def test_phantom_slices_vary_along_depth():
    vol = generate_phantom(seed=7, dims=(32, 32, 32), n_structures=8)
    diffs = [np.abs(vol[k + 1] - vol[k]).mean() for k in range(31)]
    assert max(diffs) > 1e-4
    # adjacent slices stay similar: structures are smooth along depth
    assert max(diffs) < 0.2


def test_phantom_structure_count_affects_content():
    sparse = generate_phantom(seed=5, dims=(32, 32, 16), n_structures=2)
    dense = generate_phantom(seed=5, dims=(32, 32, 16), n_structures=20)
    assert dense.mean() > sparse.mean()
