import numpy as np
import pytest

from shadowfuse import data


def test_make_shadow_masked_identity_and_full():
    img = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
    assert np.array_equal(data.make_shadow_masked(img, np.zeros((8, 8))), img)
    assert np.array_equal(data.make_shadow_masked(img, np.ones((8, 8))), np.zeros((8, 8, 3)))


def test_make_shadow_masked_elementwise_oracle():
    img = np.arange(12, dtype=float).reshape(2, 2, 3) / 12.0
    mask = np.array([[1.0, 0.0], [0.0, 0.0]])
    out = data.make_shadow_masked(img, mask)
    for i in range(2):
        for j in range(2):
            for c in range(3):
                assert out[i, j, c] == img[i, j, c] * (1.0 - mask[i, j])


def test_make_shadow_masked_idempotent(rng):
    for _ in range(20):
        img = rng.uniform(0, 1, (6, 6, 3))
        mask = (rng.uniform(0, 1, (6, 6)) > 0.5).astype(float)
        once = data.make_shadow_masked(img, mask)
        assert np.array_equal(data.make_shadow_masked(once, mask), once)


def test_make_shadow_masked_dim_mismatch():
    with pytest.raises(ValueError):
        data.make_shadow_masked(np.zeros((4, 4, 3)), np.zeros((5, 5)))


def test_irregular_mask_determinism_and_coverage():
    m1 = data.sample_irregular_mask(7, 64, 64, (0.1, 0.4))
    m2 = data.sample_irregular_mask(7, 64, 64, (0.1, 0.4))
    assert np.array_equal(m1, m2)
    assert set(np.unique(m1)) <= {0.0, 1.0}


def test_irregular_mask_coverage_counting_oracle():
    lo, hi = 0.1, 0.4
    for seed in range(1000):
        m = data.sample_irregular_mask(seed, 64, 64, (lo, hi))
        ones = int(np.count_nonzero(m == 1.0))
        cov = ones / m.size
        assert lo <= cov <= hi, (seed, cov)


@pytest.mark.parametrize("bad", [(0.0, 0.0), (0.4, 0.1), (-0.1, 0.5), (0.2, 1.5)])
def test_irregular_mask_bad_ranges(bad):
    with pytest.raises(ValueError):
        data.sample_irregular_mask(0, 32, 32, bad)


def test_synthetic_shadow_construction():
    triplets, factors = data.generate_synthetic_shadow(3, 6, size=64, return_factors=True)
    assert len(triplets) == 6
    for t, f in zip(triplets, factors):
        assert 0.3 <= f <= 0.7
        inside = t.mask > 0
        assert inside.any()
        # outside the polygon the shadow image equals the shadow-free one
        assert np.array_equal(t.shadow[~inside], t.shadow_free[~inside])
        # inside it is the 8-bit-quantized multiplicative darkening
        expect = data.quantize8(f * t.shadow_free)
        assert np.array_equal(t.shadow[inside], expect[inside])
        assert np.abs(t.shadow[inside] - f * t.shadow_free[inside]).max() <= 0.5 / 255 + 1e-12


def test_synthetic_shadow_region_mean_oracle():
    for t in data.generate_synthetic_shadow(11, 5, size=64):
        inside = t.mask > 0
        lum_shadow = t.shadow.mean(axis=2)[inside].mean()
        lum_free = t.shadow_free.mean(axis=2)[inside].mean()
        assert lum_shadow < lum_free


def test_synthetic_shadow_determinism():
    a = data.generate_synthetic_shadow(5, 3, size=32)
    b = data.generate_synthetic_shadow(5, 3, size=32)
    for x, y in zip(a, b):
        assert np.array_equal(x.shadow, y.shadow)
        assert np.array_equal(x.mask, y.mask)


def test_inpaint_sample_invariant():
    for s in data.generate_synthetic_inpaint(9, 4, size=32):
        assert np.array_equal(s.corrupted + s.clean * s.mask[..., None], s.clean)
        assert np.array_equal(s.corrupted, s.clean * (1.0 - s.mask)[..., None])


def test_dataset_roundtrip_is_pixel_exact(tmp_path):
    triplets = data.generate_synthetic_shadow(21, 8, size=256)
    data.save_triplet_dataset(tmp_path, triplets)
    back = data.load_triplet_dataset(tmp_path, image_size=256)
    assert len(back) == 8
    for a, b in zip(triplets, back):
        assert a.name == b.name
        assert np.array_equal(a.shadow, b.shadow)
        assert np.array_equal(a.shadow_free, b.shadow_free)
        assert np.array_equal(a.mask, b.mask)


def test_dataset_load_order_is_lexicographic(tmp_path):
    triplets = data.generate_synthetic_shadow(4, 3, size=32)
    named = [data.ShadowTriplet(t.shadow, t.shadow_free, t.mask, name=n)
             for t, n in zip(triplets, ["zeta", "alpha", "mid"])]
    data.save_triplet_dataset(tmp_path, named)
    back = data.load_triplet_dataset(tmp_path, image_size=32)
    assert [t.name for t in back] == ["alpha", "mid", "zeta"]


def test_dataset_empty_directory(tmp_path):
    for sub in ("shadow", "shadow_free", "mask"):
        (tmp_path / sub).mkdir()
    assert data.load_triplet_dataset(tmp_path, image_size=64) == []


def test_dataset_orphan_named(tmp_path):
    triplets = data.generate_synthetic_shadow(8, 3, size=32)
    data.save_triplet_dataset(tmp_path, triplets)
    orphan = data.generate_synthetic_shadow(9, 1, size=32)[0]
    data.save_image_png(tmp_path / "shadow" / "orphan_item.png", orphan.shadow)
    with pytest.raises(data.DatasetError, match="orphan_item"):
        data.load_triplet_dataset(tmp_path, image_size=32)


def test_dataset_resize_and_binarize(tmp_path):
    triplets = data.generate_synthetic_shadow(13, 2, size=64)
    data.save_triplet_dataset(tmp_path, triplets)
    back = data.load_triplet_dataset(tmp_path, image_size=32)
    for t in back:
        assert t.shadow.shape == (32, 32, 3)
        assert t.mask.shape == (32, 32)
        assert set(np.unique(t.mask)) <= {0.0, 1.0}
        assert t.shadow.min() >= 0.0 and t.shadow.max() <= 1.0


def test_subset_fraction():
    ds = list(range(1330))
    assert data.subset_fraction(ds, 1.0, 0) == ds
    sub = data.subset_fraction(ds, 0.1, 5)
    assert len(sub) == 133
    assert sub == data.subset_fraction(ds, 0.1, 5)
    assert sub != data.subset_fraction(ds, 0.1, 6)
    assert len(set(sub)) == len(sub)
    with pytest.raises(ValueError):
        data.subset_fraction(ds, 0.0, 0)
    with pytest.raises(ValueError):
        data.subset_fraction(ds, 1.2, 0)


def test_split_holdout():
    ds = list(range(10))
    train, val = data.split_holdout(ds, 3)
    assert train == list(range(7)) and val == [7, 8, 9]
    with pytest.raises(ValueError):
        data.split_holdout(ds, 10)
