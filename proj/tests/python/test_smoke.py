import numpy as np
import pytest

import dsguard


def smooth_images(n, seed=0, size=32):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    out = []
    for _ in range(n):
        img = np.empty((size, size, 3), dtype=np.float64)
        for c in range(3):
            base = rng.uniform(40, 210)
            ax, ay = rng.uniform(-2.5, 2.5, size=2)
            img[..., c] = base + ax * xx + ay * yy + rng.normal(0, 6, (size, size))
        out.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
    return out


def test_psnr_and_capacity():
    img = smooth_images(1)[0]
    assert dsguard.psnr(img, img) == float("inf")
    assert dsguard.lsb_capacity(img) == 32 * 32 * 3
    assert dsguard.payload_bits(32, 32, 3) <= 32 * 32 * 3
    assert dsguard.payload_bits(64, 64, 3) <= 64 * 64 * 3


def test_fsp_perturb_budget():
    clean, target = smooth_images(2, seed=1)
    carrier, initial, final = dsguard.fsp_perturb(clean, target, iterations=10)
    assert carrier.shape == clean.shape and carrier.dtype == np.uint8
    assert np.abs(carrier.astype(int) - clean.astype(int)).max() <= 16
    assert final <= initial


def test_image_round_trip_and_wrong_key():
    clean, carrier = smooth_images(2, seed=2)
    key = dsguard.Key.generate()
    nonce = bytes(range(12))
    protected = dsguard.protect_image(clean, carrier, key, nonce)
    restored = dsguard.restore_image(protected, key, nonce)
    assert dsguard.psnr(restored, clean) >= 40
    with pytest.raises(dsguard.DsguardError) as info:
        dsguard.restore_image(protected, dsguard.Key.generate())
    assert info.value.code == "AUTH_FAIL"


def test_dataset_round_trip(tmp_path):
    images = smooth_images(4, seed=3)
    labels = [0, 1, 0, 1]
    key = dsguard.Key.generate()
    key.save(tmp_path / "k.key")
    assert dsguard.Key.load(tmp_path / "k.key") == key

    protected, manifest = dsguard.protect_dataset(images, labels, key, iterations=5)
    again, manifest2 = dsguard.protect_dataset(images, labels, key, iterations=5)
    assert manifest == manifest2
    assert all(np.array_equal(a, b) for a, b in zip(protected, again))

    restored, failures = dsguard.restore_dataset(protected[1:3], [1, 2], manifest, key)
    assert failures == []
    assert sorted(restored) == [1, 2]
    for i, img in restored.items():
        assert dsguard.psnr(img, images[i]) >= 40

    with pytest.raises(dsguard.DsguardError) as info:
        dsguard.restore_dataset(protected, [0, 1, 2, 3], manifest, dsguard.Key.generate())
    assert info.value.code == "KEY_MISMATCH"
