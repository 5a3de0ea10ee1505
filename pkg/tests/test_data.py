import csv
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmen.data import (
    DomainDataset,
    DomainPair,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    area_downsample,
    batch_iter,
    export_csv,
    load_idx,
    make_rotated_moons_pair,
    make_shifted_blobs,
    make_two_moons,
    rotate_domain,
    source_batches,
)


# -- two moons --------------------------------------------------------------------


def test_noise_free_moons_lie_on_unit_half_circles():
    ds = make_two_moons(200, noise=0.0, seed=3)
    x, y = ds.features, ds.labels
    outer, inner = x[y == 0], x[y == 1]
    np.testing.assert_allclose(np.hypot(outer[:, 0], outer[:, 1]), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.hypot(inner[:, 0] - 1.0, inner[:, 1] - 0.5), 1.0, atol=1e-12)
    assert (outer[:, 1] >= -1e-12).all() and (inner[:, 1] <= 0.5 + 1e-12).all()


def test_moons_are_balanced():
    ds = make_two_moons(100, 0.1, seed=0)
    assert np.bincount(ds.labels).tolist() == [50, 50]
    assert ds.class_count == 2


def test_moons_deterministic_per_seed():
    a, b = make_two_moons(64, 0.2, seed=9), make_two_moons(64, 0.2, seed=9)
    assert a.features.tobytes() == b.features.tobytes()
    assert not np.array_equal(a.features, make_two_moons(64, 0.2, seed=10).features)


def test_moons_argument_checks():
    with pytest.raises(ValueError):
        make_two_moons(1)
    with pytest.raises(ValueError):
        make_two_moons(10, noise=-0.1)


# -- rotation ---------------------------------------------------------------------


def test_rotation_zero_and_full_turn():
    ds = make_two_moons(50, 0.1, seed=1)
    np.testing.assert_allclose(rotate_domain(ds, 0).features, ds.features, atol=1e-12)
    np.testing.assert_allclose(rotate_domain(ds, 360).features, ds.features, atol=1e-12)


def test_half_turn_is_an_involution():
    ds = make_two_moons(50, 0.1, seed=2)
    twice = rotate_domain(rotate_domain(ds, 180), 180)
    np.testing.assert_allclose(twice.features, ds.features, atol=1e-12)
    assert np.array_equal(twice.labels, ds.labels)


def test_rotation_needs_2d():
    ds = DomainDataset(np.zeros((3, 3)), None, "source", 2)
    with pytest.raises(ValueError):
        rotate_domain(ds, 10)


@settings(max_examples=50, deadline=None)
@given(st.floats(-720, 720), st.integers(0, 1000))
def test_rotation_is_an_isometry(angle, seed):
    ds = make_two_moons(20, 0.3, seed=seed)
    rot = rotate_domain(ds, angle).features
    d0 = np.linalg.norm(ds.features[:, None] - ds.features[None], axis=-1)
    d1 = np.linalg.norm(rot[:, None] - rot[None], axis=-1)
    np.testing.assert_allclose(d0, d1, atol=1e-9)
    np.testing.assert_allclose(rot.mean(axis=0), ds.features.mean(axis=0), atol=1e-12)


def test_rotated_pair_hides_target_labels():
    pair = make_rotated_moons_pair(40, 0.1, 45.0, seed=0)
    assert pair.target.labels is None
    assert pair.diagnostic_target_labels().shape == (40,)


# -- blobs ------------------------------------------------------------------------


def test_blobs_zero_shift_same_noise_gives_identical_domains():
    pair = make_shifted_blobs(4, 30, [0.0, 0.0], spread=1.0, seed=5, target_noise_seed=5)
    np.testing.assert_array_equal(pair.source.features, pair.target.features)


def test_blobs_twelve_distinct_means():
    pair = make_shifted_blobs(12, 200, [0.0, 0.0], spread=0.1, seed=0)
    means = np.array([pair.source.features[pair.source.labels == k].mean(axis=0) for k in range(12)])
    gaps = np.linalg.norm(means[:, None] - means[None], axis=-1) + np.eye(12) * 1e9
    assert gaps.min() > 0.1
    assert pair.class_count == 12


def test_blob_class_means_shift_by_vector():
    shift = np.array([1.5, -0.75, 0.5])
    spread = 0.8
    pair = make_shifted_blobs(3, 10_000, shift, spread=spread, seed=1)
    yt = pair.diagnostic_target_labels()
    se = spread * np.sqrt(2.0 / 10_000)
    for k in range(3):
        delta = pair.target.features[yt == k].mean(axis=0) - pair.source.features[pair.source.labels == k].mean(axis=0)
        assert np.all(np.abs(delta - shift) < 3 * se)


def test_blobs_need_two_classes():
    with pytest.raises(ValueError):
        make_shifted_blobs(1, 5, [0, 0])


# -- pair invariants --------------------------------------------------------------


def test_pair_rejects_mismatched_dims_and_classes():
    src = DomainDataset(np.zeros((2, 2)), [0, 1], "source", 2)
    with pytest.raises(ValueError, match="feature dims"):
        DomainPair(src, DomainDataset(np.zeros((2, 3)), None, "target", 2))
    with pytest.raises(ValueError, match="class counts"):
        DomainPair(src, DomainDataset(np.zeros((2, 2)), None, "target", 3))


def test_pair_requires_labeled_source():
    with pytest.raises(ValueError):
        DomainPair(DomainDataset(np.zeros((2, 2)), None, "source", 2),
                   DomainDataset(np.zeros((2, 2)), None, "target", 2))


def test_dataset_validation():
    with pytest.raises(ValueError):
        DomainDataset(np.array([[np.nan, 0.0]]), None, "source", 2)
    with pytest.raises(ValueError):
        DomainDataset(np.zeros((2, 2)), [0, 2], "source", 2)
    with pytest.raises(ValueError):
        DomainDataset(np.zeros((0, 2)), None, "source", 2)


# -- IDX --------------------------------------------------------------------------


def write_idx_images(path, images, magic=0x00000803):
    n, r, c = images.shape
    path.write_bytes(struct.pack(">IIII", magic, n, r, c) + images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels, magic=0x00000801):
    path.write_bytes(struct.pack(">II", magic, len(labels)) + bytes(labels))


@pytest.fixture
def idx_pair(tmp_path):
    images = np.array(
        [
            [[0, 255, 10, 20], [255, 0, 30, 40], [50, 50, 0, 0], [50, 50, 0, 255]],
            [[255] * 4, [255] * 4, [0] * 4, [0] * 4],
        ],
        dtype=np.uint8,
    )
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx_images(ip, images)
    write_idx_labels(lp, [7, 3])
    return ip, lp


def test_idx_pooled_values(idx_pair):
    ds = load_idx(*idx_pair, downsample_to=2)
    # 2x2 block means by hand, divided by 255.
    first = np.array([[510 / 4, 100 / 4], [200 / 4, 255 / 4]]) / 255
    second = np.array([[1.0, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(ds.features[0], first.ravel(), atol=1e-15)
    np.testing.assert_allclose(ds.features[1], second.ravel(), atol=1e-15)
    assert ds.labels.tolist() == [7, 3]


def test_idx_full_resolution_scaling(idx_pair):
    ds = load_idx(*idx_pair)
    assert ds.features.shape == (2, 16)
    assert ds.features[0, 1] == 1.0 and ds.features[0, 2] == 10 / 255


def test_area_downsample_fractional_ratio():
    img = np.arange(9, dtype=np.float64).reshape(1, 3, 3)
    out = area_downsample(img, 2)
    # Output cell (0,0) covers rows/cols [0, 1.5): weights 1, 0.5 normalised by 1.5.
    w = np.array([1.0, 0.5]) / 1.5
    expected00 = w @ img[0, :2, :2] @ w
    assert out[0, 0, 0] == pytest.approx(expected00, abs=1e-12)
    assert out[0].mean() == pytest.approx(img.mean(), abs=1e-12)


def test_idx_max_n_clamps_with_warning(idx_pair):
    with pytest.warns(UserWarning, match="max_n"):
        ds = load_idx(*idx_pair, max_n=10)
    assert len(ds) == 2
    assert len(load_idx(*idx_pair, max_n=1)) == 1


def test_idx_bad_magic(tmp_path, idx_pair):
    bad = tmp_path / "bad.idx"
    write_idx_images(bad, np.zeros((1, 2, 2)), magic=0x00000801)
    with pytest.raises(IdxMagicError):
        load_idx(bad, idx_pair[1])


def test_idx_truncated(tmp_path, idx_pair):
    ip, lp = idx_pair
    cut = tmp_path / "cut.idx"
    cut.write_bytes(ip.read_bytes()[:-3])
    with pytest.raises(IdxTruncatedError):
        load_idx(cut, lp)
    stub = tmp_path / "stub.idx"
    stub.write_bytes(b"\x00\x00")
    with pytest.raises(IdxTruncatedError):
        load_idx(stub, lp)


def test_idx_count_mismatch(tmp_path, idx_pair):
    lp = tmp_path / "three.idx"
    write_idx_labels(lp, [1, 2, 3])
    with pytest.raises(IdxCountMismatchError):
        load_idx(idx_pair[0], lp)


# -- batching ---------------------------------------------------------------------


def _pair(n_s, n_t):
    src = DomainDataset(np.arange(2 * n_s, dtype=float).reshape(n_s, 2), np.arange(n_s) % 2, "source", 2)
    return DomainPair(src, DomainDataset(-np.arange(2 * n_t, dtype=float).reshape(n_t, 2), None, "target", 2))


def test_single_full_batch():
    batches = list(batch_iter(_pair(8, 8), 8, 8, seed=0, epoch=1))
    assert len(batches) == 1
    assert sorted(batches[0].source_idx.tolist()) == list(range(8))
    assert sorted(batches[0].target_idx.tolist()) == list(range(8))


def test_batch_count_and_drop_last():
    batches = list(batch_iter(_pair(23, 40), 5, 7, seed=0, epoch=0))
    assert len(batches) == min(23 // 5, 40 // 7)
    assert all(b.xs.shape == (5, 2) and b.xt.shape == (7, 2) for b in batches)


def test_epochs_reshuffle_but_reproduce():
    pair = _pair(30, 30)
    e1 = [b.source_idx for b in batch_iter(pair, 10, 10, seed=4, epoch=1)]
    e2 = [b.source_idx for b in batch_iter(pair, 10, 10, seed=4, epoch=2)]
    again = [b.source_idx for b in batch_iter(pair, 10, 10, seed=4, epoch=1)]
    assert not all(np.array_equal(a, b) for a, b in zip(e1, e2))
    assert all(np.array_equal(a, b) for a, b in zip(e1, again))


def test_source_indices_unique_within_epoch():
    idx = np.concatenate([b.source_idx for b in batch_iter(_pair(50, 60), 7, 7, seed=1, epoch=3)])
    assert len(set(idx.tolist())) == idx.size


def test_source_and_target_shuffles_independent():
    b = next(iter(batch_iter(_pair(20, 20), 20, 20, seed=0, epoch=0)))
    assert not np.array_equal(b.source_idx, b.target_idx)


def test_batch_larger_than_dataset_rejected():
    with pytest.raises(ValueError):
        list(batch_iter(_pair(4, 4), 5, 2, seed=0, epoch=0))
    with pytest.raises(ValueError):
        source_batches(4, 5, seed=0, epoch=0)


# -- export -----------------------------------------------------------------------


def test_export_csv(tmp_path):
    pair = make_rotated_moons_pair(6, 0.1, 30.0, seed=0)
    path = tmp_path / "pair.csv"
    export_csv(pair, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["x0", "x1", "label", "domain"]
    assert len(rows) == 13
    assert [r[3] for r in rows[1:]] == ["source"] * 6 + ["target"] * 6
    assert [int(r[2]) for r in rows[7:]] == pair.diagnostic_target_labels().tolist()
    assert float(rows[1][0]) == pair.source.features[0, 0]
