import struct

import numpy as np
import pytest

from glai.data_io import (
    Dataset,
    batch_indices,
    batches,
    load_csv,
    load_idx,
    save_csv,
    split,
    synth_clusters,
    write_idx,
)
from glai.errors import FormatError, InputError
from glai.rng import SplitMix64, derive_seed, mix64


def test_splitmix64_reference_values():
    # reference outputs of splitmix64 seeded with 0 (Vigna's C code)
    rng = SplitMix64(0)
    assert [int(v) for v in rng.next_u64(3)] == [
        0xE220A8397B1DCDAF,
        0x6E789E6AA1B965F4,
        0x06C45D188009454F,
    ]


def test_splitmix64_stream_continuity():
    a = SplitMix64(123)
    first = np.concatenate([a.next_u64(2), a.next_u64(3)])
    np.testing.assert_array_equal(first, SplitMix64(123).next_u64(5))


def test_uniform_range_and_normal_moments():
    rng = SplitMix64(9)
    u = rng.uniform(10000)
    assert u.min() >= 0.0 and u.max() < 1.0
    z = SplitMix64(9).normal(20001)
    assert len(z) == 20001
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1) < 0.03


def test_derive_seed_separates_tags():
    assert derive_seed(1, 2) != derive_seed(1, 3)
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert mix64(0) == 0


# -- IDX -------------------------------------------------------------------

def _write_idx_raw(tmp_path, images, labels, img_magic=0x803, lab_magic=0x801):
    n, r, c = images.shape
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    ip.write_bytes(struct.pack(">IIII", img_magic, n, r, c) + images.astype(np.uint8).tobytes())
    lp.write_bytes(struct.pack(">II", lab_magic, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes())
    return ip, lp


def test_load_idx_two_images(tmp_path):
    imgs = np.array([[[0, 255], [128, 1]], [[255, 255], [0, 0]]])
    ip, lp = _write_idx_raw(tmp_path, imgs, [3, 7])
    ds = load_idx(ip, lp)
    assert ds.features.shape == (2, 4)
    assert ds.features[0, 1] == 1.0
    assert ds.features[0, 2] == pytest.approx(128 / 255)
    np.testing.assert_array_equal(ds.labels, [3, 7])
    assert ds.n_classes == 8


def test_load_idx_bad_magic(tmp_path):
    ip, lp = _write_idx_raw(tmp_path, np.zeros((1, 2, 2)), [0], img_magic=0)
    with pytest.raises(FormatError, match="byte 0"):
        load_idx(ip, lp)


def test_load_idx_truncated(tmp_path):
    ip, lp = _write_idx_raw(tmp_path, np.zeros((2, 2, 2)), [0, 1])
    ip.write_bytes(ip.read_bytes()[:-3])
    with pytest.raises(FormatError, match="truncated"):
        load_idx(ip, lp)


def test_load_idx_count_mismatch(tmp_path):
    ip, lp = _write_idx_raw(tmp_path, np.zeros((2, 2, 2)), [0])
    with pytest.raises(FormatError):
        load_idx(ip, lp)


def test_idx_roundtrip_gzip(tmp_path):
    import gzip

    ds = Dataset(np.array([[0.0, 1.0, 0.2, 0.4]]), [1], 2)
    write_idx(ds, tmp_path / "i", tmp_path / "l", (2, 2))
    for name in ("i", "l"):
        (tmp_path / f"{name}.gz").write_bytes(gzip.compress((tmp_path / name).read_bytes()))
    back = load_idx(tmp_path / "i.gz", tmp_path / "l.gz", n_classes=2)
    np.testing.assert_allclose(back.features, np.rint(ds.features * 255) / 255)


# -- CSV -------------------------------------------------------------------

def test_load_csv_label_last(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,label\n0.5,1,0\n2,3,1\n")
    ds = load_csv(p)
    assert ds.n_features == 2
    np.testing.assert_array_equal(ds.features, [[0.5, 1.0], [2.0, 3.0]])
    np.testing.assert_array_equal(ds.labels, [0, 1])


def test_load_csv_missing_cell_line_number(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,label\n1,2,0\n1,2,0\n1,2,1\n1,,0\n")
    with pytest.raises(FormatError, match="line 5"):
        load_csv(p)


def test_load_csv_ragged_and_non_numeric(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,label\n1,0\n1,2,3\n")
    with pytest.raises(FormatError, match="line 3"):
        load_csv(p)
    p.write_text("a,label\nx,0\n")
    with pytest.raises(FormatError, match="line 2"):
        load_csv(p)


def test_load_csv_empty_body(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,label\n")
    ds = load_csv(p)
    assert len(ds) == 0 and ds.n_features == 2


def test_csv_roundtrip_exact(tmp_path):
    ds = synth_clusters(1, 3, 4, 5, 0.37)
    save_csv(ds, tmp_path / "x.csv")
    back = load_csv(tmp_path / "x.csv", n_classes=3)
    assert back.equals(ds)


# -- synthetic -------------------------------------------------------------

def test_synth_counts_and_determinism():
    a = synth_clusters(5, 10, 3, 100, 0.2)
    assert len(a) == 1000 and a.n_features == 3
    assert synth_clusters(5, 10, 3, 100, 0.2).equals(a)
    assert not synth_clusters(6, 10, 3, 100, 0.2).equals(a)


def test_synth_zero_spread():
    ds = synth_clusters(2, 4, 3, 10, 0.0)
    for c in range(4):
        rows = ds.features[ds.labels == c]
        assert np.all(rows == rows[0])
        assert np.all((rows[0] >= 0) & (rows[0] < 1))


def test_synth_rejects_zero_counts():
    with pytest.raises(InputError):
        synth_clusters(1, 0, 2, 3, 0.1)


# -- split / batches -------------------------------------------------------

def test_split_sizes_and_partition():
    ds = Dataset(np.arange(10.0)[:, None], np.zeros(10, dtype=int), 1)
    tr, va = split(ds, 0.8, 3)
    assert (len(tr), len(va)) == (8, 2)
    together = np.sort(np.concatenate([tr.features[:, 0], va.features[:, 0]]))
    np.testing.assert_array_equal(together, np.arange(10.0))
    tr2, _ = split(ds, 0.8, 3)
    assert tr2.equals(tr)


def test_split_empty_side():
    ds = Dataset(np.zeros((3, 1)), np.zeros(3, dtype=int), 1)
    with pytest.raises(InputError):
        split(ds, 0.01, 1)
    with pytest.raises(InputError):
        split(ds, 1.0, 1)


def test_batches():
    chunks = batch_indices(10, 4, 7, 1)
    assert [len(c) for c in chunks] == [4, 4, 2]
    np.testing.assert_array_equal(np.sort(np.concatenate(chunks)), np.arange(10))
    assert len(batch_indices(10, 10, 7, 1)) == 1
    assert len(batch_indices(10, 50, 7, 1)) == 1
    for a, b in zip(chunks, batch_indices(10, 4, 7, 1)):
        np.testing.assert_array_equal(a, b)
    assert any(not np.array_equal(a, b) for a, b in zip(chunks, batch_indices(10, 4, 7, 2)))
    ds = Dataset(np.arange(5.0)[:, None], np.zeros(5, dtype=int), 1)
    assert sum(len(b) for b in batches(ds, 2, 1, 1)) == 5
