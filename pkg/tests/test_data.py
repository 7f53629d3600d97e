import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nalcert.data import (IMAGE_MAGIC, LABEL_MAGIC, Dataset, blob_centroids, encode_idx, load_builtin, load_csv,
                          load_idx, make_blobs, parse_idx, save_csv, save_idx, stratified_indices, subset,
                          train_test_split)
from nalcert.errors import DimensionError, IdxFormatError, NalcertError, ParameterError
from nalcert.tensor import RngStream


def _fixture_pair(tmp_path, gz=False):
    pix = np.array([[[0, 255], [128, 64]], [[1, 2], [3, 254]]], dtype=np.uint8)
    lab = np.array([7, 2], dtype=np.uint8)
    img_blob, lab_blob = encode_idx(pix, IMAGE_MAGIC), encode_idx(lab, LABEL_MAGIC)
    suffix = ".gz" if gz else ""
    ip, lp = tmp_path / f"img{suffix}", tmp_path / f"lab{suffix}"
    ip.write_bytes(gzip.compress(img_blob) if gz else img_blob)
    lp.write_bytes(gzip.compress(lab_blob) if gz else lab_blob)
    return ip, lp, pix, lab


@pytest.mark.parametrize("gz", [False, True])
def test_two_image_fixture(tmp_path, gz):
    ip, lp, pix, lab = _fixture_pair(tmp_path, gz)
    ds = load_idx(ip, lp)
    assert (ds.n, ds.d, ds.num_classes) == (2, 4, 10)
    assert np.array_equal(ds.inputs[0], np.array([0, 255, 128, 64]) / 255.0)
    assert ds.inputs[1, 3] == 254 / 255.0
    assert list(ds.labels) == [7, 2]


def test_idx_header_bytes():
    blob = encode_idx(np.zeros((2, 3, 4), dtype=np.uint8), IMAGE_MAGIC)
    assert blob[:4] == b"\x00\x00\x08\x03"
    assert struct.unpack(">iii", blob[4:16]) == (2, 3, 4)
    assert encode_idx(np.zeros(5, dtype=np.uint8), LABEL_MAGIC)[:4] == b"\x00\x00\x08\x01"


def test_magic_numbers(tmp_path):
    ip, lp, _, _ = _fixture_pair(tmp_path)
    with pytest.raises(IdxFormatError, match="magic"):
        load_idx(lp, ip)
    raw = bytearray(ip.read_bytes())
    raw[3] = 0x04
    with pytest.raises(IdxFormatError, match="magic"):
        parse_idx(bytes(raw), IMAGE_MAGIC)


def test_truncated_and_mismatched(tmp_path):
    ip, lp, _, _ = _fixture_pair(tmp_path)
    with pytest.raises(IdxFormatError, match="truncated"):
        parse_idx(ip.read_bytes()[:-1], IMAGE_MAGIC)
    with pytest.raises(IdxFormatError, match="truncated"):
        parse_idx(ip.read_bytes()[:10], IMAGE_MAGIC)
    with pytest.raises(IdxFormatError, match="trailing"):
        parse_idx(ip.read_bytes() + b"\0", IMAGE_MAGIC)
    lp.write_bytes(encode_idx(np.array([1, 2, 3], dtype=np.uint8), LABEL_MAGIC))
    with pytest.raises(IdxFormatError, match="count mismatch"):
        load_idx(ip, lp)


def test_corrupt_gzip(tmp_path):
    p = tmp_path / "bad.gz"
    p.write_bytes(b"\x1f\x8b garbage")
    ip, _, _, _ = _fixture_pair(tmp_path)
    with pytest.raises(IdxFormatError):
        load_idx(ip, p)


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=64))
def test_arbitrary_bytes_raise_typed_errors(raw):
    try:
        parse_idx(raw, IMAGE_MAGIC)
    except IdxFormatError:
        pass


@settings(max_examples=100, deadline=None)
@given(pos=st.integers(0, 15), val=st.integers(0, 255))
def test_flipped_header_byte(tmp_path_factory, pos, val):
    tmp = tmp_path_factory.mktemp("idx")
    ip, lp, _, _ = _fixture_pair(tmp)
    raw = bytearray(ip.read_bytes())
    raw[pos] = val
    ip.write_bytes(bytes(raw))
    try:
        ds = load_idx(ip, lp)
    except NalcertError:
        return
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1 and ds.n == ds.labels.size


def test_builtin_sample():
    ds = load_builtin("mnist5k")
    assert (ds.n, ds.d, ds.num_classes) == (5000, 784, 10)
    assert 0.0 <= ds.inputs.min() and ds.inputs.max() <= 1.0
    assert np.array_equal(np.bincount(ds.labels), np.full(10, 500))


def test_dataset_invariants():
    with pytest.raises(ParameterError):
        Dataset(np.zeros((2, 2)), [0, 3], "x", 3)
    with pytest.raises(DimensionError):
        Dataset(np.zeros((2, 2)), [0], "x", 3)


def test_subset_full_is_permutation():
    ds = make_blobs(60, 2, 3, 0.3, RngStream(0))
    sub = subset(ds, 60, RngStream(1))
    assert sorted(map(tuple, sub.inputs)) == sorted(map(tuple, ds.inputs))


def test_subset_balanced_and_seeded():
    labels = np.repeat(np.arange(10), 30)
    idx = stratified_indices(labels, 100, 10, RngStream(4))
    assert np.array_equal(np.bincount(labels[idx], minlength=10), np.full(10, 10))
    assert np.array_equal(idx, stratified_indices(labels, 100, 10, RngStream(4)))
    assert len(set(idx.tolist())) == 100


def test_subset_too_large():
    with pytest.raises(ParameterError):
        stratified_indices(np.zeros(5, dtype=int), 6, 1, RngStream(0))


@settings(max_examples=60, deadline=None)
@given(C=st.integers(1, 8), per=st.integers(1, 20), data=st.data())
def test_stratification_bound(C, per, data):
    labels = np.repeat(np.arange(C), per)
    n = data.draw(st.integers(C, C * per))
    idx = stratified_indices(labels, n, C, RngStream(data.draw(st.integers(0, 1000))))
    counts = np.bincount(labels[idx], minlength=C)
    assert counts.sum() == n and len(set(idx.tolist())) == n
    assert np.all(np.abs(counts - n / C) <= 1)


def test_split_is_disjoint():
    ds = make_blobs(100, 2, 2, 0.5, RngStream(0))
    tr, te = train_test_split(ds, 60, 40, RngStream(1))
    rows = lambda d: {tuple(r) for r in d.inputs}
    assert not rows(tr) & rows(te)
    assert (tr.n, te.n) == (60, 40)
    assert np.array_equal(np.bincount(te.labels), [20, 20])


def test_blobs_balanced_and_inside_box():
    ds = make_blobs(200, 2, 2, 0.5, RngStream(0))
    assert np.array_equal(np.bincount(ds.labels), [100, 100])
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1


@pytest.mark.parametrize("d", [1, 2])
def test_blob_means_near_centroids(d):
    C, n, spread = 3, 3000, 0.05
    ds = make_blobs(n, d, C, 0.3, RngStream(2), spread=spread)
    cent = blob_centroids(d, C, 0.3)
    for c in range(C):
        assert np.all(np.abs(ds.inputs[ds.labels == c].mean(axis=0) - cent[c]) <= 3 * spread / np.sqrt(n / C))


def test_blobs_separable_limit():
    ds = make_blobs(300, 2, 3, 0.45, RngStream(1), spread=0.02)
    cent = blob_centroids(2, 3, 0.45)
    pred = np.argmin(((ds.inputs[:, None, :] - cent[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred == ds.labels) == 1.0


def test_blobs_bad_dimension():
    with pytest.raises(ParameterError):
        make_blobs(10, 3, 2, 0.5, RngStream(0))


def test_csv_round_trip(tmp_path):
    ds = make_blobs(20, 2, 2, 0.5, RngStream(0))
    save_csv(ds, tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == "x0,x1,label"
    back = load_csv(tmp_path / "b.csv")
    assert np.array_equal(back.inputs, ds.inputs) and np.array_equal(back.labels, ds.labels)


def test_idx_round_trip(tmp_path):
    ds = load_builtin("mnist5k").take(np.arange(20))
    save_idx(ds, tmp_path / "i.gz", tmp_path / "l.gz")
    back = load_idx(tmp_path / "i.gz", tmp_path / "l.gz")
    assert np.array_equal(back.inputs, ds.inputs) and np.array_equal(back.labels, ds.labels)


def test_checksum_tracks_content():
    a = make_blobs(20, 2, 2, 0.5, RngStream(0))
    b = make_blobs(20, 2, 2, 0.5, RngStream(0))
    c = make_blobs(20, 2, 2, 0.5, RngStream(1))
    assert a.checksum() == b.checksum() != c.checksum()
