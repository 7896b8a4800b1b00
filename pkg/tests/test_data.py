import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eqreg.data import Dataset, load_idx, make_synthetic, parse_idx, parse_idx_header, serialize_idx, split
from eqreg.errors import InvalidArgumentError, ParseError


def test_idx_single_pixel():
    buf = bytes([0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0xFF])
    ds = parse_idx(buf)
    assert len(ds) == 1
    assert ds.samples[0, 0] == 1.0
    assert ds.shape_hint == (1, 1)
    assert ds.provenance == "idx-file"


def test_idx_two_images_row_major():
    head = bytes([0, 0, 8, 3]) + b"".join(int(d).to_bytes(4, "big") for d in (2, 2, 2))
    buf = head + bytes([0, 51, 102, 153, 204, 255, 0, 255])
    ds = parse_idx(buf)
    np.testing.assert_allclose(ds.samples[0], [0, 0.2, 0.4, 0.6])
    np.testing.assert_allclose(ds.samples[1], [0.8, 1.0, 0.0, 1.0])


def test_idx_truncated_names_counts():
    buf = serialize_idx(np.zeros((2, 2, 2), dtype=np.uint8))[:-3]
    with pytest.raises(ParseError) as exc:
        parse_idx(buf)
    assert "expected 8" in str(exc.value) and "got 5" in str(exc.value)
    assert exc.value.offset == len(buf)


def test_idx_bad_magic():
    with pytest.raises(ParseError) as exc:
        parse_idx(bytes([1, 0, 8, 1, 0, 0, 0, 0]))
    assert exc.value.offset == 0


def test_idx_unsupported_dtype():
    with pytest.raises(ParseError) as exc:
        parse_idx_header(bytes([0, 0, 0x0B, 1, 0, 0, 0, 1]))
    assert exc.value.offset == 2


def test_idx_short_header():
    with pytest.raises(ParseError):
        parse_idx_header(bytes([0, 0, 8, 3, 0, 0]))


def test_idx_trailing_bytes():
    with pytest.raises(ParseError):
        parse_idx(serialize_idx(np.zeros((1, 2), dtype=np.uint8)) + b"\x00")


def test_idx_float_payload():
    vals = np.array([[0.5, -1.25], [3.0, 0.0]], dtype=np.float32)
    ds = parse_idx(serialize_idx(vals, 0x0D))
    np.testing.assert_array_equal(ds.samples, vals.astype(np.float64))


def test_idx_load_file(tmp_path):
    p = tmp_path / "x.idx"
    p.write_bytes(serialize_idx(np.full((3, 2, 2), 255, dtype=np.uint8)))
    ds = load_idx(p)
    assert ds.samples.shape == (3, 4)
    assert np.all(ds.samples == 1.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5))))
def test_idx_roundtrip_bytes(values):
    buf = serialize_idx(values)
    ds = parse_idx(buf)
    assert ds.samples.min() >= 0.0 and ds.samples.max() <= 1.0
    back = np.rint(ds.samples * 255).astype(np.uint8).reshape(values.shape)
    assert serialize_idx(back) == buf


# --- synthetic

def test_synthetic_full_dim():
    ds, pv = make_synthetic(6, 6, 10, seed=1)
    np.testing.assert_allclose(pv.matrix(), np.eye(6), atol=1e-12)
    assert ds.samples.shape == (10, 6)


def test_synthetic_zero_coefficients():
    ds, _ = make_synthetic(5, 2, 1, seed=0, scale=0.0)
    np.testing.assert_array_equal(ds.samples, np.zeros((1, 5)))


@pytest.mark.parametrize("dim,q", [(10, 3), (64, 8), (30, 1)])
def test_synthetic_in_subspace(dim, q):
    ds, pv = make_synthetic(dim, q, 40, seed=dim)
    for x in ds:
        assert np.linalg.norm(pv.apply(x) - x) <= 1e-10
    np.testing.assert_allclose(pv.basis.T @ pv.basis, np.eye(q), atol=1e-10)


def test_synthetic_deterministic():
    a, _ = make_synthetic(12, 4, 5, seed=3)
    b, _ = make_synthetic(12, 4, 5, seed=3)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_synthetic_q_too_large():
    with pytest.raises(InvalidArgumentError):
        make_synthetic(4, 5, 1)


# --- split

def _indexed(n):
    return Dataset(np.arange(n, dtype=float).reshape(n, 1))


def test_split_empty_test():
    tr, te = split(_indexed(10), 7, 0, seed=1)
    assert len(tr) == 7 and len(te) == 0


def test_split_deterministic_and_disjoint():
    a = split(_indexed(50), 20, 25, seed=4)
    b = split(_indexed(50), 20, 25, seed=4)
    np.testing.assert_array_equal(a[0].samples, b[0].samples)
    np.testing.assert_array_equal(a[1].samples, b[1].samples)
    assert not set(a[0].samples[:, 0]) & set(a[1].samples[:, 0])


def test_split_too_many():
    with pytest.raises(InvalidArgumentError):
        split(_indexed(5), 3, 3)


def test_dataset_rejects_nonfinite():
    with pytest.raises(InvalidArgumentError):
        Dataset(np.array([[1.0, np.nan]]))
