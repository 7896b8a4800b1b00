import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqreg.errors import ConvergenceWarning, InvalidArgumentError, ParseError, ResourceLimitError
from eqreg.linops import (
    decompose,
    dense_from_bytes,
    dense_to_bytes,
    kernel_projector,
    load_map,
    make_dense,
    make_inpainting,
    make_motion_blur,
    operator_norm,
    pseudo_apply,
    save_map,
)


def brute_conv_matrix(shape, kernel):
    """Dense matrix of zero-padded same-size convolution, one pixel at a time."""
    rows, cols = shape
    k = kernel.shape[0]
    c = k // 2
    n = rows * cols
    out = np.zeros((n, n))
    for i in range(rows):
        for j in range(cols):
            for a in range(k):
                for b in range(k):
                    si, sj = i - a + c, j - b + c
                    if 0 <= si < rows and 0 <= sj < cols:
                        out[i * cols + j, si * cols + sj] += kernel[a, b]
    return out


# --- inpainting

def test_inpainting_28_kernel_is_complement():
    A = make_inpainting((28, 28), range(10))
    P = kernel_projector(decompose(A)).matrix()
    assert P.shape == (784, 784)
    np.testing.assert_allclose(P, np.eye(784) - A.to_dense(), atol=1e-10)


def test_inpainting_no_rows_is_identity():
    A = make_inpainting((4, 3), [])
    np.testing.assert_array_equal(A.to_dense(), np.eye(12))
    assert abs(operator_norm(A) - 1.0) <= 1e-12


def test_inpainting_2x2_row0():
    A = make_inpainting((2, 2), {0})
    np.testing.assert_array_equal(A.apply(np.array([1.0, 2, 3, 4])), [0, 0, 3, 4])


def test_inpainting_out_of_range():
    with pytest.raises(InvalidArgumentError):
        make_inpainting((3, 3), [3])
    with pytest.raises(InvalidArgumentError):
        make_inpainting((3, 3), [-1])


def test_inpainting_self_adjoint_idempotent():
    D = make_inpainting((5, 4), [1, 3]).to_dense()
    np.testing.assert_array_equal(D, D.T)
    np.testing.assert_array_equal(D @ D, D)


def test_inpainting_norm_is_one():
    assert abs(operator_norm(make_inpainting((28, 28), range(10))) - 1.0) <= 1e-9


# --- motion blur

def test_blur_k1_identity():
    np.testing.assert_allclose(make_motion_blur((4, 5), 1).to_dense(), np.eye(20))


def test_blur_k3_centered_pixel():
    x = np.zeros((5, 5))
    x[2, 2] = 1.0
    out = make_motion_blur((5, 5), 3).apply(x.ravel()).reshape(5, 5)
    expected = np.zeros((5, 5))
    expected[1, 1] = expected[2, 2] = expected[3, 3] = 1.0
    np.testing.assert_allclose(out, expected, atol=1e-15)


@pytest.mark.parametrize("shape,k", [((5, 5), 3), ((7, 6), 3), ((7, 6), 5), ((6, 9), 5)])
def test_blur_matches_brute_force(shape, k):
    A = make_motion_blur(shape, k)
    np.testing.assert_allclose(A.to_dense(), brute_conv_matrix(shape, np.eye(k)), atol=1e-14)


def test_blur_28_row_sums():
    A = make_motion_blur((28, 28), 5)
    assert np.count_nonzero(A.kernel) == 5
    D = A.to_dense()
    assert D.sum(axis=1).max() <= 5 + 1e-12
    assert D.sum(axis=1).max() == pytest.approx(5.0)


def test_blur_28_has_kernel():
    # zero padding leaves a nontrivial kernel for the diagonal blur
    d = decompose(make_motion_blur((28, 28), 5))
    assert kernel_projector(d).rank == 44


@pytest.mark.parametrize("k", [2, 4])
def test_blur_even_rejected(k):
    with pytest.raises(InvalidArgumentError):
        make_motion_blur((5, 5), k)


def test_blur_too_large_rejected():
    with pytest.raises(InvalidArgumentError):
        make_motion_blur((3, 5), 5)


# --- adjoint consistency

@pytest.mark.parametrize("make", [
    lambda: make_dense(np.random.default_rng(1).standard_normal((7, 5))),
    lambda: make_inpainting((6, 5), [0, 4]),
    lambda: make_motion_blur((6, 7), 3),
    lambda: make_motion_blur((8, 8), 5),
])
def test_adjoint_consistency(make):
    A = make()
    rng = np.random.default_rng(2)
    for _ in range(100):
        x = rng.standard_normal(A.in_dim)
        y = rng.standard_normal(A.out_dim)
        lhs = A.apply(x) @ y
        rhs = x @ A.adjoint(y)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, np.linalg.norm(x) * np.linalg.norm(y))


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 9), st.integers(3, 9), st.sampled_from([1, 3]), st.integers(0, 10**6))
def test_blur_adjoint_property(r, c, k, seed):
    A = make_motion_blur((r, c), k)
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(A.in_dim), rng.standard_normal(A.out_dim)
    assert abs(A.apply(x) @ y - x @ A.adjoint(y)) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(y)


# --- operator norm

def test_norm_identity():
    assert abs(operator_norm(make_dense(np.eye(7))) - 1.0) <= 1e-12


def test_norm_diag():
    assert abs(operator_norm(make_dense(np.diag([3.0, 1.0]))) - 3.0) <= 1e-12


def test_norm_random_vs_svd():
    M = np.random.default_rng(3).standard_normal((6, 5))
    ref = np.linalg.svd(M, compute_uv=False)[0]
    assert abs(operator_norm(make_dense(M)) - ref) <= 1e-8 * ref


def test_norm_zero_map():
    assert operator_norm(make_dense(np.zeros((3, 2)))) == 0.0


def test_norm_deterministic():
    M = np.random.default_rng(4).standard_normal((9, 9))
    assert operator_norm(make_dense(M), seed=5) == operator_norm(make_dense(M), seed=5)


def test_norm_unconverged_flagged():
    M = np.diag([1.0, 0.999999, 0.5])
    with pytest.warns(ConvergenceWarning):
        est, info = operator_norm(make_dense(M), max_iter=3, full_output=True)
    assert not info["converged"]
    assert 0 < est <= 1.0 + 1e-12


# --- decomposition

def test_decompose_identity():
    np.testing.assert_allclose(decompose(make_dense(np.eye(3))).singular_values, [1, 1, 1])


def test_decompose_inpainting_2x2():
    s = decompose(make_inpainting((2, 2), [0])).singular_values
    np.testing.assert_allclose(s, [1, 1, 0, 0], atol=1e-15)


def test_decompose_diag():
    np.testing.assert_allclose(decompose(make_dense([[2.0, 0], [0, 0]])).singular_values, [2, 0])


def test_decompose_reconstructs():
    M = np.random.default_rng(5).standard_normal((4, 6))
    d = decompose(make_dense(M))
    np.testing.assert_allclose(d.reconstruct(), M, atol=1e-12)
    assert np.all(np.diff(d.singular_values) <= 0)
    V = d.right_vectors
    np.testing.assert_allclose(V.T @ V, np.eye(6), atol=1e-12)


def test_decompose_resource_guard():
    with pytest.raises(ResourceLimitError):
        decompose(make_inpainting((1, 2500), []))


# --- kernel projector

def test_kernel_full_rank_is_zero():
    M = np.random.default_rng(6).standard_normal((5, 5))
    P = kernel_projector(decompose(make_dense(M)), 1e-12)
    assert P.rank == 0
    np.testing.assert_array_equal(P.matrix(), np.zeros((5, 5)))


def test_kernel_rank3_matches_rowspace_oracle():
    rng = np.random.default_rng(7)
    B, C = rng.standard_normal((5, 3)), rng.standard_normal((3, 5))
    M = B @ C
    # row space of M is the row space of C; its complement is the kernel
    ref = np.eye(5) - C.T @ np.linalg.solve(C @ C.T, C)
    P = kernel_projector(decompose(make_dense(M)), 1e-10)
    assert P.rank == 2
    np.testing.assert_allclose(P.matrix(), ref, atol=1e-9)


def test_kernel_includes_wide_directions():
    # a 2x4 map has at least a 2-dim kernel even though only 2 singular values exist
    P = kernel_projector(decompose(make_dense([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])))
    np.testing.assert_allclose(P.matrix(), np.diag([0, 0, 1.0, 1.0]), atol=1e-15)


def test_kernel_projector_properties():
    rng = np.random.default_rng(8)
    M = rng.standard_normal((4, 9))
    A = make_dense(M)
    P = kernel_projector(decompose(A))
    Pm = P.matrix()
    np.testing.assert_allclose(Pm @ Pm, Pm, atol=1e-12)
    np.testing.assert_allclose(Pm, Pm.T, atol=1e-12)
    x = rng.standard_normal(9)
    assert np.linalg.norm(A.apply(P.apply(x))) <= 1e-12 * np.linalg.norm(x) * 10
    np.testing.assert_allclose(P.apply(x) + P.complement(x), x, atol=1e-14)


# --- pseudo inverse

def test_pinv_identity():
    y = np.array([1.0, -2, 3])
    np.testing.assert_allclose(pseudo_apply(decompose(make_dense(np.eye(3))), y), y)


def test_pinv_diag():
    out = pseudo_apply(decompose(make_dense(np.diag([2.0, 0.0]))), np.array([4.0, 7.0]))
    np.testing.assert_allclose(out, [2.0, 0.0], atol=1e-15)


def test_pinv_full_column_rank_normal_equations():
    rng = np.random.default_rng(9)
    M = rng.standard_normal((6, 4))
    x = rng.standard_normal(4)
    y = M @ x
    ref = np.linalg.solve(M.T @ M, M.T @ y)
    out = pseudo_apply(decompose(make_dense(M)), y)
    np.testing.assert_allclose(out, ref, atol=1e-8)
    np.testing.assert_allclose(out, x, atol=1e-8)


def test_pinv_orthogonal_to_kernel():
    rng = np.random.default_rng(10)
    A = make_inpainting((6, 6), [0, 2, 5])
    d = decompose(A)
    B = kernel_projector(d).basis
    for _ in range(20):
        y = rng.standard_normal(36)
        out = pseudo_apply(d, y)
        assert np.max(np.abs(B.T @ out)) <= 1e-9 * np.linalg.norm(y)


# --- container

def test_dense_roundtrip(tmp_path):
    M = np.random.default_rng(11).standard_normal((3, 5))
    buf = dense_to_bytes(M)
    assert buf[:4] == b"EQLM"
    assert len(buf) == 16 + 8 * 15
    np.testing.assert_array_equal(dense_from_bytes(buf), M)
    save_map(tmp_path / "m.eqlm", make_dense(M))
    np.testing.assert_array_equal(load_map(tmp_path / "m.eqlm").to_dense(), M)


def test_dense_bad_magic():
    buf = bytearray(dense_to_bytes(np.eye(2)))
    buf[0:4] = b"XXXX"
    with pytest.raises(ParseError) as exc:
        dense_from_bytes(bytes(buf))
    assert exc.value.offset == 0


def test_dense_truncated():
    buf = dense_to_bytes(np.eye(3))[:-4]
    with pytest.raises(ParseError):
        dense_from_bytes(buf)
