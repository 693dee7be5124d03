import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import avg_pool_loop, central_diff, concentrate_loop, max_scan, region_linear_loop, rel_err
from rsan import region_mapping as rm
from rsan.errors import ContractViolation, DimensionError


def test_zero_projection():
    res = rm.saliency(np.random.default_rng(0).standard_normal((3, 4, 4)), np.zeros((3, 2)))
    assert not res.M.any() and not res.a_hat.any()
    assert np.array_equal(res.peaks, np.zeros((2, 2), int))


def test_pass_through_channel():
    res = rm.saliency(np.array([[[0.0, 2.0], [1.0, 0.0]]]), np.array([[1.0]]))
    assert res.a_hat.tolist() == [2.0]
    assert res.peaks.tolist() == [[0, 1]]


def test_saliency_matches_loop_and_scan():
    r = np.random.default_rng(1)
    for _ in range(20):
        v, P = r.standard_normal((4, 5, 6)), r.standard_normal((4, 3))
        res = rm.saliency(v, P)
        M = region_linear_loop(v, P)
        assert np.array_equal(res.M, M)
        for k in range(3):
            val, idx = max_scan(M[k])
            assert res.a_hat[k] == val and tuple(res.peaks[k]) == idx
            assert res.a_hat[k] == res.M[k][tuple(res.peaks[k])]


def test_predict_semantic_is_a_hat():
    r = np.random.default_rng(2)
    v, P = r.standard_normal((3, 4, 4)), r.standard_normal((3, 5))
    assert np.array_equal(rm.predict_semantic(v, P), rm.saliency(v, P).a_hat)


def test_predict_semantic_linear_in_positive_scale():
    r = np.random.default_rng(3)
    v, P = r.standard_normal((3, 4, 4)), r.standard_normal((3, 5))
    assert np.allclose(rm.predict_semantic(2.5 * v, P), 2.5 * rm.predict_semantic(v, P), rtol=1e-14)


def test_predict_semantic_spatial_permutation_invariant():
    r = np.random.default_rng(4)
    v, P = r.standard_normal((3, 4, 4)), r.standard_normal((3, 5))
    perm = r.permutation(16)
    vp = v.reshape(3, 16)[:, perm].reshape(3, 4, 4)
    assert np.array_equal(rm.predict_semantic(vp, P), rm.predict_semantic(v, P))


def test_baseline_constant_field():
    V = np.random.default_rng(5).standard_normal((3, 4))
    out = rm.baseline_predict(np.full((3, 5, 5), 2.0), V)
    assert np.allclose(out, 2.0 * V.sum(axis=0), rtol=1e-14)


def test_baseline_matches_loop():
    r = np.random.default_rng(6)
    v, V = r.standard_normal((4, 3, 5)), r.standard_normal((4, 6))
    assert np.max(np.abs(rm.baseline_predict(v, V) - avg_pool_loop(v) @ V)) < 1e-12


def test_single_region_degeneracy_bitwise():
    r = np.random.default_rng(7)
    for _ in range(50):
        v, P = r.standard_normal((6, 1, 1)), r.standard_normal((6, 4))
        assert np.array_equal(rm.predict_semantic(v, P), rm.baseline_predict(v, P))


# -- concentrate loss --------------------------------------------------------

def test_concentrate_uniform_map():
    assert rm.concentrate_loss(np.ones((1, 2, 2)), [[0, 0]]) == 4.0


def test_concentrate_one_hot():
    M = np.zeros((2, 3, 3))
    M[0, 1, 2] = 5
    M[1, 0, 0] = 1
    assert rm.concentrate_loss(M, [[1, 2], [0, 0]]) == 0.0


def test_concentrate_matches_loop():
    r = np.random.default_rng(8)
    M = r.standard_normal((3, 4, 4))
    peaks = np.array([max_scan(M[k])[1] for k in range(3)])
    assert abs(rm.concentrate_loss(M, peaks) - concentrate_loop(M, peaks)) < 1e-12


def test_concentrate_rejects_wrong_peaks():
    M = np.array([[[0.0, 1.0], [0.0, 0.0]]])
    with pytest.raises(ContractViolation):
        rm.concentrate_loss(M, [[0, 0]])
    with pytest.raises(DimensionError):
        rm.concentrate_loss(M, [[0, 1], [0, 1]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_concentrate_positive_homogeneous(seed, alpha):
    M = np.random.default_rng(seed).standard_normal((2, 3, 4))
    peaks = np.array([max_scan(M[k])[1] for k in range(2)])
    a = rm.concentrate_loss(alpha * M, peaks)
    b = alpha * rm.concentrate_loss(M, peaks)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(b))


def test_concentrate_batched():
    M = np.random.default_rng(9).standard_normal((4, 2, 3, 3))
    peaks = rm.saliency(M, np.eye(2)).peaks  # identity projection leaves M unchanged
    batch = rm.concentrate_loss(M, peaks)
    assert batch.shape == (4,)
    for b in range(4):
        assert batch[b] == rm.concentrate_loss(M[b], peaks[b])


def test_concentrate_gradient_wrt_P():
    """L_con + a smooth function of a_hat, peaks held fixed."""
    r = np.random.default_rng(10)
    v, P = r.standard_normal((3, 4, 4)), r.standard_normal((3, 2))
    c = r.standard_normal(2)

    def f(P_):
        s = rm.saliency(v, P_)
        return rm.concentrate_loss(s.M, s.peaks) + np.sum(c * s.a_hat**2)

    s = rm.saliency(v, P)
    srt = np.sort(s.M.reshape(2, -1), axis=1)
    assert np.all(srt[:, -1] - srt[:, -2] > 1e-3)
    gM = rm.concentrate_loss_backward(1.0, s.M, s.peaks)
    gM[np.arange(2), s.peaks[:, 0], s.peaks[:, 1]] += 2 * c * s.a_hat
    from rsan.tensor_ops import region_linear_backward
    _, dP = region_linear_backward(gM, v, P)
    assert rel_err(dP, central_diff(f, P)) < 1e-5


def test_relative_concentrate_gradient():
    r = np.random.default_rng(11)
    M = np.abs(r.standard_normal((2, 3, 3)))
    peaks = rm.saliency(M, np.eye(2)).peaks
    g = rm.relative_concentrate_loss_backward(1.0, M, peaks)
    fd = central_diff(lambda m: rm.relative_concentrate_loss(m, peaks), M)
    assert rel_err(g, fd) < 1e-5


def test_relative_concentrate_scale_free_and_bounded():
    M = np.abs(np.random.default_rng(12).standard_normal((3, 4, 4)))
    peaks = rm.saliency(M, np.eye(3)).peaks
    base = rm.relative_concentrate_loss(M, peaks)
    assert rm.relative_concentrate_loss(4.0 * M, peaks) == pytest.approx(base, rel=1e-14)
    assert rm.relative_concentrate_loss(-M, rm.saliency(-M, np.eye(3)).peaks) == 0.0


# -- export ------------------------------------------------------------------

def test_pgm_roundtrip(tmp_path):
    m = np.arange(12.0).reshape(3, 4)
    rm.write_pgm(tmp_path / "m.pgm", m, comment="seed=0")
    pix = rm.read_pgm(tmp_path / "m.pgm")
    assert pix.shape == (3, 4) and pix[0, 0] == 0 and pix[-1, -1] == 255
    assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n# seed=0\n4 3\n255\n")


def test_csv_export_is_exact(tmp_path):
    m = np.random.default_rng(13).standard_normal((2, 3))
    rm.write_saliency_csv(tmp_path / "m.csv", m)
    back = np.loadtxt(tmp_path / "m.csv", delimiter=",")
    assert np.array_equal(back, m)


def test_minmax_constant_map():
    assert not rm.minmax_normalize(np.full((2, 2), 3.0)).any()
