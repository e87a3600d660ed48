import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hemorom.errors import RankError
from hemorom.pod import POD, compute_basis, correlation_matrix, select_rank, truncation_energy


def _gram(modes, w):
    return (modes * w) @ modes.T


def test_correlation_single_snapshot():
    s = np.array([[1.0, 2.0, 2.0]])
    w = np.array([1.0, 2.0, 0.5])
    assert correlation_matrix(s, w)[0, 0] == pytest.approx(1 + 8 + 2)


def test_correlation_two_orthonormal_snapshots():
    S = np.eye(2, 5)
    assert np.allclose(correlation_matrix(S), 0.5 * np.eye(2))


def test_correlation_matches_dense_loops(rng):
    S = rng.normal(size=(6, 11))
    w = rng.uniform(0.5, 2.0, size=11)
    ref = np.zeros((6, 6))
    for i in range(6):
        for j in range(6):
            ref[i, j] = sum(S[i, k] * w[k] * S[j, k] for k in range(11)) / 6
    assert np.allclose(correlation_matrix(S, w), ref, rtol=0, atol=1e-12)


def test_repeated_snapshot_gives_one_mode(rng):
    s = rng.normal(size=20)
    w = rng.uniform(0.5, 2.0, size=20)
    pod = POD(delta=1.0, weights=w).fit(np.tile(s, (7, 1)))
    assert pod.rank_ == 1 and pod.n_modes_ == 1
    phi = s / np.sqrt(np.sum(w * s * s))
    assert np.allclose(np.abs(pod.modes_[0]), np.abs(phi), atol=1e-12)


def test_orthonormal_snapshots_span(rng):
    q, _ = np.linalg.qr(rng.normal(size=(30, 5)))
    S = q.T * 3.0
    pod = POD(delta=1.0).fit(S)
    assert np.allclose(pod.eigenvalues_, 9.0 / 5)
    proj_ref = S.T @ S / 9.0
    proj = pod.modes_.T @ pod.modes_
    assert np.allclose(proj, proj_ref, atol=1e-12)
    assert np.allclose(_gram(pod.modes_, np.ones(30)), np.eye(5), atol=1e-12)


def test_rank_two_data(rng):
    f1, f2 = rng.normal(size=(2, 40))
    coef = rng.normal(size=(25, 2))
    pod = POD(delta=1.0).fit(coef @ np.vstack([f1, f2]))
    assert np.sum(pod.eigenvalues_ > 1e-12 * pod.eigenvalues_[0]) == 2
    assert pod.rank_ == 2
    with pytest.raises(RankError) as exc:
        POD(n_modes=3).fit(coef @ np.vstack([f1, f2]))
    assert exc.value.usable_rank == 2


def test_select_rank_hand_example():
    assert select_rank([9, 0.9, 0.09, 0.01], 0.99) == 2
    assert select_rank([9, 0.9, 0.09, 0.01], 1.0) == 4
    with pytest.raises(ValueError):
        select_rank([1.0], 0.0)


def test_truncation_energy_examples():
    assert truncation_energy([4, 1], 1) == 1
    assert truncation_energy([4, 1], 2) == 0


def test_delta_one_keeps_every_snapshot(rng):
    S = rng.normal(size=(8, 30))
    assert POD(delta=1.0).fit(S).n_modes_ == 8


def test_matches_dense_svd_oracle(rng):
    S = rng.normal(size=(12, 40))
    w = rng.uniform(0.1, 1.0, size=40)
    lam, modes = oracles.dense_pod(S, w)
    pod = POD(delta=1.0, weights=w).fit(S)
    assert np.allclose(pod.eigenvalues_, lam, rtol=1e-12)
    # modes agree up to sign
    for k in range(12):
        sgn = np.sign(np.dot(pod.modes_[k] * w, modes[k]))
        assert np.allclose(pod.modes_[k], sgn * modes[k], atol=1e-10)
    # eigenpairs of the correlation matrix itself
    C = correlation_matrix(S, w)
    assert np.allclose(C @ pod.eigenvectors_, pod.eigenvectors_ * pod.eigenvalues_, atol=1e-12)


def test_sign_convention_reproducible(rng):
    S = rng.normal(size=(10, 25))
    a = POD(n_modes=4).fit(S)
    b = POD(n_modes=4).fit(S.copy())
    assert np.array_equal(a.modes_, b.modes_)
    for k in range(a.eigenvectors_.shape[1]):
        col = a.eigenvectors_[:, k]
        first = col[np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]]
        assert first > 0


def test_zero_snapshots_rejected():
    with pytest.raises(ValueError):
        POD().fit(np.zeros((3, 4)))


def test_bad_weights_rejected(rng):
    with pytest.raises(ValueError):
        POD(weights=-np.ones(4)).fit(rng.normal(size=(3, 4)))


def test_transform_round_trip(rng):
    S = rng.normal(size=(6, 15))
    pod = compute_basis(S, 6)
    assert np.allclose(pod.inverse_transform(pod.transform(S)), S, atol=1e-12)
    assert pod.cumulative_energy()[-1] == pytest.approx(1.0)
    assert "index" in pod.spectrum_table()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 50), st.integers(51, 120))
def test_residual_identity_and_orthonormality(seed, nt, ndof):
    r = np.random.default_rng(seed)
    S = r.normal(size=(nt, ndof)) * r.uniform(0.1, 3.0, size=(nt, 1))
    w = r.uniform(0.2, 2.0, size=ndof)
    pod = POD(delta=1.0, weights=w).fit(S)
    lam = pod.eigenvalues_
    assert np.all(np.diff(lam) <= 1e-12 * lam[0])
    assert np.all(lam >= -1e-12 * lam[0])
    assert np.allclose(_gram(pod.modes_, w), np.eye(pod.n_modes_), atol=1e-10)
    prev = np.inf
    for n in range(1, nt):
        p = POD(n_modes=n, weights=w).fit(S)
        res = p.projection_residual(S)
        ref = nt * truncation_energy(lam, n)
        assert abs(res - ref) <= 1e-8 * ref
        assert ref <= prev
        prev = ref
