"""Proper orthogonal decomposition by the method of snapshots.

Snapshot matrices follow the scikit-learn convention: one snapshot per row,
shape ``(N_t, n_dof)``.  All pairings use a diagonal weight (cell volumes) so
that the modes are orthonormal in the discrete L2 inner product.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import RankError

__all__ = [
    "dof_weights",
    "correlation_matrix",
    "select_rank",
    "truncation_energy",
    "POD",
    "compute_basis",
]

# singular values below RANK_RTOL * max(N_t, n_dof) * sigma_1 count as zero
RANK_RTOL = np.finfo(float).eps


def dof_weights(mesh, n_components=1):
    """Cell volumes repeated per component, matching ``field.ravel()``."""
    return np.repeat(mesh.cell_volumes, n_components)


def _weights(weights, n_dof):
    if weights is None:
        return np.ones(n_dof)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n_dof,):
        raise ValueError(f"weights must have shape ({n_dof},), got {w.shape}")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return w


def correlation_matrix(S, weights=None):
    """``(1/N_t) S W S^T`` for snapshot rows ``S``."""
    S = check_array(S, ensure_min_samples=1)
    w = _weights(weights, S.shape[1])
    C = (S * w) @ S.T / S.shape[0]
    return 0.5 * (C + C.T)


def select_rank(eigenvalues, delta):
    """Smallest ``N`` whose leading eigenvalues hold a ``delta`` energy share."""
    lam = np.asarray(eigenvalues, dtype=float)
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    total = lam.sum()
    if not total > 0:
        raise ValueError("eigenvalue spectrum is identically zero")
    if delta == 1:
        return len(lam)
    frac = np.cumsum(lam) / total
    return int(np.searchsorted(frac, delta * (1 - 1e-15), side="left") + 1)


def truncation_energy(eigenvalues, n):
    """Sum of the eigenvalues left out by an ``n``-mode basis."""
    return float(np.sum(np.asarray(eigenvalues, dtype=float)[n:]))


def _fix_signs(vecs):
    """Make the first nonzero entry of every column positive (in place).

    Returns the mask of flipped columns.
    """
    flipped = np.zeros(vecs.shape[1], dtype=bool)
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        tol = 1e-12 * np.max(np.abs(col))
        first = np.flatnonzero(np.abs(col) > tol)
        if first.size and col[first[0]] < 0:
            vecs[:, k] = -col
            flipped[k] = True
    return flipped


class POD(TransformerMixin, BaseEstimator):
    """Weighted POD basis of a snapshot set.

    Parameters
    ----------
    n_modes : int, optional
        Number of retained modes; if ``None`` it is chosen from ``delta``.
    delta : float, default=0.9999
        Cumulative energy fraction used when ``n_modes`` is ``None``.
    weights : array-like of shape (n_dof,), optional
        Diagonal inner-product weights (cell volumes).

    Attributes
    ----------
    eigenvalues_ : ndarray of shape (N_t,)
        Descending spectrum of the correlation matrix (non-negative).
    eigenvectors_ : ndarray of shape (N_t, min(N_t, n_dof))
        Correlation-matrix eigenvectors, first nonzero entry positive.
    singular_values_ : ndarray
        Singular values of the weighted snapshot matrix.
    rank_ : int
        Numerical rank of the snapshot set.
    modes_ : ndarray of shape (n_modes_, n_dof)
        Orthonormal in the weighted inner product.
    n_modes_ : int
    n_snapshots_ : int
    """

    def __init__(self, n_modes=None, delta=0.9999, weights=None):
        self.n_modes = n_modes
        self.delta = delta
        self.weights = weights

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        n_t, n_dof = X.shape
        w = _weights(self.weights, n_dof)
        # eigenpairs of (1/N_t) X W X^T from the thin SVD of X W^(1/2): same
        # decomposition, without squaring the condition number
        sw = np.sqrt(w)
        vecs, sig, vt = np.linalg.svd(X * sw, full_matrices=False)
        if not sig[0] > 0:
            raise ValueError("snapshot set is identically zero")
        lam = np.zeros(n_t)
        lam[: len(sig)] = sig**2 / n_t
        rank = int(np.sum(sig > RANK_RTOL * max(n_t, n_dof) * sig[0]))
        if self.n_modes is None:
            n = min(select_rank(lam, self.delta), rank)
        else:
            n = int(self.n_modes)
            if not 1 <= n <= rank:
                raise RankError(f"requested {n} modes but the usable rank is {rank}", rank)
        flip = _fix_signs(vecs)
        vt[flip] *= -1.0
        self.eigenvalues_ = lam
        self.eigenvectors_ = vecs
        self.singular_values_ = sig
        self.n_snapshots_ = n_t
        self.rank_ = rank
        self.weights_ = w
        self.n_modes_ = n
        self.modes_ = vt[:n] / sw
        return self

    def transform(self, X):
        """Weighted projection coefficients, shape ``(n_samples, n_modes_)``."""
        check_is_fitted(self, "modes_")
        X = check_array(X)
        return (X * self.weights_) @ self.modes_.T

    def inverse_transform(self, X):
        check_is_fitted(self, "modes_")
        X = check_array(X)
        return X @ self.modes_

    def projection_residual(self, X):
        """Weighted squared norm of ``X - V V^T W X`` summed over snapshots."""
        X = check_array(X)
        r = X - self.inverse_transform(self.transform(X))
        return float(np.sum((r * r) * self.weights_))

    def cumulative_energy(self):
        check_is_fitted(self, "eigenvalues_")
        return np.cumsum(self.eigenvalues_) / self.eigenvalues_.sum()

    def spectrum_table(self):
        """Lines ``index lambda cumulative`` for ``spectrum.txt``."""
        cum = self.cumulative_energy()
        lines = [
            "# index lambda cumulative_fraction",
            "# C = (1/N_t) S^T W S; modes = S c_i / sqrt(N_t lambda_i), unit weighted norm",
        ]
        lines += ["%d %.17g %.17g" % (i + 1, lam, c) for i, (lam, c) in enumerate(zip(self.eigenvalues_, cum))]
        return "\n".join(lines) + "\n"


def compute_basis(S, n_modes, weights=None):
    """Fit a :class:`POD` with a fixed number of modes."""
    return POD(n_modes=n_modes, weights=weights).fit(S)
