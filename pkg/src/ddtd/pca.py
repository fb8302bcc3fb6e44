"""Principal-component compression of density fields.

Rows of the data matrix are nodal density vectors. After centering, the
matrix factors as ``scores @ coefficients.T``; the score matrix (one row per
field, at most ``m - 1`` columns) is what the generative model is trained on,
and :meth:`PCACompressor.restore` maps generated score rows back to fields.
"""

from __future__ import annotations

import struct
import warnings
from pathlib import Path

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

_MAGIC = b"DDTDPCA1"


class DegeneratePCAWarning(UserWarning):
    """All rows identical: nothing to compress."""


def center(X):
    """Subtract column means. Returns ``(X_centered, mean)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError(f"need at least two rows to center, got shape {X.shape}")
    mean = X.mean(axis=0)
    return X - mean, mean


def _fix_signs(U, C):
    # largest-magnitude entry of each coefficient column made positive
    if C.shape[1] == 0:
        return U, C
    rows = np.argmax(np.abs(C), axis=0)
    signs = np.sign(C[rows, np.arange(C.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, C * signs


def _svd_direct(Xc):
    U, s, Vt = linalg.svd(Xc, full_matrices=False, lapack_driver="gesdd")
    return U, s, Vt.T


def _svd_gram(Xc, tol):
    """Thin SVD through the m x m Gram matrix, refined by one projection.

    The eigenvectors of ``Xc Xc^T`` give a basis for the row space; the
    coefficient directions are then orthonormalized by QR and the small
    projected matrix is decomposed exactly, which restores full accuracy
    for the trailing singular values.
    """
    G = Xc @ Xc.T
    lam, U = linalg.eigh(G)
    lam, U = lam[::-1], U[:, ::-1]
    if lam[0] <= 0:
        return np.zeros((Xc.shape[0], 0)), np.zeros(0), np.zeros((Xc.shape[1], 0))
    keep = lam > lam[0] * tol**2
    Q, _ = linalg.qr(Xc.T @ U[:, keep], mode="economic")
    Ub, s, Vbt = linalg.svd(Xc @ Q, full_matrices=False)
    return Ub, s, Q @ Vbt.T


class PCACompressor(TransformerMixin, BaseEstimator):
    """Compress density fields to principal-component scores and back.

    Parameters
    ----------
    n_components : int or None, default=None
        Number of retained components. ``None`` keeps every component whose
        singular value exceeds ``tol`` times the largest one.
    route : {"auto", "gram", "svd"}, default="auto"
        ``"gram"`` decomposes the m x m Gram matrix, which is cheap when the
        fields have far more nodes than there are fields; ``"auto"`` picks it
        when ``n_features >= 4 * n_samples``.
    tol : float, default=1e-10
        Relative singular-value cutoff for the automatic rank.
    whiten : bool, default=False
        Divide scores by their per-component standard deviation.

    Attributes
    ----------
    mean_ : ndarray of shape (n_features,)
    coefficients_ : ndarray of shape (n_features, n_components_)
        Orthonormal columns; the sign of each is fixed so that its
        largest-magnitude entry is positive.
    singular_values_ : ndarray of shape (n_components_,)
    n_components_ : int
    degenerate_ : bool
        True when the training rows were all identical.
    """

    def __init__(self, n_components=None, route="auto", tol=1e-10, whiten=False):
        self.n_components = n_components
        self.route = route
        self.tol = tol
        self.whiten = whiten

    def _decompose(self, X):
        X = check_array(X, dtype=np.float64)
        Xc, mean = center(X)
        m, n = Xc.shape
        route = self.route
        if route == "auto":
            route = "gram" if n >= 4 * m else "svd"
        if route == "gram":
            U, s, C = _svd_gram(Xc, self.tol)
        elif route == "svd":
            U, s, C = _svd_direct(Xc)
        else:
            raise ValueError(f"unknown route {self.route!r}")

        if s.size and s[0] > 0:
            rank = int(np.count_nonzero(s > self.tol * s[0]))
        else:
            rank = 0
        k = rank
        if self.n_components is not None:
            if not 0 < self.n_components <= min(m, n):
                raise ValueError(f"n_components={self.n_components} outside [1, {min(m, n)}]")
            k = min(int(self.n_components), rank)
        U, s, C = U[:, :k], s[:k], C[:, :k]
        U, C = _fix_signs(U, C)

        self.mean_ = mean
        self.coefficients_ = np.ascontiguousarray(C)
        self.singular_values_ = s
        self.n_components_ = k
        self.n_samples_ = m
        self.n_features_in_ = n
        self.route_ = route
        self.degenerate_ = k == 0
        if self.degenerate_:
            warnings.warn("all training rows are identical; no components retained",
                          DegeneratePCAWarning, stacklevel=3)
        return U * s

    def _score_scale(self):
        if not self.whiten or self.n_components_ == 0:
            return np.ones(self.n_components_)
        scale = self.singular_values_ / np.sqrt(max(self.n_samples_ - 1, 1))
        return np.where(scale > 0, scale, 1.0)

    def fit(self, X, y=None):
        self._decompose(X)
        return self

    def fit_transform(self, X, y=None):
        return self._decompose(X) / self._score_scale()

    def transform(self, X):
        check_is_fitted(self, "coefficients_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return ((X - self.mean_) @ self.coefficients_) / self._score_scale()

    def restore(self, scores):
        """Map score rows back to (unclamped) nodal density rows."""
        check_is_fitted(self, "coefficients_")
        S = np.atleast_2d(np.asarray(scores, dtype=float))
        if S.shape[1] != self.n_components_:
            raise ValueError(f"expected {self.n_components_} score columns, got {S.shape[1]}")
        return (S * self._score_scale()) @ self.coefficients_.T + self.mean_

    inverse_transform = restore

    def reconstruction_error(self, X):
        """Squared Frobenius norm of ``X - restore(transform(X))``."""
        X = np.asarray(X, dtype=float)
        return float(np.sum((X - self.restore(self.transform(X))) ** 2))

    # -- checkpoint ----------------------------------------------------------

    def save(self, path):
        """Binary checkpoint: magic, int64 (m, n, k), mean, singular values, C."""
        check_is_fitted(self, "coefficients_")
        head = _MAGIC + struct.pack("<3q", self.n_samples_, self.n_features_in_, self.n_components_)
        body = b"".join(
            np.ascontiguousarray(a, dtype="<f8").tobytes()
            for a in (self.mean_, self.singular_values_, self.coefficients_)
        )
        Path(path).write_bytes(head + body)

    @classmethod
    def load(cls, path, **params):
        raw = Path(path).read_bytes()
        if not raw.startswith(_MAGIC):
            raise ValueError(f"{path}: not a PCA checkpoint")
        m, n, k = struct.unpack_from("<3q", raw, len(_MAGIC))
        data = np.frombuffer(raw, dtype="<f8", offset=len(_MAGIC) + 24).astype(float)
        if data.size != n + k + n * k:
            raise ValueError(f"{path}: truncated checkpoint")
        obj = cls(**params)
        obj.mean_ = data[:n].copy()
        obj.singular_values_ = data[n:n + k].copy()
        obj.coefficients_ = data[n + k:].reshape(n, k).copy()
        obj.n_samples_, obj.n_features_in_, obj.n_components_ = m, n, k
        obj.degenerate_ = k == 0
        obj.route_ = "loaded"
        return obj
