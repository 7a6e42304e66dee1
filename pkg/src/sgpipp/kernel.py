"""Anisotropic RBF covariance and its input gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, LinAlgError

from .errors import InvalidArgument, NumericalFailure

JITTER_LADDER = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2)


@dataclass(frozen=True)
class RbfKernel:
    """Stationary squared-exponential kernel with one lengthscale per input.

    k(x, y) = variance * exp(-0.5 * sum_i (x_i - y_i)^2 / l_i^2)
    """

    variance: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if ls.ndim != 1 or ls.size < 1:
            raise InvalidArgument("lengthscales must be a non-empty vector")
        if not np.all(ls > 0):
            raise InvalidArgument(f"lengthscales must be positive, got {ls}")
        if not float(self.variance) > 0:
            raise InvalidArgument(f"variance must be positive, got {self.variance}")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "variance", float(self.variance))

    @property
    def input_dim(self) -> int:
        return self.lengthscales.size

    def _check(self, pts: np.ndarray, name: str) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.shape[-1] != self.input_dim:
            raise InvalidArgument(f"{name} has dimension {pts.shape[-1]}, kernel expects {self.input_dim}")
        return pts

    def eval(self, x, y) -> float:
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if x.size != self.input_dim or y.size != self.input_dim:
            raise InvalidArgument(f"points must have dimension {self.input_dim}")
        r2 = np.sum(((x - y) / self.lengthscales) ** 2)
        return float(self.variance * np.exp(-0.5 * r2))

    def __call__(self, A, B=None) -> np.ndarray:
        return self.cov(A, A if B is None else B)

    def cov(self, A, B) -> np.ndarray:
        """Covariance matrix between two point sets, shape (len(A), len(B))."""
        A = self._check(A, "A")
        B = self._check(B, "B")
        if len(A) == 0 or len(B) == 0:
            raise InvalidArgument("point sets must be non-empty")
        a = A / self.lengthscales
        b = B / self.lengthscales
        r2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
        np.maximum(r2, 0.0, out=r2)
        return self.variance * np.exp(-0.5 * r2)

    def diag(self, A) -> np.ndarray:
        return np.full(len(np.atleast_2d(A)), self.variance)

    def grad_first(self, A, B, G, K=None) -> np.ndarray:
        """Gradient of sum(G * k(A, B)) with respect to the rows of A.

        Args:
            A: (a, d) points.
            B: (b, d) points.
            G: (a, b) upstream weights.
            K: optional precomputed ``cov(A, B)``.

        Returns:
            (a, d) array.
        """
        A = np.atleast_2d(A)
        B = np.atleast_2d(B)
        if K is None:
            K = self.cov(A, B)
        W = G * K
        inv_l2 = 1.0 / self.lengthscales**2
        return -(A * W.sum(1)[:, None] - W @ B) * inv_l2

    def grad_self(self, A, G, K=None) -> np.ndarray:
        """Gradient of sum(G * k(A, A)) with respect to the rows of A."""
        return self.grad_first(A, A, G + G.T, K)


def jittered_cholesky(K: np.ndarray, scale: float, ladder=JITTER_LADDER):
    """Lower Cholesky factor of ``K + jitter * scale * I``.

    The jitter walks up ``ladder`` until the factorization succeeds.

    Returns:
        (L, jitter) where jitter is the absolute value added to the diagonal.

    Raises:
        NumericalFailure: if every rung of the ladder fails.
    """
    eye = np.eye(K.shape[0])
    for rel in ladder:
        jitter = rel * scale
        try:
            L, _ = cho_factor(K + jitter * eye, lower=True, check_finite=True)
        except (LinAlgError, ValueError):
            continue
        return np.tril(L), jitter
    raise NumericalFailure(f"Cholesky failed with jitter up to {ladder[-1]:g} x {scale:g}")
