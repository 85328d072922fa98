"""PCA projectors used to unify per-cell feature dimension across scale bins."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError


class PcaError(DataError):
    pass


@dataclass
class PcaProjector:
    """Mean-centering linear projector with an orthonormal basis.

    ``basis`` is (d, D): row k is the k-th principal direction.  ``energy``
    is the fraction of total variance captured by the kept components.
    ``requested_dim`` records the originally requested dimension when rank
    deficiency forced a reduction.
    """

    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray
    energy: float
    requested_dim: int | None = None

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.basis = np.asarray(self.basis, dtype=np.float64)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        if self.basis.ndim != 2 or self.mean.ndim != 1:
            raise PcaError("projector basis must be 2-D and mean 1-D")
        d, dim = self.basis.shape
        if self.mean.shape[0] != dim or self.eigenvalues.shape[0] != d:
            raise PcaError(
                f"projector shape mismatch: basis {self.basis.shape}, "
                f"mean {self.mean.shape}, eigenvalues {self.eigenvalues.shape}"
            )
        gram = self.basis @ self.basis.T
        if not np.allclose(gram, np.eye(d), atol=1e-6):
            raise PcaError("projector basis rows are not orthonormal")

    @property
    def input_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def output_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def is_identity(self) -> bool:
        return (
            self.input_dim == self.output_dim
            and not self.mean.any()
            and np.array_equal(self.basis, np.eye(self.input_dim))
        )

    def project(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.input_dim:
            raise PcaError(f"expected vectors of dim {self.input_dim}, got {v.shape[-1]}")
        return (v - self.mean) @ self.basis.T

    @classmethod
    def identity(cls, dim: int) -> "PcaProjector":
        return cls(
            mean=np.zeros(dim),
            basis=np.eye(dim),
            eigenvalues=np.ones(dim),
            energy=1.0,
        )


def fit_pca(
    samples: np.ndarray,
    components: int | None = None,
    energy: float | None = None,
) -> PcaProjector:
    """Fit a projector by eigendecomposition of the sample covariance.

    Exactly one of ``components`` / ``energy`` selects the output dimension:
    a fixed count, or the smallest count whose variance fraction reaches
    ``energy``.  Components are ordered by decreasing eigenvalue and signed
    so that each row's first nonzero entry is positive.  If the data rank is
    below the requested count the projector is reduced to the rank and the
    request recorded in ``requested_dim`` (a warning is emitted).
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise PcaError(f"samples must be 2-D, got shape {X.shape}")
    n, dim = X.shape
    if n < 2:
        raise PcaError(f"need at least 2 samples to fit, got {n}")
    if (components is None) == (energy is None):
        raise PcaError("specify exactly one of components / energy")
    if components is not None and not (1 <= components <= dim):
        raise PcaError(f"components must be in [1, {dim}], got {components}")
    if energy is not None and not (0.0 < energy <= 1.0):
        raise PcaError(f"energy must be in (0, 1], got {energy}")

    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    total = float(eigvals.sum())

    if total <= 0.0:
        # Constant data: no variance anywhere.  Fall back to leading
        # coordinate axes so the projector still has the asked-for shape.
        d = components if components is not None else 1
        return PcaProjector(mean=mean, basis=np.eye(dim)[:d], eigenvalues=np.zeros(d),
                            energy=1.0)

    rank = int(np.sum(eigvals > eigvals[0] * 1e-12))
    if components is not None:
        d = components
    else:
        frac = np.cumsum(eigvals) / total
        d = int(np.searchsorted(frac, energy - 1e-12) + 1)
    requested = None
    if d > rank:
        warnings.warn(
            f"requested {d} components but sample rank is {rank}; reducing",
            stacklevel=2,
        )
        requested = d
        d = rank

    basis = eigvecs[:, :d].T.copy()
    for row in basis:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    kept = eigvals[:d]
    return PcaProjector(
        mean=mean,
        basis=basis,
        eigenvalues=kept,
        energy=float(kept.sum() / total),
        requested_dim=requested,
    )
