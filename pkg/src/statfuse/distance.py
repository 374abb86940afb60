"""Cost matrices between recipient and donor units."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigurationError
from .harmonize import HarmonizedPair

RIDGE = 1e-8


@dataclass(frozen=True)
class CostMatrix:
    values: np.ndarray
    metric: str
    kind: str = "d"
    omega: np.ndarray | None = None

    @property
    def shape(self):
        return self.values.shape


def pooled_covariance(pair: HarmonizedPair) -> np.ndarray:
    """Covariance of ``x`` pooled over both calibrated samples.

    Each sample's weighted scatter about the composite mean ``X*/N*`` is
    mixed with ``alpha*`` and normalized by ``N*``.
    """
    a = pair.alpha_star
    xbar = pair.x_bar
    d1 = pair.recipient.x - xbar
    d2 = pair.donor.x - xbar
    s1 = (d1 * pair.w1[:, None]).T @ d1
    s2 = (d2 * pair.w2[:, None]).T @ d2
    omega = (a * s1 + (1 - a) * s2) / pair.n_hat_star
    return (omega + omega.T) / 2


def whitening(omega) -> np.ndarray:
    """Lower-triangular ``M`` with ``M.T @ M = inv(omega)``, ridged when near singular."""
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    p = omega.shape[0]
    if p == 0:
        return np.zeros((0, 0))
    scale = np.trace(omega) / p
    if scale <= 0:
        return np.eye(p)
    lo = np.linalg.eigvalsh(omega)[0]
    if lo <= RIDGE * scale:
        omega = omega + RIDGE * scale * np.eye(p)
    chol = np.linalg.cholesky(omega)
    return np.linalg.inv(chol)


def mahalanobis_matrix(x1, x2, omega, *, kind: str = "d") -> CostMatrix:
    """Mahalanobis distances ``sqrt((x_k - x_l)' inv(omega) (x_k - x_l))``.

    ``kind="d2"`` returns the squared form instead.
    """
    _check_kind(kind)
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    white = whitening(omega)
    t1 = x1 @ white.T
    t2 = x2 @ white.T
    vals = cdist(t1, t2, "sqeuclidean" if kind == "d2" else "euclidean")
    return CostMatrix(vals, "mahalanobis", kind, np.atleast_2d(np.asarray(omega, dtype=float)))


def euclidean_matrix(x1, x2, *, kind: str = "d") -> CostMatrix:
    _check_kind(kind)
    vals = cdist(
        np.atleast_2d(np.asarray(x1, dtype=float)),
        np.atleast_2d(np.asarray(x2, dtype=float)),
        "sqeuclidean" if kind == "d2" else "euclidean",
    )
    return CostMatrix(vals, "euclidean", kind)


def cost_matrix(pair: HarmonizedPair, metric: str = "mahalanobis", kind: str = "d") -> CostMatrix:
    """Cost matrix for a harmonized pair; the Mahalanobis metric uses the pooled covariance."""
    if metric == "mahalanobis":
        return mahalanobis_matrix(pair.recipient.x, pair.donor.x, pooled_covariance(pair), kind=kind)
    if metric == "euclidean":
        return euclidean_matrix(pair.recipient.x, pair.donor.x, kind=kind)
    raise ConfigurationError(f"unknown metric {metric!r}; use euclidean or mahalanobis")


def _check_kind(kind):
    if kind not in ("d", "d2"):
        raise ConfigurationError(f"unknown cost kind {kind!r}; use d or d2")
