"""Harmonize two weighting systems on a composite total of the matching variables.

Both samples are calibrated with the Kullback-Leibler pseudo-distance
``w log(w / v)`` so that their weighted totals of ``x`` coincide with the
composite ``X* = a X_v1 + (1 - a) X_v2`` and their weight sums coincide with
``N* = a N_v1 + (1 - a) N_v2``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CalibrationError, DomainError
from .frame import OverlapInfo, SampleFrame, detect_overlap

logger = logging.getLogger(__name__)

#: columns whose pivot falls below this fraction of the largest are dropped
RANK_TOL = 1e-10
#: targets smaller than this fraction of ``sum w |x|`` are judged against the latter
CANCEL_FLOOR = 1e-4
POLISH_STEPS = 3


def alpha_star(n1: int, n2: int, n12: int) -> float:
    """Overlap-aware mixing weight ``(n1 - n12) / (n1 + n2 - 2 n12)``.

    When both samples coincide with their overlap the ratio is undefined;
    0.5 is returned with a warning.
    """
    if n1 < 1 or n2 < 1:
        raise DomainError("sample sizes must be >= 1")
    if not 0 <= n12 <= min(n1, n2):
        raise DomainError(f"overlap size {n12} outside [0, min(n1, n2)]")
    den = n1 + n2 - 2 * n12
    if den == 0:
        warnings.warn(
            "samples are identical to their overlap; alpha* is undefined, using 0.5",
            RuntimeWarning,
            stacklevel=2,
        )
        return 0.5
    return (n1 - n12) / den


def alpha_opt(var1: float, var2: float, cov12: float) -> float:
    """Variance-minimizing mixing weight for a scalar total.

    Inputs are externally estimated variances of the two total estimators
    and their covariance. Values outside [0, 1] are clamped with a warning.
    """
    if var1 <= 0 or var2 <= 0:
        raise DomainError("variances must be > 0")
    den = var1 + var2 - cov12
    if den == 0:
        raise DomainError("alpha_opt denominator is zero")
    a = (var2 - cov12) / den
    if not 0.0 <= a <= 1.0:
        warnings.warn(f"alpha_opt={a:.6g} outside [0, 1]; clamped", RuntimeWarning, stacklevel=2)
        a = min(max(a, 0.0), 1.0)
    return a


def composite_totals(recipient: SampleFrame, donor: SampleFrame, alpha: float):
    """Return ``(X*, N*)`` mixing the two Horvitz-Thompson-type totals."""
    x1 = recipient.weights @ recipient.x
    x2 = donor.weights @ donor.x
    n1 = recipient.weights.sum()
    n2 = donor.weights.sum()
    return alpha * x1 + (1 - alpha) * x2, alpha * n1 + (1 - alpha) * n2


def augmented_design(x: np.ndarray) -> np.ndarray:
    """Matching variables with a trailing constant column."""
    x = np.asarray(x, dtype=float)
    return np.hstack([x.reshape(len(x), -1), np.ones((len(x), 1))])


def relative_residuals(weights, design, targets) -> np.ndarray:
    """Componentwise ``|sum w x - t|`` relative to ``|t|``.

    A target that cancels to (almost) zero is measured against
    ``CANCEL_FLOOR * sum w |x|`` instead: a purely relative figure is
    meaningless there, and rounding in the weighted sum alone is of order
    ``n * eps * sum w |x|``.
    """
    design = np.asarray(design, dtype=float)
    targets = np.asarray(targets, dtype=float)
    fit = weights @ design
    gross = weights @ np.abs(design)
    den = np.maximum(np.abs(targets), CANCEL_FLOOR * gross)
    den = np.where(den > 0, den, 1.0)
    return np.abs(fit - targets) / den


@dataclass(frozen=True)
class CalibrationResult:
    weights: np.ndarray
    multipliers: np.ndarray
    iterations: int
    max_residual: float
    dropped: tuple[int, ...] = ()
    dual_history: tuple[float, ...] = field(default=(), repr=False)


def _independent_columns(design: np.ndarray) -> list[int]:
    scale = np.linalg.norm(design, axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    _, r, piv = scipy.linalg.qr(design / scale, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        return []
    rank = int(np.sum(diag > RANK_TOL * diag[0]))
    return sorted(piv[:rank].tolist())


def kl_calibrate(
    v,
    design,
    targets,
    *,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> CalibrationResult:
    """Calibrate weights ``v`` to ``targets`` under the KL pseudo-distance.

    The solution has the form ``w = v * exp(design @ lam)``; ``lam``
    minimizes the convex dual ``sum v exp(design @ lam) - lam @ targets`` by
    Newton's method with step halving, starting from ``lam = 0``.

    Parameters
    ----------
    v : array, shape (n,)
        Initial (design) weights, strictly positive.
    design : array, shape (n, m)
        Calibration variables, usually ``augmented_design(x)``.
    targets : array, shape (m,)
        Totals to reproduce.
    tol : float
        Convergence threshold on the largest relative residual.
    max_iter : int
        Newton iteration cap.

    Returns
    -------
    CalibrationResult

    Raises
    ------
    CalibrationError
        If the residual does not fall below ``tol`` within ``max_iter``
        iterations (typically because the targets are unreachable with
        positive weights).
    """
    v = np.asarray(v, dtype=float)
    design = np.asarray(design, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if design.ndim != 2 or design.shape[0] != v.shape[0] or design.shape[1] != targets.shape[0]:
        raise DomainError("calibration design, weights and targets are not conformable")
    if not np.all(np.isfinite(targets)):
        raise DomainError("calibration targets must be finite")
    if np.any(v <= 0):
        raise DomainError("initial weights must be > 0")

    keep = _independent_columns(design)
    dropped = tuple(j for j in range(design.shape[1]) if j not in keep)
    if dropped:
        warnings.warn(
            f"dropping linearly dependent calibration columns {list(dropped)}",
            RuntimeWarning,
            stacklevel=2,
        )
    a = design[:, keep]
    t = targets[keep]

    def dual(lam):
        with np.errstate(over="ignore"):
            w = v * np.exp(a @ lam)
        return w, float(w.sum() - lam @ t)

    def newton(w, grad):
        hess = (a * w[:, None]).T @ a
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                return -scipy.linalg.solve(hess, grad, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError):
            return -np.linalg.lstsq(hess, grad, rcond=None)[0]

    lam = np.zeros(a.shape[1])
    w, phi = dual(lam)
    history = [phi]
    it = 0
    resid = relative_residuals(w, a, t)
    while resid.max(initial=0.0) > tol:
        if it >= max_iter:
            j = int(np.argmax(resid))
            raise CalibrationError(
                f"calibration did not converge in {max_iter} iterations; "
                f"worst relative residual {resid[j]:.3e} on constraint {keep[j]}"
            )
        it += 1
        grad = w @ a - t
        step = newton(w, grad)
        slope = grad @ step  # minus the squared Newton decrement
        s = 1.0
        if -slope <= 1e-10 * max(abs(phi), 1.0):
            # quadratic-convergence region: the dual objective can no longer
            # resolve the decrease, so take the full step and watch the gradient
            w_new, phi_new = dual(lam + step)
            if not (np.isfinite(phi_new) and np.linalg.norm(w_new @ a - t) < np.linalg.norm(grad)):
                break
        else:
            for _ in range(60):
                w_new, phi_new = dual(lam + s * step)
                if np.isfinite(phi_new) and phi_new <= phi + 1e-4 * s * slope:
                    break
                s *= 0.5
            else:
                break
        lam = lam + s * step
        w, phi = w_new, phi_new
        history.append(phi)
        resid = relative_residuals(w, a, t)
    max_res = float(resid.max(initial=0.0))
    if max_res <= tol and it > 0:
        # polish to rounding level so that both samples' totals agree far
        # beyond tol; the transport step relies on sum(w1) == sum(w2)
        for _ in range(POLISH_STEPS):
            grad = w @ a - t
            w_new, _ = dual(lam + (step := newton(w, grad)))
            if not np.linalg.norm(w_new @ a - t) < np.linalg.norm(grad):
                break
            lam = lam + step
            w = w_new
        resid = relative_residuals(w, a, t)
        max_res = float(resid.max(initial=0.0))
    if max_res > tol:
        j = int(np.argmax(resid))
        raise CalibrationError(
            f"calibration stalled; worst relative residual {max_res:.3e} on constraint {keep[j]} "
            "(the targets are probably unreachable with positive weights)"
        )
    if dropped:
        # a dropped column is only harmless if its target is implied by the others
        full = relative_residuals(w, design, targets)
        if full.max() > tol:
            j = int(np.argmax(full))
            raise CalibrationError(
                f"calibration constraints are inconsistent: constraint {j} is a linear "
                f"combination of the others but its target is off by {full[j]:.3e} (relative)"
            )
        max_res = float(full.max())
    logger.debug("kl_calibrate: %d iterations, residual %.3e", it, max_res)
    full_lam = np.zeros(design.shape[1])
    full_lam[keep] = lam
    return CalibrationResult(w, full_lam, it, max_res, dropped, tuple(history))


@dataclass(frozen=True)
class HarmonizedPair:
    """Two frames whose calibrated weights share the totals ``X*`` and ``N*``."""

    recipient: SampleFrame
    donor: SampleFrame
    overlap: OverlapInfo
    alpha_star: float
    x_hat_star: np.ndarray
    n_hat_star: float
    w1: np.ndarray
    w2: np.ndarray
    report: dict

    @property
    def x_bar(self) -> np.ndarray:
        return self.x_hat_star / self.n_hat_star


def harmonize_pair(
    recipient: SampleFrame,
    donor: SampleFrame,
    overlap: OverlapInfo | None = None,
    *,
    alpha: float | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> HarmonizedPair:
    """Calibrate recipient and donor weights to the composite totals.

    ``alpha`` defaults to :func:`alpha_star` computed from the sample and
    overlap sizes.
    """
    if overlap is None:
        overlap = detect_overlap(recipient, donor)
    if alpha is None:
        alpha = alpha_star(recipient.n, donor.n, overlap.n12)
    x_star, n_star = composite_totals(recipient, donor, alpha)
    targets = np.append(x_star, n_star)
    c1 = kl_calibrate(
        recipient.weights, augmented_design(recipient.x), targets, tol=tol, max_iter=max_iter
    )
    c2 = kl_calibrate(
        donor.weights, augmented_design(donor.x), targets, tol=tol, max_iter=max_iter
    )
    report = {
        "alpha_star": alpha,
        "n_hat_star": float(n_star),
        "n12": overlap.n12,
        "recipient": {
            "iterations": c1.iterations,
            "max_residual": c1.max_residual,
            "dropped": list(c1.dropped),
        },
        "donor": {
            "iterations": c2.iterations,
            "max_residual": c2.max_residual,
            "dropped": list(c2.dropped),
        },
    }
    w1 = c1.weights.copy()
    w2 = c2.weights.copy()
    for a in (w1, w2, x_star):
        a.setflags(write=False)
    return HarmonizedPair(
        recipient, donor, overlap, float(alpha), x_star, float(n_star), w1, w2, report
    )
