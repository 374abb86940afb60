"""Fused files and the joint estimators computed from them.

A plan ``W`` supports five analysis files: the pairwise file over the plan's
support, predicted or imputed values on the recipient sample (``s1``) and
predicted or imputed values on the donor sample (``s2``). Means, contingency
tables and covariances agree exactly across the pairwise and predicted
files; imputed files agree in expectation over the imputation draw.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .balance import ImputationOutcome, build_design, select_balanced
from .distance import CostMatrix, RIDGE, pooled_covariance
from .errors import ConfigurationError
from .frame import SampleFrame
from .harmonize import HarmonizedPair
from .transport import TransportPlan

REPRESENTATIONS = ("pairwise", "predicted_s1", "imputed_s1", "predicted_s2", "imputed_s2")
ALIASES = {"pred-s1": "predicted_s1", "imp-s1": "imputed_s1",
           "pred-s2": "predicted_s2", "imp-s2": "imputed_s2"}


def representation_name(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in REPRESENTATIONS:
        raise ConfigurationError(
            f"unknown representation {name!r}; choose from {', '.join(REPRESENTATIONS)}"
        )
    return name


@dataclass(frozen=True)
class FusedFile:
    """Rows ``(x, x_proxy, y, z, weight)`` of one analysis representation.

    ``x_proxy`` is the partner's ``x`` (pairwise), the prediction ``x_hat``
    or the imputed ``x``. ``y_mean`` and ``z_mean`` are the plan-consistent
    means used to center covariances; ``n_hat`` is the plan total.
    """

    representation: str
    x: np.ndarray
    x_proxy: np.ndarray
    y: np.ndarray
    z: np.ndarray
    weights: np.ndarray
    y_mean: np.ndarray
    z_mean: np.ndarray
    n_hat: float
    recipient_index: np.ndarray | None = None
    donor_index: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class JointEstimate:
    kind: str
    value: np.ndarray
    representation: str
    n_hat: float


def plan_marginals(plan: TransportPlan):
    """Realized row and column sums of ``W``.

    They equal the calibrated weights up to the harmonization tolerance;
    using them instead keeps every representation consistent to rounding.
    """
    return plan.row_sums(), plan.col_sums()


def _transition(plan: TransportPlan, direction: str) -> sp.csr_array:
    """Row-stochastic matrix of ``q_kl = W_kl / w1_k`` (or ``W_kl / w2_l`` for s2)."""
    n1, n2 = plan.shape
    w1, w2 = plan_marginals(plan)
    if direction == "s1":
        q = plan.weights / w1[plan.rows]
        return sp.csr_array((q, (plan.rows, plan.cols)), shape=(n1, n2))
    if direction == "s2":
        q = plan.weights / w2[plan.cols]
        return sp.csr_array((q, (plan.cols, plan.rows)), shape=(n2, n1))
    raise ConfigurationError(f"direction must be 's1' or 's2', got {direction!r}")


def predict(plan: TransportPlan, source: SampleFrame, direction: str = "s1"):
    """Weighted-average predictions ``(x_hat, v_hat)`` for the completed sample.

    For ``s1``, ``source`` is the donor and ``v_hat`` predicts ``z`` on each
    recipient; for ``s2``, ``source`` is the recipient and ``v_hat``
    predicts ``y`` on each donor.
    """
    q = _transition(plan, direction)
    return q @ source.x, q @ source.extra


def _means(plan, recipient, donor):
    w1, w2 = plan_marginals(plan)
    return w1 @ recipient.extra / w1.sum(), w2 @ donor.extra / w2.sum()


def fuse_pairwise(plan: TransportPlan, recipient: SampleFrame, donor: SampleFrame) -> FusedFile:
    ym, zm = _means(plan, recipient, donor)
    return FusedFile(
        "pairwise",
        recipient.x[plan.rows], donor.x[plan.cols],
        recipient.extra[plan.rows], donor.extra[plan.cols],
        np.asarray(plan.weights), ym, zm, plan.total,
        plan.rows, plan.cols,
    )


def fuse_predicted(
    plan: TransportPlan, recipient: SampleFrame, donor: SampleFrame, direction: str = "s1"
) -> FusedFile:
    ym, zm = _means(plan, recipient, donor)
    if direction == "s1":
        xh, zh = predict(plan, donor, "s1")
        return FusedFile(
            "predicted_s1", recipient.x, xh, recipient.extra, zh, plan.row_sums(),
            ym, zm, plan.total, np.arange(recipient.n), None,
        )
    xh, yh = predict(plan, recipient, "s2")
    return FusedFile(
        "predicted_s2", donor.x, xh, yh, donor.extra, plan.col_sums(),
        ym, zm, plan.total, None, np.arange(donor.n),
    )


def fuse_imputed(
    outcome: ImputationOutcome, plan: TransportPlan, recipient: SampleFrame, donor: SampleFrame
) -> FusedFile:
    ym, zm = _means(plan, recipient, donor)
    prov = {"seed": outcome.seed}
    sel = outcome.selection
    if outcome.direction == "s1":
        return FusedFile(
            "imputed_s1", recipient.x, donor.x[sel], recipient.extra, donor.extra[sel],
            plan.row_sums(), ym, zm, plan.total, np.arange(recipient.n), sel, prov,
        )
    return FusedFile(
        "imputed_s2", donor.x, recipient.x[sel], recipient.extra[sel], donor.extra,
        plan.col_sums(), ym, zm, plan.total, sel, np.arange(donor.n), prov,
    )


def fuse(plan, recipient, donor, representation="pairwise", *, seed=None) -> FusedFile:
    """Build any of the five representations; imputed ones need ``seed``."""
    rep = representation_name(representation)
    if rep == "pairwise":
        return fuse_pairwise(plan, recipient, donor)
    direction = rep[-2:]
    if rep.startswith("predicted"):
        return fuse_predicted(plan, recipient, donor, direction)
    if seed is None:
        raise ConfigurationError("imputed representations require a seed")
    design = build_design(plan, recipient, donor, direction=direction)
    return fuse_imputed(select_balanced(design, seed), plan, recipient, donor)


def weighted_mean(fused: FusedFile, block: str = "z") -> np.ndarray:
    if block not in ("y", "z"):
        raise ConfigurationError("block must be 'y' or 'z'")
    v = fused.y if block == "y" else fused.z
    return fused.weights @ v / fused.weights.sum()


def _check_indicator_block(v, name):
    if v.size == 0:
        raise ConfigurationError(f"{name} block is empty")
    if np.any(v < -1e-12) or not np.allclose(v.sum(axis=1), 1.0, rtol=0, atol=1e-9):
        raise ConfigurationError(
            f"{name} block is not a one-hot (or probability) encoding; "
            "one-hot encode categorical variables before building a contingency table"
        )


def contingency(fused: FusedFile) -> JointEstimate:
    """Estimated contingency table ``sum w y z'`` for one-hot ``y`` and ``z``."""
    _check_indicator_block(fused.y, "y")
    _check_indicator_block(fused.z, "z")
    table = (fused.y * fused.weights[:, None]).T @ fused.z
    return JointEstimate("contingency", table, fused.representation, fused.n_hat)


def covariance_yz(fused: FusedFile) -> JointEstimate:
    """Cross-covariance ``(1/N*) sum w (y - Y_bar)(z - Z_bar)'``."""
    dy = fused.y - fused.y_mean
    dz = fused.z - fused.z_mean
    cov = (dy * fused.weights[:, None]).T @ dz / fused.n_hat
    return JointEstimate("covariance", cov, fused.representation, fused.n_hat)


def mean_estimate(fused: FusedFile, block: str = "z") -> JointEstimate:
    return JointEstimate("mean", weighted_mean(fused, block)[None, :], fused.representation,
                         fused.n_hat)


# --- Renssen comparator ------------------------------------------------------


def renssen_beta(x, v, weights) -> np.ndarray:
    """Weighted least-squares coefficients ``(sum w v x')(sum w x x')^-1``.

    A near-singular cross-product matrix gets a small ridge and a warning.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(weights, dtype=float)
    sxx = (x * w[:, None]).T @ x
    svx = (v * w[:, None]).T @ x
    p = sxx.shape[0]
    scale = np.trace(sxx) / p if p else 0.0
    if p and np.linalg.eigvalsh(sxx)[0] <= RIDGE * scale:
        warnings.warn("rank-deficient regressors; adding a ridge", RuntimeWarning, stacklevel=2)
        sxx = sxx + RIDGE * max(scale, 1.0) * np.eye(p)
    return np.linalg.solve(sxx.T, svx.T).T


def renssen_contingency(pair: HarmonizedPair, beta_y, beta_z) -> JointEstimate:
    """``beta_y (a* sum w1 x x' + (1 - a*) sum w2 x x') beta_z'``."""
    a = pair.alpha_star
    x1, x2 = pair.recipient.x, pair.donor.x
    sxx = a * (x1 * pair.w1[:, None]).T @ x1 + (1 - a) * (x2 * pair.w2[:, None]).T @ x2
    return JointEstimate("contingency", beta_y @ sxx @ beta_z.T, "renssen", pair.n_hat_star)


def renssen_covariance(pair: HarmonizedPair) -> JointEstimate:
    """Renssen's product applied to centered variables and divided by ``N*``.

    ``x`` is centered at the composite mean, ``y`` and ``z`` at their
    calibrated means; the result is ``beta_y Omega_xx beta_z'`` with the
    pooled covariance ``Omega_xx``.
    """
    rec, don = pair.recipient, pair.donor
    xbar = pair.x_bar
    ybar = pair.w1 @ rec.extra / pair.w1.sum()
    zbar = pair.w2 @ don.extra / pair.w2.sum()
    by = renssen_beta(rec.x - xbar, rec.extra - ybar, pair.w1)
    bz = renssen_beta(don.x - xbar, don.extra - zbar, pair.w2)
    return JointEstimate("covariance", by @ pooled_covariance(pair) @ bz.T, "renssen",
                         pair.n_hat_star)


# --- diagnostics -------------------------------------------------------------


def _weighted_quantiles(values, weights, probs):
    order = np.argsort(values, kind="mergesort")
    v, w = values[order], weights[order]
    cum = np.cumsum(w) / w.sum()
    idx = np.minimum(np.searchsorted(cum, probs, side="left"), len(v) - 1)
    return v[idx]


def quality_diagnostic(
    plan: TransportPlan,
    recipient: SampleFrame,
    donor: SampleFrame,
    cost: CostMatrix | np.ndarray | None = None,
) -> dict:
    """How well the plan reproduces the recipients' matching variables.

    ``rmse_prediction`` compares ``x_k`` with its prediction ``x_hat_k``
    (weights ``w1``); ``rmse_support`` compares ``x_k`` with every matched
    ``x_l`` (weights ``W_kl``). When ``cost`` is given, weighted quantiles of
    the matched distances are reported too.
    """
    w1 = plan.row_sums()
    xh, _ = predict(plan, donor, "s1")
    rmse_pred = np.sqrt(w1 @ (recipient.x - xh) ** 2 / w1.sum())
    diff = recipient.x[plan.rows] - donor.x[plan.cols]
    rmse_supp = np.sqrt(plan.weights @ diff**2 / plan.weights.sum())
    out = {
        "variables": list(recipient.x_names),
        "rmse_prediction": rmse_pred,
        "rmse_support": rmse_supp,
    }
    if cost is not None:
        values = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost)
        d = values[plan.rows, plan.cols]
        probs = np.array([0.0, 0.25, 0.5, 0.75, 0.9, 1.0])
        out["distance_mean"] = float(plan.weights @ d / plan.weights.sum())
        out["distance_quantiles"] = dict(zip(probs.tolist(), _weighted_quantiles(d, plan.weights, probs).tolist()))
    return out
