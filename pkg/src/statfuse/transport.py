"""Optimal-transport matching with forced cells for common units."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _simplex
from .distance import CostMatrix
from .errors import ConfigurationError, DataError, InfeasibleError, InternalError, NumericalError
from .frame import OverlapInfo, fmt
from .harmonize import HarmonizedPair

#: relative mismatch of the two weight totals tolerated before refusing to solve
BALANCE_TOL = 1e-8
#: reduced-cost threshold of the simplex, relative to max(1, max cost)
PRICING_EPS = 1e-11


@dataclass(frozen=True)
class TransportPlan:
    """Sparse matching weights ``W`` over recipient x donor.

    ``rows``, ``cols`` and ``weights`` list every nonzero cell, the forced
    overlap cells included. ``u`` and ``v`` are the dual potentials of the
    reduced problem (NaN for rows/columns exhausted by forced cells, or when
    the plan was loaded without its dual file).
    """

    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    objective: float
    fixed: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    recipient_ids: tuple[str, ...] = ()
    donor_ids: tuple[str, ...] = ()
    iterations: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.w1), len(self.w2)

    @property
    def nnz(self) -> int:
        return len(self.weights)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.rows, self.cols), self.weights)
        return out

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, self.weights, minlength=self.shape[0])

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, self.weights, minlength=self.shape[1])

    def transpose(self) -> "TransportPlan":
        """The same plan seen from the donor side."""
        fixed = self.fixed[:, [1, 0, 2]] if len(self.fixed) else self.fixed
        return TransportPlan(
            self.cols, self.rows, self.weights, self.w2, self.w1, self.objective, fixed,
            self.v, self.u, self.donor_ids, self.recipient_ids, self.iterations,
        )


def solve_balanced(cost, a, b, *, init: str = "vogel", max_iter: int | None = None):
    """Solve a balanced transportation problem exactly.

    Parameters
    ----------
    cost : array, shape (m, n)
    a, b : arrays of shape (m,) and (n,)
        Positive supplies and demands with equal sums (to rounding).
    init : {"vogel", "northwest"}
        Initial basis rule.

    Returns
    -------
    rows, cols, flows : arrays
        The ``m + n - 1`` basic cells (zero flows included).
    u, v : arrays
        Dual potentials, ``u[0] = 0``.
    info : dict
        ``iterations`` and ``degenerate`` pivot counts.
    """
    c = np.ascontiguousarray(cost, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    m, n = c.shape
    if a.shape != (m,) or b.shape != (n,):
        raise ConfigurationError("cost matrix and marginals are not conformable")
    if m == 0 or n == 0:
        raise ConfigurationError("empty transportation problem")
    if not np.all(np.isfinite(c)):
        raise DataError("costs must be finite")
    if init == "vogel":
        ar, ac, af = _simplex.vogel(c, a, b)
    elif init == "northwest":
        ar, ac, af = _simplex.northwest(a, b)
    else:
        raise ConfigurationError(f"unknown initial basis rule {init!r}")
    eps = PRICING_EPS * max(1.0, float(np.abs(c).max()))
    block = max(int(math.sqrt(m * n)), 10)
    status, it, degen, u, v = _simplex.simplex(
        c, a, b, ar, ac, af, eps, max_iter if max_iter is not None else 2**62, block, 10 * (m + n)
    )
    if status == _simplex.STATUS_MAX_ITER:
        raise NumericalError(f"transportation simplex hit the iteration cap ({it})")
    if status != _simplex.STATUS_OPTIMAL:
        raise InternalError("transportation basis is not a spanning tree")
    return ar, ac, af, u, v, {"iterations": int(it), "degenerate": int(degen)}


def _reduced_marginals(w1, w2, overlap: OverlapInfo | None):
    """Assign forced overlap cells and return residual marginals."""
    a = np.array(w1, dtype=float)
    b = np.array(w2, dtype=float)
    fixed = []
    if overlap is not None:
        for k, l in overlap.pairs:
            f = min(w1[k], w2[l])
            fixed.append((k, l, f))
            if w1[k] <= w2[l]:
                a[k] = 0.0
                b[l] = w2[l] - f
            else:
                b[l] = 0.0
                a[k] = w1[k] - f
    if np.any(a < 0) or np.any(b < 0):
        raise InternalError("negative residual marginal after fixing overlap cells")
    return a, b, np.array(fixed, dtype=float).reshape(-1, 3)


def solve_transport(
    cost: CostMatrix | np.ndarray,
    pair: HarmonizedPair,
    overlap: OverlapInfo | None = None,
    *,
    init: str = "vogel",
) -> TransportPlan:
    """Match recipient and donor units by minimizing ``sum W_kl d(k, l)``.

    Row sums of ``W`` equal the calibrated recipient weights, column sums the
    calibrated donor weights. Each common unit gets the forced cell
    ``W_kk = min(w1_k, w2_k)``; the leftover mass of the larger weight goes
    through ordinary cells.
    """
    values = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=float)
    if overlap is None:
        overlap = pair.overlap
    w1 = np.asarray(pair.w1, dtype=float)
    w2 = np.asarray(pair.w2, dtype=float)
    if values.shape != (len(w1), len(w2)):
        raise ConfigurationError(
            f"cost matrix shape {values.shape} does not match samples ({len(w1)}, {len(w2)})"
        )
    t1, t2 = w1.sum(), w2.sum()
    mismatch = abs(t1 - t2) / max(t1, t2)
    if mismatch > BALANCE_TOL:
        raise InfeasibleError(
            f"weight totals differ by {mismatch:.3e} (relative); re-harmonize the samples"
        )

    a, b, fixed = _reduced_marginals(w1, w2, overlap)
    ra = np.nonzero(a > 0)[0]
    cb = np.nonzero(b > 0)[0]
    rows = [fixed[:, 0].astype(np.intp)]
    cols = [fixed[:, 1].astype(np.intp)]
    flows = [fixed[:, 2]]
    u = np.full(len(w1), np.nan)
    v = np.full(len(w2), np.nan)
    iterations = 0
    if len(ra) and len(cb):
        a_r = a[ra]
        b_r = b[cb] * (a_r.sum() / b[cb].sum())
        sub = values[np.ix_(ra, cb)]
        ar, ac, af, ur, vr, info = solve_balanced(sub, a_r, b_r, init=init)
        floor = -1e-9 * max(a_r.max(), b_r.max())
        if af.min() < floor:
            raise InternalError(f"negative basic flow {af.min():.3e}")
        keep = af > 1e-14 * a_r.sum()
        rows.append(ra[ar[keep]])
        cols.append(cb[ac[keep]])
        flows.append(af[keep])
        u[ra] = ur
        v[cb] = vr
        iterations = info["iterations"]
    elif len(ra) or len(cb):
        residual = a.sum() if len(ra) else b.sum()
        if residual > BALANCE_TOL * t1:
            raise InfeasibleError("residual mass on one side only after fixing overlap cells")

    rows = np.concatenate(rows).astype(np.intp)
    cols = np.concatenate(cols).astype(np.intp)
    flows = np.concatenate(flows)
    nz = flows > 0
    rows, cols, flows = rows[nz], cols[nz], flows[nz]
    order = np.lexsort((cols, rows))
    rows, cols, flows = rows[order], cols[order], flows[order]
    objective = float(flows @ values[rows, cols])
    return TransportPlan(
        rows, cols, flows, w1, w2, objective, fixed, u, v,
        pair.recipient.ids, pair.donor.ids, iterations,
    )


@dataclass
class PlanCertificate:
    passed: bool
    violations: list[str]
    max_row_error: float
    max_col_error: float
    min_reduced_cost: float
    max_support_reduced_cost: float
    duality_gap: float
    objective: float

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "violations": self.violations,
            "max_row_error": self.max_row_error,
            "max_col_error": self.max_col_error,
            "min_reduced_cost": self.min_reduced_cost,
            "max_support_reduced_cost": self.max_support_reduced_cost,
            "duality_gap": self.duality_gap,
            "objective": self.objective,
        }


def verify_plan(
    plan: TransportPlan,
    cost: CostMatrix | np.ndarray,
    pair: HarmonizedPair,
    *,
    tol: float = 1e-9,
) -> PlanCertificate:
    """Independently re-check feasibility and optimality of ``plan``.

    Checks nonnegativity, both marginals (relative ``tol`` per unit), the
    forced overlap cells, dual feasibility of the stored potentials
    (reduced costs ``>= -tol * max(1, max cost)``, zero on the support) and
    the duality gap (``tol`` relative to the objective, absolute when the
    objective is near zero).
    """
    values = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=float)
    w1 = np.asarray(pair.w1, dtype=float)
    w2 = np.asarray(pair.w2, dtype=float)
    bad: list[str] = []
    if plan.shape != values.shape:
        bad.append(f"plan shape {plan.shape} differs from cost shape {values.shape}")
        return PlanCertificate(False, bad, np.inf, np.inf, -np.inf, np.inf, np.inf, np.nan)

    if plan.weights.size and plan.weights.min() < 0:
        bad.append(f"negative weight {plan.weights.min():.3e}")
    rerr = np.abs(plan.row_sums() - w1) / w1
    cerr = np.abs(plan.col_sums() - w2) / w2
    if rerr.max() > tol:
        k = int(np.argmax(rerr))
        bad.append(f"row marginal {k} ({plan.recipient_ids[k] if plan.recipient_ids else k}) "
                   f"off by {rerr[k]:.3e} relative")
    if cerr.max() > tol:
        l = int(np.argmax(cerr))
        bad.append(f"column marginal {l} ({plan.donor_ids[l] if plan.donor_ids else l}) "
                   f"off by {cerr[l]:.3e} relative")

    dense = plan.dense()
    a, b, fixed = _reduced_marginals(w1, w2, pair.overlap)
    for k, l, f in fixed:
        k, l = int(k), int(l)
        if abs(dense[k, l] - f) > tol * f:
            bad.append(f"forced cell ({k}, {l}) carries {dense[k, l]!r}, expected {f!r}")

    objective = float(plan.weights @ values[plan.rows, plan.cols])
    scale = max(1.0, float(np.abs(values).max()))
    free = dense.copy()
    if len(fixed):
        free[fixed[:, 0].astype(int), fixed[:, 1].astype(int)] -= fixed[:, 2]
    ra = np.nonzero(a > 0)[0]
    cb = np.nonzero(b > 0)[0]
    min_rc, max_supp_rc, gap = 0.0, 0.0, 0.0
    outside = np.abs(free).copy()
    outside[np.ix_(ra, cb)] = 0.0
    if outside.max(initial=0.0) > tol * max(w1.max(), w2.max()):
        bad.append("plan uses cells outside the reduced problem")
    if len(ra) and len(cb):
        if plan.u is None or plan.v is None or np.isnan(plan.u[ra]).any() or np.isnan(plan.v[cb]).any():
            bad.append("dual potentials unavailable; optimality not certified")
            min_rc = max_supp_rc = gap = np.nan
        else:
            rc = values[np.ix_(ra, cb)] - plan.u[ra][:, None] - plan.v[cb][None, :]
            min_rc = float(rc.min())
            supp = free[np.ix_(ra, cb)] > 0
            max_supp_rc = float(np.abs(rc[supp]).max(initial=0.0))
            primal = float((free[np.ix_(ra, cb)] * values[np.ix_(ra, cb)]).sum())
            dual = float(a[ra] @ plan.u[ra] + b[cb] @ plan.v[cb])
            gap = abs(primal - dual)
            if min_rc < -tol * scale:
                i, j = np.unravel_index(np.argmin(rc), rc.shape)
                bad.append(f"reduced cost {min_rc:.3e} at cell ({ra[i]}, {cb[j]})")
            if max_supp_rc > tol * scale:
                bad.append(f"complementary slackness violated by {max_supp_rc:.3e}")
            if gap > tol * max(abs(objective), 1.0):
                bad.append(f"duality gap {gap:.3e}")
    return PlanCertificate(
        not bad, bad, float(rerr.max(initial=0.0)), float(cerr.max(initial=0.0)),
        min_rc, max_supp_rc, gap, objective,
    )


def calibration_preservation(plan: TransportPlan, pair: HarmonizedPair) -> tuple[np.ndarray, np.ndarray]:
    """``sum W x_k`` and ``sum W x_l`` over the plan; both should equal ``X*``."""
    via_rec = plan.weights @ pair.recipient.x[plan.rows]
    via_don = plan.weights @ pair.donor.x[plan.cols]
    return via_rec, via_don


# --- serialization -----------------------------------------------------------


def duals_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".duals.csv")


def save_plan(plan: TransportPlan, path, *, with_duals: bool = True) -> None:
    """Write the plan as ``recipient_id,donor_id,weight`` triplets.

    Dual potentials go to a sibling ``<stem>.duals.csv`` so that a stored plan
    can be re-certified later.
    """
    if not plan.recipient_ids or not plan.donor_ids:
        raise ConfigurationError("plan carries no unit identifiers")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["recipient_id", "donor_id", "weight"])
        for k, l, w in zip(plan.rows, plan.cols, plan.weights):
            wr.writerow([plan.recipient_ids[k], plan.donor_ids[l], fmt(w)])
    if with_duals and plan.u is not None and plan.v is not None:
        with duals_path(path).open("w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["side", "id", "potential"])
            for i, val in zip(plan.recipient_ids, plan.u):
                wr.writerow(["recipient", i, "" if np.isnan(val) else fmt(val)])
            for i, val in zip(plan.donor_ids, plan.v):
                wr.writerow(["donor", i, "" if np.isnan(val) else fmt(val)])


def load_plan(
    path,
    recipient_ids,
    donor_ids,
    *,
    pair: HarmonizedPair | None = None,
    cost: CostMatrix | np.ndarray | None = None,
) -> TransportPlan:
    """Read a plan written by :func:`save_plan`.

    Without ``pair`` the marginal targets are taken from the plan's own row
    and column sums.
    """
    recipient_ids = tuple(recipient_ids)
    donor_ids = tuple(donor_ids)
    rpos = {i: k for k, i in enumerate(recipient_ids)}
    dpos = {i: k for k, i in enumerate(donor_ids)}
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"file not found: {path}")
    rows, cols, ws = [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"recipient_id", "donor_id", "weight"} - set(reader.fieldnames or ())
        if missing:
            raise ConfigurationError(f"{path}: missing columns {sorted(missing)}")
        for r, rec in enumerate(reader, start=1):
            try:
                rows.append(rpos[rec["recipient_id"].strip()])
                cols.append(dpos[rec["donor_id"].strip()])
            except KeyError as exc:
                raise DataError(f"row {r}: unknown unit id {exc.args[0]!r}") from None
            w = float(rec["weight"])
            if not (math.isfinite(w) and w >= 0):
                raise DataError(f"row {r}: weight must be finite and >= 0")
            ws.append(w)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    ws = np.asarray(ws, dtype=float)
    if pair is not None:
        w1, w2 = np.asarray(pair.w1), np.asarray(pair.w2)
        overlap = pair.overlap
        fixed = _reduced_marginals(w1, w2, overlap)[2]
    else:
        w1 = np.bincount(rows, ws, minlength=len(recipient_ids))
        w2 = np.bincount(cols, ws, minlength=len(donor_ids))
        common = [(rpos[i], dpos[i]) for i in recipient_ids if i in dpos]
        fixed = np.array([(k, l, min(w1[k], w2[l])) for k, l in common], dtype=float).reshape(-1, 3)
    u = v = None
    dp = duals_path(path)
    if dp.exists():
        u = np.full(len(recipient_ids), np.nan)
        v = np.full(len(donor_ids), np.nan)
        with dp.open(newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                val = float(rec["potential"]) if rec["potential"] else np.nan
                if rec["side"] == "recipient":
                    u[rpos[rec["id"]]] = val
                else:
                    v[dpos[rec["id"]]] = val
    objective = np.nan
    if cost is not None:
        values = cost.values if isinstance(cost, CostMatrix) else np.asarray(cost)
        objective = float(ws @ values[rows, cols])
    return TransportPlan(rows, cols, ws, w1, w2, objective, fixed, u, v, recipient_ids, donor_ids)
