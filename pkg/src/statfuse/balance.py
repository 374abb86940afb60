"""One donor per recipient by stratified balanced sampling on the transport plan.

Every recipient ``k`` is a stratum whose candidates are the donors on its
row of the plan, drawn with probabilities ``q_kl = W_kl / w1_k``. The draw
uses the cube method: a flight phase random walk that keeps every stratum
sum and the weighted ``x``/``z`` totals fixed, then a landing phase that
gives up the auxiliary totals one at a time until each stratum has exactly
one selected donor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InternalError
from .frame import SampleFrame
from .transport import TransportPlan

PRUNE = 1e-12
#: probabilities this close to 0 or 1 are snapped
SNAP = 1e-10


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) for an explicit integer seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class ImputationDesign:
    """Candidate cells, sorted by stratum.

    ``balancing`` holds, per cell, ``w1_k * (x_l, z_l)``: the contribution of
    the cell to the imputed weighted totals if it is selected.
    """

    stratum: np.ndarray
    donor: np.ndarray
    q: np.ndarray
    balancing: np.ndarray
    n_strata: int
    direction: str = "s1"

    @property
    def targets(self) -> np.ndarray:
        return self.q @ self.balancing


@dataclass(frozen=True)
class ImputationOutcome:
    selection: np.ndarray
    residuals: np.ndarray
    targets: np.ndarray
    seed: int | None = None
    direction: str = "s1"


def build_design(
    plan: TransportPlan,
    recipient: SampleFrame,
    donor: SampleFrame,
    *,
    direction: str = "s1",
) -> ImputationDesign:
    """Strata and inclusion probabilities from a transport plan.

    ``direction="s1"`` completes the recipient file (strata = recipients,
    candidates = donors); ``"s2"`` completes the donor file with the roles
    swapped.
    """
    if direction == "s2":
        plan = plan.transpose()
        recipient, donor = donor, recipient
    elif direction != "s1":
        raise ValueError(f"direction must be 's1' or 's2', got {direction!r}")
    w1 = plan.row_sums()
    q = plan.weights / w1[plan.rows]
    keep = q >= PRUNE
    rows, cols, q = plan.rows[keep], plan.cols[keep], q[keep]
    order = np.lexsort((cols, rows))
    rows, cols, q = rows[order], cols[order], q[order]
    sums = np.bincount(rows, q, minlength=len(w1))
    if np.any(sums <= 0):
        raise InternalError(f"stratum {int(np.argmin(sums))} has no candidate donor")
    q = q / sums[rows]
    bal = w1[rows, None] * np.hstack([donor.x[cols], donor.extra[cols]])
    return ImputationDesign(rows, cols, q, bal, len(w1), direction)


def _direction(frac, stratum, bal_frac):
    """Null-space direction over the fractional cells, or None.

    Candidate directions are within-stratum differences ``e_first - e_t``;
    at most ``J + 1`` of them are combined, ``J`` being the number of active
    auxiliary constraints, so that a combination annihilating the auxiliary
    columns exists whenever enough differences are available.
    """
    j = bal_frac.shape[1]
    heads, tails = [], []
    start = 0
    nf = len(frac)
    while start < nf and len(tails) < j + 1:
        s = stratum[frac[start]]
        stop = start + 1
        while stop < nf and stratum[frac[stop]] == s:
            stop += 1
        for t in range(start + 1, stop):
            heads.append(start)
            tails.append(t)
            if len(tails) == j + 1:
                break
        start = stop
    if not tails:
        return None
    heads = np.asarray(heads)
    tails = np.asarray(tails)
    if j == 0:
        coef = np.zeros(len(tails))
        coef[0] = 1.0
    else:
        m = (bal_frac[heads] - bal_frac[tails]).T
        _, sv, vt = np.linalg.svd(m)
        tol = 1e-10 * (sv[0] if sv.size and sv[0] > 0 else 1.0)
        rank = int(np.sum(sv > tol))
        if rank >= len(tails):
            return None
        coef = vt[-1]
    u = np.zeros(nf)
    np.add.at(u, heads, coef)
    np.add.at(u, tails, -coef)
    return u


def _spread(bal_frac, pif, col_scale):
    """Scaled standard deviation each auxiliary total can still move by."""
    return np.sqrt(((bal_frac / col_scale) ** 2 * (pif * (1 - pif))[:, None]).sum(axis=0))


def select_balanced(design: ImputationDesign, seed: int) -> ImputationOutcome:
    """Draw one candidate per stratum with ``E(a_kl) = q_kl``.

    Flight phase: random walk ``pi <- pi + lam * u`` where ``u`` keeps all
    stratum sums and all active auxiliary totals fixed and ``lam`` is chosen
    between the two cube faces with the martingale probabilities. Landing:
    once no such ``u`` exists, the auxiliary column with the smallest
    scaled remaining spread is dropped and the walk resumes. Stratum
    constraints are never dropped.
    """
    rng = make_rng(seed)
    pi = design.q.copy()
    bal = design.balancing
    col_scale = np.abs(design.q[:, None] * bal).sum(axis=0)
    col_scale = np.where(col_scale > 0, col_scale, 1.0)
    active = list(range(bal.shape[1]))
    stratum = design.stratum

    while True:
        pi[pi < SNAP] = 0.0
        pi[pi > 1 - SNAP] = 1.0
        frac = np.nonzero((pi > 0) & (pi < 1))[0]
        if frac.size == 0:
            break
        u = _direction(frac, stratum, bal[np.ix_(frac, active)])
        if u is None:
            if not active:
                raise InternalError("flight phase stuck with stratum constraints only")
            pif = pi[frac]
            key = _spread(bal[np.ix_(frac, active)], pif, col_scale[active])
            active.pop(int(np.argmin(key)))
            continue
        p = pi[frac]
        with np.errstate(divide="ignore", invalid="ignore"):
            up = np.where(u > 0, (1 - p) / u, np.where(u < 0, -p / u, np.inf))
            dn = np.where(u > 0, p / u, np.where(u < 0, (p - 1) / u, np.inf))
        lam1 = up.min()
        lam2 = dn.min()
        if rng.random() < lam2 / (lam1 + lam2):
            pi[frac] = p + lam1 * u
            hit = np.argmin(up)
            pi[frac[hit]] = 1.0 if u[hit] > 0 else 0.0
        else:
            pi[frac] = p - lam2 * u
            hit = np.argmin(dn)
            pi[frac[hit]] = 0.0 if u[hit] > 0 else 1.0

    chosen = pi > 0.5
    counts = np.bincount(stratum[chosen], minlength=design.n_strata)
    if np.any(counts != 1):
        raise InternalError("balanced draw did not select exactly one donor per stratum")
    selection = np.empty(design.n_strata, dtype=np.intp)
    selection[stratum[chosen]] = design.donor[chosen]
    targets = design.targets
    residuals = chosen.astype(float) @ bal - targets
    return ImputationOutcome(selection, residuals, targets, seed, design.direction)


def select_independent(design: ImputationDesign, seed: int) -> ImputationOutcome:
    """Independent categorical draw per stratum (no balancing); a baseline."""
    rng = make_rng(seed)
    selection = np.empty(design.n_strata, dtype=np.intp)
    chosen = np.zeros(len(design.q), dtype=bool)
    bounds = np.searchsorted(design.stratum, np.arange(design.n_strata + 1))
    r = rng.random(design.n_strata)
    for k in range(design.n_strata):
        lo, hi = bounds[k], bounds[k + 1]
        cum = np.cumsum(design.q[lo:hi])
        t = lo + min(int(np.searchsorted(cum, r[k] * cum[-1], side="right")), hi - lo - 1)
        chosen[t] = True
        selection[k] = design.donor[t]
    targets = design.targets
    return ImputationOutcome(
        selection, chosen.astype(float) @ design.balancing - targets, targets, seed, design.direction
    )


def impute_from_outcome(outcome: ImputationOutcome, donor: SampleFrame):
    """Copy ``(x, z)`` of the selected donor into each recipient row."""
    return donor.x[outcome.selection], donor.extra[outcome.selection]
