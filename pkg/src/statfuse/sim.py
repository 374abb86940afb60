"""Gaussian Monte Carlo experiment comparing three estimators of Cov(y, z).

A population is generated once with ``y = B_y x + e_y`` and
``z = B_z x + e_z`` (independent unit-normal noise), so that ``y`` and ``z``
are conditionally independent given ``x`` and their cross-covariance is
``B_y Sigma_xx B_z'``. Each replicate draws two simple random samples
without replacement and estimates that matrix with

* ``opt``: the optimal-transport pairwise file,
* ``bal``: one balanced imputation on the recipient sample,
* ``ren``: Renssen's regression-based product.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .balance import build_design, select_balanced
from .distance import cost_matrix
from .errors import ConfigurationError, DomainError, NumericalError, StatfuseError
from .estimate import covariance_yz, fuse_imputed, fuse_pairwise, renssen_covariance
from .frame import SampleFrame, fmt
from .harmonize import harmonize_pair
from .transport import solve_transport

logger = logging.getLogger(__name__)

METHODS = ("opt", "bal", "ren")

SIGMA_XX = ((7.364, 2.579, -0.475), (2.579, 5.694, -0.021), (-0.475, -0.021, 7.864))
B_Y = ((0.2, -0.3, 1.0), (1.2, 0.4, -0.5))
B_Z = ((-0.4, 1.0, -0.3), (-1.4, 0.3, -0.6))
#: cross-covariance printed alongside the parameters above
PRINTED_SIGMA_YZ = ((-3.667, -5.368), (2.627, -9.772))


@dataclass(frozen=True)
class GaussianSpec:
    N: int = 10_000
    mu_x: tuple = (0.0, 0.0, 0.0)
    sigma_xx: tuple = SIGMA_XX
    B_y: tuple = B_Y
    B_z: tuple = B_Z
    n1: int = 600
    n2: int = 3000
    replicates: int = 200
    seed: int = 7
    metric: str = "mahalanobis"
    cost: str = "d"
    truth: str = "model"

    def __post_init__(self):
        sxx = np.asarray(self.sigma_xx, dtype=float)
        p = len(self.mu_x)
        if sxx.shape != (p, p) or not np.allclose(sxx, sxx.T):
            raise DomainError("sigma_xx must be a symmetric p x p matrix")
        if np.linalg.eigvalsh(sxx)[0] <= 0:
            raise DomainError("sigma_xx must be positive definite")
        if np.asarray(self.B_y).shape[1:] != (p,) or np.asarray(self.B_z).shape[1:] != (p,):
            raise DomainError("coefficient matrices must have p columns")
        if not (1 <= self.n1 <= self.N and 1 <= self.n2 <= self.N):
            raise DomainError("sample sizes must lie in [1, N]")
        if self.replicates < 1:
            raise DomainError("replicates must be >= 1")
        if self.truth not in ("model", "population"):
            raise ConfigurationError("truth must be 'model' or 'population'")

    @property
    def model_sigma_yz(self) -> np.ndarray:
        """``B_y Sigma_xx B_z'``, the cross-covariance implied by conditional independence."""
        return np.asarray(self.B_y) @ np.asarray(self.sigma_xx) @ np.asarray(self.B_z).T

    @classmethod
    def from_file(cls, path, **overrides) -> "GaussianSpec":
        """Read ``key = value`` lines; matrices use ``,`` between entries and ``;`` between rows."""
        return cls.from_mapping(parse_key_values(Path(path).read_text(encoding="utf-8")), **overrides)

    @classmethod
    def from_mapping(cls, values: dict[str, str], **overrides) -> "GaussianSpec":
        """Build from string values; ``None`` overrides are ignored."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, raw in values.items():
            if k not in known:
                raise ConfigurationError(f"unknown simulation key {k!r}")
            kw[k] = _coerce(k, raw, getattr(cls(), k))
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _coerce(key, raw, default):
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, str):
            return raw
        if isinstance(default, tuple) and default and isinstance(default[0], tuple):
            return tuple(tuple(float(t) for t in row.split(",")) for row in raw.split(";"))
        if isinstance(default, tuple):
            return tuple(float(t) for t in raw.split(","))
    except ValueError:
        raise ConfigurationError(f"cannot parse value for {key!r}: {raw!r}") from None
    raise ConfigurationError(f"unsupported key {key!r}")


@dataclass(frozen=True)
class Population:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    @property
    def N(self) -> int:
        return len(self.x)

    def finite_sigma_yz(self) -> np.ndarray:
        dy = self.y - self.y.mean(axis=0)
        dz = self.z - self.z.mean(axis=0)
        return dy.T @ dz / self.N


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def generate_population(spec: GaussianSpec, seed) -> Population:
    """Draw ``N`` units of ``(x, y, z)``; ``seed`` is an int or a SeedSequence."""
    rng = _rng(seed)
    sxx = np.asarray(spec.sigma_xx, dtype=float)
    chol = np.linalg.cholesky(sxx)
    p = sxx.shape[0]
    x = np.asarray(spec.mu_x, dtype=float) + rng.standard_normal((spec.N, p)) @ chol.T
    by = np.asarray(spec.B_y, dtype=float)
    bz = np.asarray(spec.B_z, dtype=float)
    y = x @ by.T + rng.standard_normal((spec.N, by.shape[0]))
    z = x @ bz.T + rng.standard_normal((spec.N, bz.shape[0]))
    return Population(x, y, z)


def srswor(N: int, n: int, rng: np.random.Generator):
    """Simple random sample without replacement: sorted unit indices and weights ``N/n``."""
    if not 1 <= n <= N:
        raise DomainError(f"sample size {n} outside [1, {N}]")
    idx = np.sort(rng.choice(N, size=n, replace=False))
    return idx, np.full(n, N / n)


def sample_frame(pop: Population, idx, weights, role: str) -> SampleFrame:
    extra = pop.y[idx] if role == "recipient" else pop.z[idx]
    return SampleFrame(tuple(str(i) for i in idx), pop.x[idx], extra, weights, role)


def mse_decompose(estimates, truth):
    """Squared bias, variance (divisor ``R``) and their sum over replicates."""
    est = np.asarray(estimates, dtype=float)
    if est.ndim == 0 or len(est) == 0:
        raise DomainError("no estimates to decompose")
    truth = np.asarray(truth, dtype=float)
    mean = est.mean(axis=0)
    bias2 = (mean - truth) ** 2
    var = ((est - mean) ** 2).mean(axis=0)
    return bias2, var, bias2 + var


def run_replicate(pop: Population, spec: GaussianSpec, seed) -> dict[str, np.ndarray]:
    """One replicate: draw both samples, harmonize, match and estimate."""
    rng = _rng(seed)
    i1, v1 = srswor(pop.N, spec.n1, rng)
    i2, v2 = srswor(pop.N, spec.n2, rng)
    imp_seed = int(rng.integers(2**63))
    rec = sample_frame(pop, i1, v1, "recipient")
    don = sample_frame(pop, i2, v2, "donor")
    pair = harmonize_pair(rec, don)
    cost = cost_matrix(pair, spec.metric, spec.cost)
    plan = solve_transport(cost, pair)
    opt = covariance_yz(fuse_pairwise(plan, rec, don)).value
    outcome = select_balanced(build_design(plan, rec, don), imp_seed)
    bal = covariance_yz(fuse_imputed(outcome, plan, rec, don)).value
    ren = renssen_covariance(pair).value
    return {"opt": opt, "bal": bal, "ren": ren}


@dataclass
class McReport:
    truth: np.ndarray
    bias2: dict
    variance: dict
    mse: dict
    mean: dict
    replicates: int
    failures: int = 0
    meta: dict = field(default_factory=dict)

    def rows(self):
        for m in self.bias2:
            r, c = self.truth.shape
            for i in range(r):
                for j in range(c):
                    yield (m, i + 1, j + 1, self.bias2[m][i, j], self.variance[m][i, j],
                           self.mse[m][i, j])

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["method", "cell_row", "cell_col", "bias2", "variance", "mse"])
            for m, i, j, b, v, e in self.rows():
                wr.writerow([m, i, j, fmt(b), fmt(v), fmt(e)])

    @classmethod
    def from_estimates(cls, estimates: dict, truth, **kw) -> "McReport":
        b, v, e, mu = {}, {}, {}, {}
        for m, est in estimates.items():
            b[m], v[m], e[m] = mse_decompose(est, truth)
            mu[m] = np.mean(est, axis=0)
        return cls(np.asarray(truth, dtype=float), b, v, e, mu, len(next(iter(estimates.values()))), **kw)


def _worker(args):
    pop, spec, seed = args
    try:
        return run_replicate(pop, spec, seed)
    except (StatfuseError, np.linalg.LinAlgError) as exc:
        return exc


def run_monte_carlo(spec: GaussianSpec, *, n_jobs: int = 1, progress=None) -> McReport:
    """Run ``spec.replicates`` replicates and decompose each method's MSE.

    Replicate ``r`` draws from its own Philox substream spawned from
    ``spec.seed``, so results do not depend on ``n_jobs`` or scheduling.
    More than 1% failed replicates aborts the run.
    """
    root = np.random.SeedSequence(spec.seed)
    pop_seq, rep_root = root.spawn(2)
    pop = generate_population(spec, pop_seq)
    seeds = rep_root.spawn(spec.replicates)
    truth = spec.model_sigma_yz if spec.truth == "model" else pop.finite_sigma_yz()

    tasks = ((pop, spec, s) for s in seeds)
    if n_jobs == 1:
        results = map(_worker, tasks)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=n_jobs)
        results = pool.map(_worker, tasks, chunksize=max(1, spec.replicates // (4 * n_jobs)))
    estimates = {m: [] for m in METHODS}
    failures = 0
    try:
        for r, res in enumerate(results):
            if isinstance(res, Exception):
                failures += 1
                logger.warning("replicate %d failed: %s", r, res)
                if failures > 0.01 * spec.replicates:
                    raise NumericalError(
                        f"{failures} of {r + 1} replicates failed (limit 1%); last error: {res}"
                    )
                continue
            for m in METHODS:
                estimates[m].append(res[m])
            if progress is not None:
                progress(r + 1, spec.replicates)
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    return McReport.from_estimates(
        {m: np.array(v) for m, v in estimates.items()}, truth, failures=failures,
        meta={"N": spec.N, "n1": spec.n1, "n2": spec.n2, "seed": spec.seed,
              "metric": spec.metric, "cost": spec.cost, "truth": spec.truth},
    )


def with_overrides(spec: GaussianSpec, **kw) -> GaussianSpec:
    return replace(spec, **{k: v for k, v in kw.items() if v is not None})
