"""Monte Carlo estimation of the separation profile and finite-size cutoff sweeps.

Separation distance equals the tail of the IDLA filling time, so every
estimate here is an estimate of ``P(T > t)`` from independent filling runs.
Replica ``r`` always uses walk indices ``r * 2**32 + 1, ...``; results are a
function of ``(net, seed, replicas)`` alone, whatever the worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import ArwlabError, ParameterError
from .generators import GeneratorSpec, generate
from .greens import statistics
from .idla import PathLayout, filling_times
from .network import Network

DEFAULT_EPS = (0.05, 0.25, 0.5, 0.75, 0.95)
CONFIDENCE = 0.99
MIN_REPLICAS = 100
RUIN_MIN_SITES = 1000
# two-sided tail mass of a 4 sigma normal band
FOUR_SIGMA_ALPHA = 2 * stats.norm.sf(4.0)
SWEEP_FAMILIES = ("wheel", "cycle", "complete", "hypercube", "ball:D", "tree:DEG")


def default_replicas(n: int) -> int:
    return 100_000 if n <= 1000 else 2000


def choose_method(net: Network, method: str = "auto") -> str:
    """``auto`` takes the exact exit sampler on long birth-death paths, literal walks elsewhere."""
    if method in ("walk", "ruin"):
        return method
    if method != "auto":
        raise ParameterError(f"unknown sampling method {method!r}")
    if net.n >= RUIN_MIN_SITES and PathLayout.detect(net) is not None:
        return "ruin"
    return "walk"


def _chunk(args):
    net, seed, start, count, method = args
    return filling_times(net, seed, count, first_replica=start, method=method)


def sample_filling_times(net: Network, seed, replicas: int, method="auto", workers: int = 1) -> np.ndarray:
    """Filling times of replicas ``0..replicas-1`` in replica order."""
    if replicas < 1:
        raise ParameterError("need at least one replica")
    method = choose_method(net, method)
    workers = max(1, int(workers))
    if workers == 1:
        return filling_times(net, seed, replicas, method=method)
    size = math.ceil(replicas / workers)
    jobs = [(net, seed, s, min(size, replicas - s), method) for s in range(0, replicas, size)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_chunk, jobs))
    return np.concatenate(parts)


def clopper_pearson(k: np.ndarray, n: int, level: float = CONFIDENCE):
    """Exact two-sided binomial confidence bounds for ``k`` successes out of ``n``."""
    a = (1.0 - level) / 2
    k = np.asarray(k)
    lo = np.where(k > 0, stats.beta.ppf(a, k, n - k + 1), 0.0)
    hi = np.where(k < n, stats.beta.ppf(1 - a, k + 1, n - k), 1.0)
    return lo, hi


@dataclass
class SurvivalEstimate:
    """Empirical law of the filling time and the derived mixing-time estimates."""

    samples: np.ndarray
    survival: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    tsep: dict
    tsep_ci: dict
    mean: float
    variance: float
    seed: int
    replicas: int
    method: str
    warnings: list = field(default_factory=list)
    runtime: float = 0.0

    def curve_rows(self):
        """``(t, survival, lower, upper)`` for ``t = 0..max T``."""
        for t in range(self.survival.size):
            yield t, float(self.survival[t]), float(self.lower[t]), float(self.upper[t])

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "replicas": self.replicas,
            "method": self.method,
            "mean": self.mean,
            "variance": self.variance,
            "tsep": {str(k): v for k, v in self.tsep.items()},
            "tsep_ci": {str(k): list(v) for k, v in self.tsep_ci.items()},
            "warnings": list(self.warnings),
            "runtime": self.runtime,
        }


def empirical_tsep(samples_sorted: np.ndarray, eps: float) -> int:
    """Smallest ``t`` with ``#{T > t} <= eps * R``."""
    R = samples_sorted.size
    allowed = math.floor(eps * R + 1e-9)
    if allowed >= R:
        return 0
    return int(samples_sorted[R - allowed - 1])


def _quantile_ci(samples_sorted, eps, level=CONFIDENCE):
    # t_sep(eps) is the (1 - eps)-quantile of T; ranks from Binomial(R, 1 - eps)
    R = samples_sorted.size
    a = (1.0 - level) / 2
    lo = int(stats.binom.ppf(a, R, 1.0 - eps))
    hi = int(stats.binom.ppf(1 - a, R, 1.0 - eps)) + 1
    lo = min(max(lo, 1), R)
    hi = min(max(hi, 1), R)
    return int(samples_sorted[lo - 1]), int(samples_sorted[hi - 1])


def summarize(samples, seed, eps_list=DEFAULT_EPS, method="walk") -> SurvivalEstimate:
    T = np.sort(np.asarray(samples, dtype=np.int64))
    R = T.size
    horizon = int(T[-1]) + 1
    counts = R - np.searchsorted(T, np.arange(horizon + 1), side="right")
    lo, hi = clopper_pearson(counts, R)
    warnings = []
    if R < MIN_REPLICAS:
        warnings.append(f"only {R} replicas; mixing-time estimates are imprecise")
    return SurvivalEstimate(
        samples=T,
        survival=counts / R,
        lower=lo,
        upper=hi,
        tsep={e: empirical_tsep(T, e) for e in eps_list},
        tsep_ci={e: _quantile_ci(T, e) for e in eps_list},
        mean=float(T.mean()),
        variance=float(T.var(ddof=1)) if R > 1 else 0.0,
        seed=int(seed),
        replicas=R,
        method=method,
        warnings=warnings,
    )


def estimate_survival(net: Network, seed, replicas: int, eps_list=DEFAULT_EPS, method="auto",
                      workers: int = 1) -> SurvivalEstimate:
    """Estimate ``d_sep(t) = P(T > t)`` from ``replicas`` independent filling runs."""
    net.require_valid()
    start = time.perf_counter()
    method = choose_method(net, method)
    T = sample_filling_times(net, seed, replicas, method, workers)
    est = summarize(T, seed, eps_list, method)
    est.runtime = time.perf_counter() - start
    return est


def band_check(est: SurvivalEstimate, exact: np.ndarray, sigmas: float = 4.0) -> dict:
    """Compare an empirical survival curve with the exact one at every ``t``.

    A point passes when it lies within ``sigmas`` binomial standard
    deviations of the exact value, or when the observed count is not in
    either exact binomial tail of mass ``FOUR_SIGMA_ALPHA / 2`` (the normal
    band degenerates where ``P(T > t)`` is below ``1 / R``).
    """
    R = est.replicas
    horizon = max(exact.size, est.survival.size)
    S = np.zeros(horizon)
    S[:exact.size] = exact
    emp = np.zeros(horizon)
    emp[:est.survival.size] = est.survival
    # beyond the exact horizon the curve is extended by its last value
    if exact.size < horizon:
        S[exact.size:] = exact[-1]
    sd = np.sqrt(S * (1.0 - S) / R)
    dev = np.abs(emp - S)
    normal_ok = dev <= sigmas * sd + 1e-12
    k = np.rint(emp * R).astype(np.int64)
    alpha = FOUR_SIGMA_ALPHA / 2
    upper_tail = stats.binom.sf(k - 1, R, S)
    lower_tail = stats.binom.cdf(k, R, S)
    exact_ok = (upper_tail >= alpha) & (lower_tail >= alpha)
    ok = normal_ok | exact_ok
    z = np.where(sd > 0, dev / np.where(sd > 0, sd, 1.0), np.where(dev > 1e-12, np.inf, 0.0))
    return {"passed": bool(ok.all()), "normal_passed": bool(normal_ok.all()),
            "failures": [int(t) for t in np.flatnonzero(~ok)], "max_z": float(z.max()),
            "points": int(horizon)}


# -- sweeps -------------------------------------------------------------------


def family_spec(family: str, size: int) -> GeneratorSpec:
    """Sweep family names: ``wheel``, ``cycle``, ``complete`` (size = sites),
    ``hypercube`` (size = dimension), ``ball:D`` (size = radius),
    ``tree:DEG`` (size = depth). A trailing ``@degree`` switches the insertion law.
    """
    body, _, ins = family.partition("@")
    ins = ins or "uniform"
    parts = body.split(":")
    head = parts[0]
    if head == "wheel":
        return GeneratorSpec("wheel", {"n": size}, ins)
    if head in ("cycle", "complete"):
        return GeneratorSpec("transitive-minus-vertex", {"base": head, "size": size + 1}, ins)
    if head == "hypercube":
        return GeneratorSpec("transitive-minus-vertex", {"base": "hypercube", "size": size}, ins)
    if head == "ball" and len(parts) == 2:
        return GeneratorSpec("euclidean-ball", {"d": int(parts[1]), "n": size * size}, ins)
    if head == "tree" and len(parts) == 2:
        return GeneratorSpec("tree-ball", {"degree": int(parts[1]), "depth": size}, ins)
    raise ParameterError(f"unknown sweep family {family!r}; expected one of {SWEEP_FAMILIES}")


SWEEP_COLUMNS = ("family", "size", "n", "lambda", "seed", "replicas", "method", "tsep_hat",
                 "tsep_ci_lo", "tsep_ci_hi", "ratio_05", "ratio_25", "window", "window_bound",
                 "t_rel", "L", "R", "tsep_lower", "tsep_upper", "error")


@dataclass
class SweepRow:
    family: str
    size: int
    n: int = 0
    lam: float = 1.0
    seed: int = 0
    replicas: int = 0
    method: str = ""
    tsep_hat: float = float("nan")
    tsep_ci_lo: float = float("nan")
    tsep_ci_hi: float = float("nan")
    ratio_05: float = float("nan")
    ratio_25: float = float("nan")
    window: float = float("nan")
    window_bound: float = float("nan")
    t_rel: float = float("nan")
    L: float = float("nan")
    R: float = float("nan")
    tsep_lower: float = float("nan")
    tsep_upper: float = float("nan")
    error: str = ""
    runtime: float = 0.0

    def values(self) -> list:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return [d[c] for c in SWEEP_COLUMNS]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @property
    def sandwich_ok(self) -> bool:
        """``tsep_lower <= t_sep <= tsep_upper`` with the estimate's confidence interval."""
        return self.tsep_ci_hi >= self.tsep_lower and self.tsep_ci_lo <= self.tsep_upper

    @property
    def window_ok(self) -> bool:
        return self.window <= self.window_bound


def sweep_row(family: str, size: int, lam: float, seed, replicas=None, method="auto", workers=1) -> SweepRow:
    """Build one network of the family, compute its exact statistics and estimate ``t_sep``."""
    row = SweepRow(family, int(size), lam=float(lam), seed=int(seed))
    start = time.perf_counter()
    try:
        net = generate(family_spec(family, size))
        st = statistics(net)
        row.n = net.n
        row.t_rel, row.L, row.R = st.t_rel, st.L, st.R
        row.tsep_lower, row.tsep_upper = st.tsep_lower, st.tsep_upper
        R = replicas or default_replicas(net.n)
        est = estimate_survival(net, seed, R, DEFAULT_EPS, method, workers)
        row.replicas = R
        row.method = est.method
        ts = est.tsep
        row.tsep_hat = ts[0.5]
        row.tsep_ci_lo, row.tsep_ci_hi = est.tsep_ci[0.5]
        row.ratio_05 = ts[0.05] / ts[0.95]
        row.ratio_25 = ts[0.25] / ts[0.75]
        row.window = ts[0.05] - ts[0.95]
        row.window_bound = math.sqrt(8 * st.t_rel * ts[0.5] / 0.05)
    except (ArwlabError, ValueError) as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    row.runtime = time.perf_counter() - start
    return row


def cutoff_sweep(family: str, sizes, lam: float = 1.0, seed=0, replicas=None, method="auto",
                 workers=1) -> list[SweepRow]:
    """One :class:`SweepRow` per size; a failing size is recorded and the sweep goes on.

    The sleep rate only labels the rows: the separation profile does not
    depend on it.
    """
    return [sweep_row(family, s, lam, seed, replicas, method, workers) for s in sizes]


# -- unexpected-win inequality -------------------------------------------------


def win_bound(u: float, v: float) -> float:
    return 2.0 * math.exp(-((math.sqrt(v) - math.sqrt(u)) ** 2) / (1.0 + math.sqrt(2.0)))


def bernoulli_design(mean: float) -> tuple[int, float]:
    """Number of i.i.d. Bernoulli terms and their success probability for a sum with this mean."""
    if mean == 0:
        return 0, 0.0
    m = math.ceil(2 * mean)
    return m, mean / m


@dataclass
class WinReport:
    u: float
    v: float
    trials: int
    empirical: float
    exact: float
    bound: float
    sigma: float
    passed: bool

    @property
    def margin(self) -> float:
        return self.bound - self.empirical


def check_win_inequality(u: float, v: float, trials: int, seed=0) -> WinReport:
    """Monte Carlo ``P(V <= U)`` against ``2 exp(-(sqrt v - sqrt u)^2 / (1 + sqrt 2))``.

    ``U`` and ``V`` are independent sums of i.i.d. Bernoulli variables with
    means ``u`` and ``v`` (``ceil(2 * mean)`` terms each). A sum of i.i.d.
    Bernoulli terms is sampled through its binomial law.
    """
    if not (0 <= u <= v):
        raise ParameterError(f"need 0 <= u <= v, got u={u}, v={v}")
    if trials < 1:
        raise ParameterError("need at least one trial")
    mu, pu = bernoulli_design(u)
    mv, pv = bernoulli_design(v)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x77696E]))
    U = rng.binomial(mu, pu, size=trials) if mu else np.zeros(trials, dtype=np.int64)
    V = rng.binomial(mv, pv, size=trials) if mv else np.zeros(trials, dtype=np.int64)
    emp = float(np.mean(V <= U))
    ks = np.arange(mu + 1)
    pmf_u = stats.binom.pmf(ks, mu, pu) if mu else np.array([1.0])
    cdf_v = stats.binom.cdf(ks, mv, pv) if mv else np.ones(ks.size)
    exact = float(pmf_u @ cdf_v)
    bound = win_bound(u, v)
    sigma = math.sqrt(max(emp * (1 - emp), 0.0) / trials)
    return WinReport(u, v, trials, emp, exact, bound, sigma, emp <= bound + 4 * sigma)
