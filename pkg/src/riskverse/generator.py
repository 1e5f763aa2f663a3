"""Reference cohort generator with known ground-truth risk coefficients.

Stands in for unavailable patient data: predictors are drawn from configurable
marginals coupled by a Gaussian copula over their rank correlations, lesion
volume is derived from diameter, the binary outcome follows a logistic model
with known coefficients, and CA125 is masked missing-at-random with a rate
driven by the solid-tissue proportion. Everything is deterministic given
(spec, n, seed).

Draw order per generation: copula normals matrix, volume noise, outcome
uniforms, missingness uniforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, stats

from .data_model import Cohort, CohortError, PatientRecord

# Copula column order. lesion_volume is not coupled directly: it is derived
# from lesion_dmax, and the outcome comes from the logistic model.
COPULA_VARS = (
    "age",
    "lesion_dmax",
    "solid_prop_diam",
    "solid_prop_vol",
    "bilateral",
    "papflow",
    "log_ca125",
)


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class TruncNormal:
    lo: float
    hi: float
    mu: float
    sigma: float

    def ppf(self, u: np.ndarray) -> np.ndarray:
        a = (self.lo - self.mu) / self.sigma
        b = (self.hi - self.mu) / self.sigma
        return stats.truncnorm.ppf(u, a, b, loc=self.mu, scale=self.sigma)

    def median(self) -> float:
        return float(self.ppf(np.array([0.5]))[0])


@dataclass(frozen=True)
class LogNormal:
    mu: float
    sigma: float

    def from_normal(self, z: np.ndarray) -> np.ndarray:
        return np.exp(self.mu + self.sigma * z)

    def median(self) -> float:
        return math.exp(self.mu)


@dataclass(frozen=True)
class ZeroOneBeta:
    """Mixture: mass ``p0`` at 0, mass ``p1`` at 1, Beta(a, b) in between."""

    p0: float
    p1: float
    a: float
    b: float

    def ppf(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        mid = 1.0 - self.p0 - self.p1
        inner = (u > self.p0) & (u < 1.0 - self.p1)
        out[u >= 1.0 - self.p1] = 1.0
        if mid > 0:
            out[inner] = stats.beta.ppf((u[inner] - self.p0) / mid, self.a, self.b)
        return out

    def median(self) -> float:
        if self.p0 >= 0.5:
            return 0.0
        if self.p0 + (1.0 - self.p0 - self.p1) <= 0.5:
            return 1.0
        q = (0.5 - self.p0) / (1.0 - self.p0 - self.p1)
        return float(stats.beta.ppf(q, self.a, self.b))

    def expect_logistic(self, intercept: float, slope: float) -> float:
        """E[sigmoid(intercept + slope * X)] under this mixture."""

        def f(x):
            return _sigmoid(intercept + slope * x) * stats.beta.pdf(x, self.a, self.b)

        mid = 1.0 - self.p0 - self.p1
        val = self.p0 * _sigmoid(intercept) + self.p1 * _sigmoid(intercept + slope)
        if mid > 0:
            val += mid * integrate.quad(f, 0.0, 1.0, limit=200)[0]
        return val


@dataclass(frozen=True)
class OutcomeModel:
    """Log-odds coefficients for the data-generating risk model.

    The linear predictor is
    ``intercept + age*AGE + log_size*log(dmax) + solid_prop*PROP_DIAM
    + bilateral*BILAT + papflow*PAP + log_ca125*log(CA125)``.
    """

    intercept: float
    age: float
    log_size: float
    solid_prop: float
    bilateral: float
    papflow: float
    log_ca125: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.intercept,
                self.age,
                self.log_size,
                self.solid_prop,
                self.bilateral,
                self.papflow,
                self.log_ca125,
            ]
        )


@dataclass(frozen=True)
class GeneratorSpec:
    """Everything needed to draw a reference cohort for one population."""

    name: str
    age: TruncNormal
    lesion_dmax: LogNormal
    solid_prop_diam: ZeroOneBeta
    solid_prop_vol: ZeroOneBeta
    bilateral_rate: float
    papflow_rate: float
    ca125_marginal: LogNormal
    spearman: tuple[tuple[float, ...], ...]
    outcome: OutcomeModel
    ca125_missing_rate: float
    # volume = volume_coeff * (pi/6) * (dmax/10)^volume_power * exp(volume_sigma * eps)
    volume_coeff: float
    volume_power: float = 3.0
    volume_sigma: float = 0.35
    # P(CA125 missing) = sigmoid(a + missing_slope * solid_prop_diam), a calibrated.
    # Negative slope: CA125 is ordered more often for solid-looking masses.
    # Kept mild so the observed-CA125 distribution stays close to the marginal.
    missing_slope: float = -0.3
    median_targets: dict = field(default_factory=dict)

    def spearman_matrix(self) -> np.ndarray:
        m = np.asarray(self.spearman, dtype=float)
        if m.shape != (len(COPULA_VARS), len(COPULA_VARS)):
            raise GeneratorError(f"spearman matrix must be {len(COPULA_VARS)}x{len(COPULA_VARS)}")
        if not np.allclose(m, m.T, atol=1e-12):
            raise GeneratorError("spearman matrix must be symmetric")
        if not np.allclose(np.diag(m), 1.0, atol=1e-12):
            raise GeneratorError("spearman matrix must have unit diagonal")
        return m

    def gaussian_correlation(self) -> np.ndarray:
        # Copula correlation that induces the requested Spearman values.
        r = 2.0 * np.sin(np.pi * self.spearman_matrix() / 6.0)
        np.fill_diagonal(r, 1.0)
        return r

    def cholesky(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.gaussian_correlation())
        except np.linalg.LinAlgError:
            raise GeneratorError(
                "rank-correlation matrix is not positive semi-definite"
            ) from None

    def validate(self) -> None:
        if not 0.0 <= self.ca125_missing_rate <= 1.0:
            raise GeneratorError("ca125_missing_rate must lie in [0, 1]")
        for rate_name in ("bilateral_rate", "papflow_rate"):
            if not 0.0 <= getattr(self, rate_name) <= 1.0:
                raise GeneratorError(f"{rate_name} must lie in [0, 1]")
        self.cholesky()

    def analytic_medians(self) -> dict:
        """Marginal medians implied by the configured parameters."""
        dmax_med = self.lesion_dmax.median()
        vol_med = self.volume_coeff * (math.pi / 6.0) * (dmax_med / 10.0) ** self.volume_power
        return {
            "age": self.age.median(),
            "lesion_dmax": dmax_med,
            "lesion_volume": vol_med,
            "solid_prop_diam": self.solid_prop_diam.median(),
            "solid_prop_vol": self.solid_prop_vol.median(),
            "ca125": self.ca125_marginal.median(),
        }

    def missing_intercept(self) -> float:
        """Intercept that hits the configured overall missingness rate."""
        return _solve_missing_intercept(
            self.ca125_missing_rate, self.missing_slope, self.solid_prop_diam
        )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@lru_cache(maxsize=64)
def _solve_missing_intercept_cached(rate, slope, p0, p1, a, b) -> float:
    marg = ZeroOneBeta(p0, p1, a, b)
    if rate <= 0.0:
        return -50.0
    if rate >= 1.0:
        return 50.0
    return optimize.brentq(
        lambda t: marg.expect_logistic(t, slope) - rate, -30.0, 30.0, xtol=1e-12
    )


def _solve_missing_intercept(rate: float, slope: float, marg: ZeroOneBeta) -> float:
    return _solve_missing_intercept_cached(rate, slope, marg.p0, marg.p1, marg.a, marg.b)


# ---------------------------------------------------------------------------
# Marginal solvers: turn median/quartile targets into distribution parameters.
# ---------------------------------------------------------------------------

def solve_truncnorm(lo: float, hi: float, median: float, q1: float, q3: float) -> TruncNormal:
    def resid(params):
        mu, log_sigma = params
        sigma = math.exp(log_sigma)
        a, b = (lo - mu) / sigma, (hi - mu) / sigma
        qs = stats.truncnorm.ppf([0.25, 0.5, 0.75], a, b, loc=mu, scale=sigma)
        return [qs[1] - median, (qs[2] - qs[0]) - (q3 - q1)]

    sol = optimize.root(resid, x0=[median, math.log((q3 - q1) / 1.349)], method="hybr")
    if not sol.success:
        raise GeneratorError(f"truncated-normal solver failed for targets {median}/{q1}/{q3}")
    mu, log_sigma = sol.x
    return TruncNormal(lo=lo, hi=hi, mu=float(mu), sigma=float(math.exp(log_sigma)))


def solve_lognormal(median: float, q1: float, q3: float) -> LogNormal:
    # Median is matched exactly; sigma is the symmetrized fit to both quartiles.
    z75 = stats.norm.ppf(0.75)
    sigma = math.log(q3 / q1) / (2.0 * z75)
    return LogNormal(mu=math.log(median), sigma=sigma)


def solve_zero_one_beta(
    p0: float, p1: float, quantiles: list[tuple[float, float]]
) -> ZeroOneBeta:
    """Solve Beta(a, b) so the mixture hits the (prob, value) quantile targets.

    Targets with value 0 or 1 are carried by the point masses and ignored
    here; with a single interior target the first shape is pinned at a=1.
    """
    mid = 1.0 - p0 - p1
    inner = []
    for prob, value in quantiles:
        if 0.0 < value < 1.0:
            inner.append(((prob - p0) / mid, value))
    for u, _ in inner:
        if not 0.0 < u < 1.0:
            raise GeneratorError(f"point masses p0={p0}, p1={p1} are inconsistent with targets")
    if not inner:
        return ZeroOneBeta(p0, p1, 1.0, 1.0)
    if len(inner) == 1:
        u, x = inner[0]
        # F_{Beta(1,b)}(x) = 1 - (1-x)^b
        b = math.log(1.0 - u) / math.log(1.0 - x)
        return ZeroOneBeta(p0, p1, 1.0, float(b))

    def resid(params):
        a, b = np.exp(params)
        return [stats.beta.cdf(x, a, b) - u for u, x in inner[:2]]

    sol = optimize.root(resid, x0=[0.0, 0.0], method="hybr")
    if not sol.success:
        raise GeneratorError(f"beta solver failed for targets {inner}")
    a, b = np.exp(sol.x)
    return ZeroOneBeta(p0, p1, float(a), float(b))


# ---------------------------------------------------------------------------
# Center presets. Marginal targets follow the published center summaries;
# point masses, correlations, bilateral rates, volume noise, and the
# non-Leuven intercepts are documented modeling choices.
# ---------------------------------------------------------------------------

_DEFAULT_SPEARMAN = (
    #        age   dmax  sol_d sol_v bilat pap   lca125
    (1.00, 0.10, 0.22, 0.20, 0.05, 0.03, 0.18),
    (0.10, 1.00, 0.05, 0.02, 0.10, 0.10, 0.25),
    (0.22, 0.05, 1.00, 0.85, 0.12, 0.40, 0.30),
    (0.20, 0.02, 0.85, 1.00, 0.10, 0.38, 0.28),
    (0.05, 0.10, 0.12, 0.10, 1.00, 0.08, 0.12),
    (0.03, 0.10, 0.40, 0.38, 0.08, 1.00, 0.22),
    (0.18, 0.25, 0.30, 0.28, 0.12, 0.22, 1.00),
)

# Ground-truth log-odds coefficients of the reference risk model (age, log
# diameter in mm, diameter-based solid proportion, bilaterality, papillary
# flow, log CA125). Slopes are shared across centers; intercepts differ.
_REFERENCE_SLOPES = dict(
    age=0.04, log_size=1.05, solid_prop=2.18, bilateral=0.61, papflow=2.47, log_ca125=0.67
)

_CENTER_TARGETS = {
    "leuven": dict(
        age=(18, 88, 51, 36, 63),
        dmax=(71, 46, 114),
        volume_median=101.0,
        ca125=(44, 16, 312),
        sol_d=dict(p0=0.30, p1=0.05, q=[(0.5, 0.21), (0.75, 0.73)]),
        sol_v=dict(p0=0.45, p1=0.02, q=[(0.5, 0.01), (0.75, 0.37)]),
        bilateral_rate=0.25,
        papflow_rate=0.19,
        missing_rate=0.31,
        intercept=-11.20,
    ),
    "malmo": dict(
        age=(18, 96, 49, 35, 63),
        dmax=(71, 52, 102),
        volume_median=106.0,
        ca125=(23, 14, 62),
        sol_d=dict(p0=0.32, p1=0.02, q=[(0.5, 0.09), (0.75, 0.43)]),
        sol_v=dict(p0=0.55, p1=0.005, q=[(0.5, 0.0), (0.75, 0.07)]),
        bilateral_rate=0.22,
        papflow_rate=0.24,
        missing_rate=0.18,
        intercept=-12.20,
    ),
    "rome": dict(
        age=(18, 90, 50, 39, 63),
        dmax=(79, 51, 118),
        volume_median=142.0,
        ca125=(74, 17, 322),
        sol_d=dict(p0=0.28, p1=0.27, q=[(0.5, 0.38), (0.75, 1.0)]),
        sol_v=dict(p0=0.30, p1=0.26, q=[(0.5, 0.04), (0.75, 1.0)]),
        bilateral_rate=0.28,
        papflow_rate=0.24,
        missing_rate=0.53,
        intercept=-13.00,
    ),
}

CENTER_NAMES = tuple(_CENTER_TARGETS)


@lru_cache(maxsize=None)
def center_spec(center: str) -> GeneratorSpec:
    """Build the preset GeneratorSpec for one center (leuven/malmo/rome)."""
    key = center.lower()
    if key not in _CENTER_TARGETS:
        raise GeneratorError(f"unknown center {center!r}, expected one of {CENTER_NAMES}")
    t = _CENTER_TARGETS[key]
    lo, hi, med, q1, q3 = t["age"]
    age = solve_truncnorm(lo, hi, med, q1, q3)
    dmax = solve_lognormal(*t["dmax"])
    ca125 = solve_lognormal(*t["ca125"])
    sol_d = solve_zero_one_beta(t["sol_d"]["p0"], t["sol_d"]["p1"], t["sol_d"]["q"])
    sol_v = solve_zero_one_beta(t["sol_v"]["p0"], t["sol_v"]["p1"], t["sol_v"]["q"])
    power = 3.0
    k = t["volume_median"] / ((math.pi / 6.0) * (t["dmax"][0] / 10.0) ** power)
    spec = GeneratorSpec(
        name=key,
        age=age,
        lesion_dmax=dmax,
        solid_prop_diam=sol_d,
        solid_prop_vol=sol_v,
        bilateral_rate=t["bilateral_rate"],
        papflow_rate=t["papflow_rate"],
        ca125_marginal=ca125,
        spearman=_DEFAULT_SPEARMAN,
        outcome=OutcomeModel(intercept=t["intercept"], **_REFERENCE_SLOPES),
        ca125_missing_rate=t["missing_rate"],
        volume_coeff=k,
        volume_power=power,
        median_targets={
            "age": float(med),
            "lesion_dmax": float(t["dmax"][0]),
            "lesion_volume": float(t["volume_median"]),
            "solid_prop_diam": float(t["sol_d"]["q"][0][1]),
            "solid_prop_vol": float(t["sol_v"]["q"][0][1]),
            "ca125": float(t["ca125"][0]),
        },
    )
    spec.validate()
    return spec


def generate_reference_cohort(spec: GeneratorSpec, n: int, seed: int) -> Cohort:
    """Draw ``n`` records from the reference data-generating process."""
    if n < 0:
        raise GeneratorError(f"n must be >= 0, got {n}")
    spec.validate()
    if n == 0:
        return Cohort(spec.name, [], "reference-generated")
    rng = np.random.default_rng(seed)
    chol = spec.cholesky()
    z = rng.standard_normal((n, len(COPULA_VARS))) @ chol.T
    u = stats.norm.cdf(z)

    age = spec.age.ppf(u[:, 0])
    dmax = spec.lesion_dmax.from_normal(z[:, 1])
    sol_d = spec.solid_prop_diam.ppf(u[:, 2])
    sol_v = spec.solid_prop_vol.ppf(u[:, 3])
    bilateral = (u[:, 4] > 1.0 - spec.bilateral_rate).astype(int)
    papflow = (u[:, 5] > 1.0 - spec.papflow_rate).astype(int)
    log_ca = spec.ca125_marginal.mu + spec.ca125_marginal.sigma * z[:, 6]
    ca125 = np.exp(log_ca)

    vol_noise = rng.standard_normal(n) * spec.volume_sigma
    volume = spec.volume_coeff * (math.pi / 6.0) * (dmax / 10.0) ** spec.volume_power
    volume = volume * np.exp(vol_noise)

    c = spec.outcome
    lp = (
        c.intercept
        + c.age * age
        + c.log_size * np.log(dmax)
        + c.solid_prop * sol_d
        + c.bilateral * bilateral
        + c.papflow * papflow
        + c.log_ca125 * log_ca
    )
    outcome = (rng.uniform(size=n) < _sigmoid(lp)).astype(int)

    a_miss = spec.missing_intercept()
    p_miss = _sigmoid(a_miss + spec.missing_slope * sol_d)
    missing = rng.uniform(size=n) < p_miss

    records = []
    for i in range(n):
        records.append(
            PatientRecord(
                age=float(age[i]),
                lesion_dmax=float(dmax[i]),
                lesion_volume=float(volume[i]),
                solid_prop_diam=float(sol_d[i]),
                solid_prop_vol=float(sol_v[i]),
                ca125=None if missing[i] else float(ca125[i]),
                bilateral=int(bilateral[i]),
                pap_flow=int(papflow[i]),
                outcome=int(outcome[i]),
            )
        )
    return Cohort(spec.name, records, "reference-generated")
