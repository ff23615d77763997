"""Covariance math for inter-snippet correlation.

Tuple-level correlation uses a squared-exponential kernel per numeric
dimension and set intersection per categorical dimension. Aggregate
answers are integrals of tuples over predicate regions, so snippet
covariances reduce to closed-form double integrals of that kernel:

    cov(avg_i, avg_j) = sigma2 / (|F_i| |F_j|) * prod_k I_k * prod_c |A_i ^ A_j|
    cov(freq_i, freq_j) = sigma2 * prod_k I_k * prod_c |A_i ^ A_j|

where I_k integrates exp(-(x - y)^2 / l_k^2) over the two snippets'
ranges on numeric attribute k, and the categorical factor counts common
in-list values. Observed answers add their squared expected error on
the diagonal. This module also assembles and inverts the full system
used by the inference engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import erf

from .errors import ConfigError, DataError, DegenerateSynopsisError
from .frontend import AggKey, Predicate, QuerySnippet, Range
from .relation import AttributeCatalog

if TYPE_CHECKING:
    from .synopsis import SynopsisEntry

_SQRT_PI = math.sqrt(math.pi)

# widening half-width for point (equality) ranges, as a fraction of the
# attribute's catalog extent
_POINT_WIDEN = 1e-6

# default starting rung of the jitter ladder, as a multiple of mean(diag);
# escalation goes tenfold per rung over _JITTER_RUNGS steps
_JITTER_START = 1e-8
_JITTER_RUNGS = 5

# max-abs tolerance for the inverse residual sigma_inv @ sigma - I
_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class CorrelationParams:
    """Fitted correlation parameters for one aggregate key."""

    g: AggKey
    lengths: tuple[tuple[str, float], ...]  # (numeric dim attr, l) sorted
    sigma2: float
    mu: float

    def __post_init__(self):
        for attr, l in self.lengths:
            if not (l > 0.0 and math.isfinite(l)):
                raise DataError(f"length scale for {attr!r} must be positive "
                                f"and finite, got {l}")
        if self.sigma2 < 0.0:
            raise DataError(f"sigma2 must be >= 0, got {self.sigma2}")

    @classmethod
    def build(cls, g: AggKey, lengths: Mapping[str, float],
              sigma2: float, mu: float) -> "CorrelationParams":
        return cls(g, tuple(sorted(lengths.items())), sigma2, mu)

    @property
    def length_map(self) -> dict[str, float]:
        return dict(self.lengths)


@dataclass(frozen=True, eq=False)
class CovarianceSystem:
    """Everything inference needs, frozen at build time.

    sigma_n already includes the beta^2 diagonal and the jitter that was
    required to invert it; the stored inverse is the inverse of exactly
    that matrix.
    """

    sigma_n: np.ndarray       # (n, n)
    sigma_n_inv: np.ndarray   # (n, n)
    k_n: np.ndarray           # (n,) cross covariances to the new snippet
    kappa_bar2: float         # prior variance of the new snippet's answer
    mu_vec: np.ndarray        # (n + 1,) prior means, new snippet last
    theta_n: np.ndarray       # (n,) observed raw answers
    jitter: float             # epsilon actually added to the diagonal

    @property
    def n(self) -> int:
        return len(self.theta_n)


def double_exp_integral(a: float, b: float, c: float, d: float,
                        z: float) -> float:
    """Integral of exp(-(x - y)^2 / z^2) for x in [a, b], y in [c, d].

    Closed form via the antiderivative
        F(x, y) = -z^2/2 * exp(-(x-y)^2/z^2) - sqrt(pi)/2 * z * (x-y) * erf((x-y)/z)
    evaluated as F(b,d) - F(b,c) - F(a,d) + F(a,c).
    """
    if z <= 0.0:
        raise ValueError(f"kernel length must be positive, got {z}")
    if a > b or c > d:
        raise ValueError("integration bounds must satisfy a <= b and c <= d")
    return float(_F(b - d, z) - _F(b - c, z) - _F(a - d, z) + _F(a - c, z))


def _F(diff, z):
    t = diff / z
    return -0.5 * z * z * np.exp(-t * t) - 0.5 * _SQRT_PI * z * diff * erf(t)


def _integral_grid(lo_r: np.ndarray, hi_r: np.ndarray, lo_c: np.ndarray,
                   hi_c: np.ndarray, z: float) -> np.ndarray:
    """double_exp_integral broadcast over all (row, col) interval pairs."""
    b = hi_r[:, None]
    a = lo_r[:, None]
    d = hi_c[None, :]
    c = lo_c[None, :]
    return _F(b - d, z) - _F(b - c, z) - _F(a - d, z) + _F(a - c, z)


def effective_interval(rng: Range | None,
                       extent: tuple[float, float]) -> tuple[float, float]:
    """Concrete integration interval for one numeric attribute.

    Unconstrained or half-open ranges default to the catalog extent;
    point (equality) ranges widen symmetrically so AVG regions never
    have zero volume; empty ranges collapse to zero width.
    """
    ext_lo, ext_hi = extent
    if rng is None:
        return ext_lo, ext_hi
    lo = rng.lo if math.isfinite(rng.lo) else ext_lo
    hi = rng.hi if math.isfinite(rng.hi) else ext_hi
    if hi < lo:
        mid = 0.5 * (lo + hi)
        return mid, mid
    if hi == lo:
        if rng.lo_strict or rng.hi_strict:
            return lo, lo
        w = (ext_hi - ext_lo) * _POINT_WIDEN
        if w == 0.0:
            w = 1e-12 * max(1.0, abs(lo))
        return lo - w, lo + w
    return lo, hi


def _in_list_members(pred: Predicate, attr: str,
                     domain: tuple[str, ...]) -> np.ndarray:
    values = pred.in_map.get(attr)
    if values is None:
        return np.ones(len(domain))
    wanted = set(values)
    return np.array([1.0 if v in wanted else 0.0 for v in domain])


def region_volume(snippet: QuerySnippet, catalog: AttributeCatalog) -> float:
    """|F|: numeric widths times categorical in-list sizes.

    In-list values outside the cataloged domain select nothing and do
    not count toward the size.
    """
    pred = snippet.predicate
    ranges = pred.range_map
    vol = 1.0
    for attr, extent in catalog.numeric.items():
        lo, hi = effective_interval(ranges.get(attr), extent)
        vol *= hi - lo
    for attr, domain in catalog.categorical.items():
        vol *= float(_in_list_members(pred, attr, domain).sum())
    return vol


def _norms(snippets: Sequence[QuerySnippet], g: AggKey,
           catalog: AttributeCatalog) -> np.ndarray:
    if g.kind == "freq":
        return np.ones(len(snippets))
    vols = np.array([region_volume(s, catalog) for s in snippets])
    if np.any(vols == 0.0):
        raise DataError("zero-volume region for an AVG snippet")
    return 1.0 / vols


def _pure_cov(rows: Sequence[QuerySnippet], cols: Sequence[QuerySnippet],
              params: CorrelationParams,
              catalog: AttributeCatalog) -> np.ndarray:
    """cov(theta_bar_i, theta_bar_j) matrix, no observation noise."""
    out = np.full((len(rows), len(cols)), params.sigma2)
    for attr, z in params.lengths:
        extent = catalog.extent(attr)
        lo_r, hi_r = _interval_arrays(rows, attr, extent)
        lo_c, hi_c = _interval_arrays(cols, attr, extent)
        out *= _integral_grid(lo_r, hi_r, lo_c, hi_c, z)
    for attr, domain in catalog.categorical.items():
        mr = np.stack([_in_list_members(s.predicate, attr, domain)
                       for s in rows])
        mc = np.stack([_in_list_members(s.predicate, attr, domain)
                       for s in cols])
        out *= mr @ mc.T
    u_r = _norms(rows, params.g, catalog)
    u_c = _norms(cols, params.g, catalog)
    return out * np.outer(u_r, u_c)


def _interval_arrays(snippets: Sequence[QuerySnippet], attr: str,
                     extent: tuple[float, float]):
    los, his = [], []
    for s in snippets:
        lo, hi = effective_interval(s.predicate.range_map.get(attr), extent)
        los.append(lo)
        his.append(hi)
    return np.array(los), np.array(his)


def snippet_covariance(qi: QuerySnippet, qj: QuerySnippet,
                       params: CorrelationParams,
                       catalog: AttributeCatalog) -> float:
    """Prior covariance of the two snippets' exact answers."""
    return float(_pure_cov([qi], [qj], params, catalog)[0, 0])


def observed_covariance(i: int, j: int, entries: Sequence["SynopsisEntry"],
                        params: CorrelationParams,
                        catalog: AttributeCatalog) -> float:
    """Covariance of observed answers: the diagonal adds beta_i^2."""
    cov = snippet_covariance(entries[i].snippet, entries[j].snippet,
                             params, catalog)
    if i == j:
        cov += entries[i].beta ** 2
    return cov


def prior_mean_vector(snippets: Sequence[QuerySnippet],
                      params: CorrelationParams,
                      catalog: AttributeCatalog) -> np.ndarray:
    """Per-snippet prior means.

    AVG uses the constant fitted mean; FREQ's fitted mean is a per-unit-
    volume density, so each snippet's mean scales with its region volume.
    """
    if params.g.kind == "avg":
        return np.full(len(snippets), params.mu)
    vols = np.array([region_volume(s, catalog) for s in snippets])
    return params.mu * vols


def build_sigma(entries: Sequence["SynopsisEntry"],
                params: CorrelationParams,
                catalog: AttributeCatalog,
                jitter0: float = _JITTER_START):
    """Observed-answer covariance matrix and its inverse.

    Returns (sigma_n, sigma_n_inv, jitter). The jitter starts at
    jitter0 * mean(diag) and escalates tenfold until the Cholesky solve
    succeeds and the inverse residual passes; after five rungs the
    synopsis is declared degenerate.
    """
    if not entries:
        raise DataError("cannot build a covariance system from no entries")
    if jitter0 <= 0.0:
        raise ConfigError(f"jitter must be positive, got {jitter0}")
    snippets = [e.snippet for e in entries]
    n = len(entries)
    base = _pure_cov(snippets, snippets, params, catalog)
    base = 0.5 * (base + base.T)
    beta2 = np.array([e.beta ** 2 for e in entries])
    base[np.diag_indices(n)] += beta2
    scale = float(np.trace(base)) / n
    if scale <= 0.0:
        raise DegenerateSynopsisError("covariance matrix has zero trace")
    eye = np.eye(n)
    for mult in (jitter0 * 10.0 ** k for k in range(_JITTER_RUNGS)):
        eps = mult * scale
        sigma = base + eps * eye
        try:
            factor = cho_factor(sigma)
        except LinAlgError:
            continue
        inv = cho_solve(factor, eye)
        if np.max(np.abs(inv @ sigma - eye)) <= _RESIDUAL_TOL:
            return sigma, inv, eps
    raise DegenerateSynopsisError(
        f"covariance matrix not invertible after jitter escalation (n={n})"
    )


def build_system(entries: Sequence["SynopsisEntry"],
                 new_snippet: QuerySnippet,
                 params: CorrelationParams,
                 catalog: AttributeCatalog,
                 precomputed=None) -> CovarianceSystem:
    """Assemble the full system for one inference.

    precomputed, when given, is a (sigma_n, sigma_n_inv, jitter) triple
    from an earlier build_sigma over the same entries; the per-query cost
    is then O(n^2).
    """
    if not entries:
        raise DataError("cannot build a covariance system from no entries")
    snippets = [e.snippet for e in entries]
    if precomputed is None:
        sigma, inv, eps = build_sigma(entries, params, catalog)
    else:
        sigma, inv, eps = precomputed
    k_n = _pure_cov(snippets, [new_snippet], params, catalog)[:, 0]
    kappa_bar2 = snippet_covariance(new_snippet, new_snippet, params, catalog)
    mu_vec = np.concatenate([
        prior_mean_vector(snippets, params, catalog),
        prior_mean_vector([new_snippet], params, catalog),
    ])
    theta_n = np.array([e.theta for e in entries])
    return CovarianceSystem(sigma, inv, k_n, kappa_bar2, mu_vec, theta_n, eps)
