"""Direct sampling of the limiting Cox cluster process and the quantities
derived from it: kappa, the limit law of the scaled maximum, and the limit
Laplace functional.

A limit sample is built from independent clusters. Each cluster has a size
``G``, integer multiplicities ``T_1..T_G`` and a point ``xi`` of the limit
measure; it contributes ``sum_k T_k`` point masses at ``s * xi_k`` with the
random scale ``s = (W / (rho - 1)) ** (1 / alpha)``. The limit measure has
infinite mass near the origin, so only clusters whose point has a coordinate
of modulus above ``delta`` (before scaling) are drawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from heavybrw.branching import (BranchingModel, GenerationLaw, SpectralData, generation_law_table,
                                require_valid, simulate_counts)
from heavybrw.displacement import DependentRay, IidAxes, JointLaw, limit_rectangle_mass, rectangle_patterns
from heavybrw.pointproc import PointMeasure

DEFAULT_DELTA = 0.05
DEFAULT_RESIDUAL = 1e-6
DEFAULT_CAP = 1 << 15
OVERFLOW_EPS = 1e-12


class TableRangeError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LimitParams:
    """Ingredients of the limit process for one model.

    ``w_samples=None`` means ``W = 1`` (exact for deterministic offspring).
    """

    bmodel: BranchingModel
    joint: JointLaw
    spectral: SpectralData
    g_pmf: np.ndarray               # g_pmf[g] = P(G = g)
    table: tuple[GenerationLaw, ...]  # laws of the heavy-rooted totals, m = 0..m_max
    w_samples: np.ndarray | None = None

    def __post_init__(self):
        if self.w_samples is not None:
            w = np.asarray(self.w_samples, dtype=float)
            if w.size == 0 or np.any(w <= 0):
                raise ValueError("W samples must be positive and nonempty")
            object.__setattr__(self, "w_samples", w)

    @property
    def rho(self) -> float:
        return self.spectral.rho

    @property
    def alpha(self) -> float:
        return self.joint.alpha

    @property
    def beta(self) -> float:
        return self.joint.beta

    @property
    def m_max(self) -> int:
        return len(self.table) - 1

    @property
    def residual(self) -> float:
        """Geometric weight ``P(M > m_max)`` not covered by the table."""
        return self.rho ** (-(self.m_max + 1))

    @property
    def mean_G(self) -> float:
        return float(np.arange(self.g_pmf.size) @ self.g_pmf)

    def w_values(self) -> np.ndarray:
        return np.ones(1) if self.w_samples is None else self.w_samples

    def scale(self, w) -> np.ndarray:
        return (np.asarray(w, dtype=float) / (self.rho - 1.0)) ** (1.0 / self.alpha)

    def max_scale(self) -> float:
        return float(self.scale(self.w_values().max()))


def g_distribution(bmodel: BranchingModel) -> np.ndarray:
    """``P(G = g) = sum_q sigma_q P(Z_1^(q)(heavy) = g)`` as an array over ``g``."""
    sd = bmodel.spectral()
    law = bmodel.offspring
    heavy = bmodel.heavy
    pmf = np.zeros(law.k_max + 1)
    for q in range(bmodel.Q):
        for g, pr in law.marginal(q, heavy).items():
            pmf[g] += sd.sigma[q] * pr
    return pmf


def table_depth(rho: float, residual: float = DEFAULT_RESIDUAL) -> int:
    """Smallest ``m_max`` with ``P(M > m_max) < residual``."""
    m = int(math.ceil(math.log(1.0 / residual) / math.log(rho))) - 1
    while rho ** (-(m + 1)) >= residual:
        m += 1
    return max(m, 0)


def build_limit_params(bmodel: BranchingModel, joint: JointLaw, w_samples=None,
                       m_max: int | None = None, cap: int = DEFAULT_CAP,
                       residual: float = DEFAULT_RESIDUAL) -> LimitParams:
    sd = require_valid(bmodel)
    if isinstance(joint, DependentRay):
        k_heavy = max(int(v[:, -1].max()) for v in bmodel.offspring.support)
        if k_heavy > joint.max_block:
            raise ValueError(f"up to {k_heavy} heavy children but only {joint.max_block} ray coefficients")
    if m_max is None:
        m_max = table_depth(sd.rho, residual)
    rows = generation_law_table(bmodel, m_max, cap)[bmodel.heavy]
    return LimitParams(bmodel, joint, sd, g_distribution(bmodel), tuple(rows), w_samples)


# ---------------------------------------------------------------------------
# the ingredients G, T and the PRM


def sample_G(params: LimitParams, rng: np.random.Generator, size: int | None = None,
             size_biased: bool = False):
    p = params.g_pmf
    if size_biased:
        p = p * np.arange(p.size)
        p = p / p.sum()
    out = rng.choice(p.size, size=size, p=p)
    return int(out) if size is None else out


def sample_M(params: LimitParams, rng: np.random.Generator, size: int) -> np.ndarray:
    """``P(M = m) = (rho - 1) rho^-(m+1)``; draws beyond the table are redrawn
    when the uncovered weight is below the residual tolerance."""
    p = 1.0 - 1.0 / params.rho
    m = rng.geometric(p, size=size) - 1
    bad = m > params.m_max
    if bad.any() and params.residual >= DEFAULT_RESIDUAL:
        raise TableRangeError(
            f"drew M={int(m[bad].max())} beyond table depth {params.m_max} "
            f"(uncovered weight {params.residual:.2e})")
    while bad.any():
        m[bad] = rng.geometric(p, size=int(bad.sum())) - 1
        bad = m > params.m_max
    return m


def _overflow(law: GenerationLaw) -> float:
    return law.overflow if law.overflow > OVERFLOW_EPS else 0.0


def sample_totals(params: LimitParams, m: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw of the generation-``m[i]`` total of a heavy-rooted tree per entry.

    Rows held exactly by the table are sampled by inversion; rows with mass
    beyond the cap are simulated at count level, which is exact as well.
    """
    m = np.asarray(m, dtype=np.int64)
    out = np.empty(m.size, dtype=np.int64)
    for mv in np.unique(m):
        idx = np.flatnonzero(m == mv)
        law = params.table[mv]
        if _overflow(law) == 0.0:
            cdf = np.cumsum(law.pmf)
            cdf /= cdf[-1]
            out[idx] = np.minimum(np.searchsorted(cdf, rng.random(idx.size), side="right"), law.cap - 1)
        else:
            out[idx] = simulate_counts(params.bmodel, int(mv), idx.size, rng,
                                       root_type=params.bmodel.heavy).sum(axis=1)
    return out


def sample_T(params: LimitParams, count: int, rng: np.random.Generator) -> np.ndarray:
    """``(T_1..T_count)``: i.i.d. given a shared geometric depth ``M``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    m = sample_M(params, rng, 1)
    return sample_totals(params, np.repeat(m, count), rng)


def h_distribution(params: LimitParams) -> tuple[np.ndarray, float]:
    """``P(H = y)`` for ``y < cap`` and the mass at or above the cap (table
    overflow plus the uncovered geometric tail)."""
    rho = params.rho
    pmf = np.zeros(params.table[0].cap)
    for m, law in enumerate(params.table):
        pmf += (rho - 1.0) * rho ** (-(m + 1)) * law.pmf
    return pmf, max(0.0, 1.0 - pmf.sum())


@dataclass(frozen=True)
class PRMSample:
    """Points of the limit measure with max-coordinate modulus above ``delta``.

    For the axes measure each point has one nonzero coordinate, given by
    ``axis`` and ``value``. For the ray measure the point is
    ``coefficients * value`` and ``axis`` is unused (zero).
    """

    value: np.ndarray
    axis: np.ndarray
    delta: float

    def __len__(self) -> int:
        return int(self.value.size)

    def coordinates(self, joint: JointLaw, width: int) -> np.ndarray:
        out = np.zeros((self.value.size, width))
        if isinstance(joint, DependentRay):
            c = joint.ray_coefficients()[:width]
            out[:, :c.size] = self.value[:, None] * c
        else:
            out[np.arange(self.value.size), self.axis] = self.value
        return out


def _two_sided_above(alpha, beta, delta, size, rng) -> np.ndarray:
    mag = delta * (1.0 - rng.random(size)) ** (-1.0 / alpha)
    sgn = np.where(rng.random(size) < beta, 1.0, -1.0)
    return sgn * mag


def sample_prm(joint: JointLaw, delta: float, rng: np.random.Generator, n_axes: int = 1) -> PRMSample:
    """Poisson points of the limit measure restricted to max modulus above ``delta``.

    For the axes measure only the first ``n_axes`` coordinates are kept, each
    carrying mass ``delta^-alpha``.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    alpha, beta = joint.alpha, joint.beta
    if isinstance(joint, IidAxes):
        if n_axes < 1:
            raise ValueError("n_axes must be at least 1")
        count = rng.poisson(n_axes * delta ** (-alpha))
        value = _two_sided_above(alpha, beta, delta, count, rng)
        axis = rng.integers(0, n_axes, size=count)
    elif isinstance(joint, DependentRay):
        count = rng.poisson(delta ** (-alpha))
        value = _two_sided_above(alpha, beta, delta, count, rng)
        axis = np.zeros(count, dtype=np.int64)
    else:
        raise TypeError(f"unsupported joint law {type(joint).__name__}")
    return PRMSample(value, axis, delta)


# ---------------------------------------------------------------------------
# sampling the limit process


@dataclass(frozen=True)
class ClusterSample:
    G: int
    T: np.ndarray
    xi: np.ndarray
    scale: float

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        keep = self.xi != 0
        return self.scale * self.xi[keep], self.T[keep]


@dataclass(frozen=True, eq=False)
class LimitBatch:
    """Many independent limit samples stored flat: point ``j`` belongs to
    sample ``owner[j]``."""

    size: int
    owner: np.ndarray
    locations: np.ndarray
    multiplicities: np.ndarray
    w: np.ndarray
    n_clusters: np.ndarray

    def counts_above(self, x: float) -> np.ndarray:
        sel = self.locations > x
        return np.bincount(self.owner[sel], weights=self.multiplicities[sel],
                           minlength=self.size).astype(np.int64)

    def integrate(self, f: Callable) -> np.ndarray:
        return np.bincount(self.owner, weights=self.multiplicities * f(self.locations),
                           minlength=self.size)

    def laplace(self, f: Callable) -> np.ndarray:
        return np.exp(-self.integrate(f))

    def maxima(self) -> np.ndarray:
        out = np.full(self.size, -np.inf)
        np.maximum.at(out, self.owner, self.locations)
        return out

    def measure(self, i: int) -> PointMeasure:
        sel = self.owner == i
        return PointMeasure.from_points(self.locations[sel], self.multiplicities[sel])


def _draw_w(params: LimitParams, size: int, rng) -> np.ndarray:
    if params.w_samples is None:
        return np.ones(size)
    return params.w_samples[rng.integers(0, params.w_samples.size, size=size)]


def check_truncation(params: LimitParams, delta: float, min_support: float | None,
                     scale_factor: float = 1.0):
    """Discarded points lie within ``delta * scale`` of the origin; refuse to
    sample when that can reach a statistic's support."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if min_support is not None:
        reach = delta * params.max_scale() * scale_factor
        if reach >= min_support:
            raise ValueError(f"truncation reaches {reach:.3g}, not below the statistic support {min_support}")


def sample_limit_batch(params: LimitParams, delta: float, size: int, rng: np.random.Generator,
                       min_support: float | None = None, keep_clusters: bool = False):
    """``size`` independent samples of the limit process.

    Axes measure: a cluster matters only when its nonzero axis falls among
    its first ``G`` coordinates, so the relevant clusters form a Poisson
    number with mean ``E[G] delta^-alpha``, with ``G`` size-biased and the
    axis uniform on ``1..G``. Ray measure: ``delta^-alpha`` clusters on
    average with ``G`` from its own law.
    """
    check_truncation(params, delta, min_support)
    joint = params.joint
    alpha, beta = params.alpha, params.beta
    axes = isinstance(joint, IidAxes)
    w = _draw_w(params, size, rng)
    rate = (params.mean_G if axes else 1.0) * delta ** (-alpha)
    n_cl = rng.poisson(rate, size=size)
    L = int(n_cl.sum())
    owner_cl = np.repeat(np.arange(size), n_cl)
    G = sample_G(params, rng, size=L, size_biased=axes).astype(np.int64)
    value = _two_sided_above(alpha, beta, delta, L, rng)
    M = sample_M(params, rng, L)
    T = sample_totals(params, np.repeat(M, G), rng)
    cl_of_T = np.repeat(np.arange(L), G)
    k_of_T = np.arange(T.size) - np.repeat(np.cumsum(G) - G, G)
    if axes:
        axis = (rng.random(L) * G).astype(np.int64)
        sel = k_of_T == axis[cl_of_T]
        loc = value[cl_of_T[sel]]
        mult = T[sel]
        owner = owner_cl[cl_of_T[sel]]
    else:
        c = joint.ray_coefficients()
        if G.size and G.max() > c.size:
            raise ValueError(f"cluster of size {G.max()} exceeds {c.size} ray coefficients")
        loc = value[cl_of_T] * c[k_of_T]
        mult = T
        owner = owner_cl[cl_of_T]
    s = params.scale(w)
    loc = loc * s[owner]
    batch = LimitBatch(size, owner, loc, mult, w, n_cl)
    if not keep_clusters:
        return batch
    starts = np.cumsum(G) - G
    clusters = []
    for j in range(L):
        xi = np.zeros(G[j])
        if axes:
            xi[axis[j]] = value[j]
        else:
            xi[:] = value[j] * joint.ray_coefficients()[:G[j]]
        clusters.append(ClusterSample(int(G[j]), T[starts[j]:starts[j] + G[j]].copy(), xi,
                                      float(s[owner_cl[j]])))
    return batch, clusters


def sample_N_star(params: LimitParams, delta: float, rng: np.random.Generator,
                  min_support: float | None = None, return_clusters: bool = False):
    """One limit sample as a :class:`PointMeasure`."""
    out = sample_limit_batch(params, delta, 1, rng, min_support, keep_clusters=return_clusters)
    if return_clusters:
        batch, clusters = out
        return batch.measure(0), clusters
    return out.measure(0)


def sample_iid_batch(params: LimitParams, delta: float, size: int, rng: np.random.Generator,
                     min_support: float | None = None) -> LimitBatch:
    """Limit samples through the one-dimensional representation valid for
    i.i.d. heavy siblings: Poisson points of the marginal limit measure, each
    carrying an independent ``H`` multiplicity, scaled by
    ``(E[G] W / (rho - 1)) ** (1 / alpha)``."""
    if not isinstance(params.joint, IidAxes):
        raise TypeError("the one-dimensional representation needs i.i.d. heavy siblings")
    factor = params.mean_G ** (1.0 / params.alpha)
    check_truncation(params, delta, min_support, factor)
    w = _draw_w(params, size, rng)
    n_pts = rng.poisson(delta ** (-params.alpha), size=size)
    L = int(n_pts.sum())
    owner = np.repeat(np.arange(size), n_pts)
    value = _two_sided_above(params.alpha, params.beta, delta, L, rng)
    H = sample_totals(params, sample_M(params, rng, L), rng)
    loc = value * (params.scale(w) * factor)[owner]
    return LimitBatch(size, owner, loc, H, w, n_pts)


def sample_cluster_multiplicities(params: LimitParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Multiplicity of the single nonzero point of ``size`` relevant clusters
    (axes measure only)."""
    if not isinstance(params.joint, IidAxes):
        raise TypeError("single-point clusters need the axes measure")
    G = sample_G(params, rng, size=size, size_biased=True).astype(np.int64)
    M = sample_M(params, rng, size)
    T = sample_totals(params, np.repeat(M, G), rng)
    axis = (rng.random(size) * G).astype(np.int64)
    return T[np.cumsum(G) - G + axis]


# ---------------------------------------------------------------------------
# closed-form and Monte Carlo functionals


def kappa_lambda(params: LimitParams, method: str = "enumerate") -> float:
    """The constant in the limit law of the scaled maximum.

    ``method="enumerate"`` sums limit-measure masses of all rectangles with
    at least one coordinate above 1; ``"closed"`` uses the family formula.
    """
    joint, rho = params.joint, params.rho
    if method == "closed":
        if isinstance(joint, IidAxes):
            return joint.beta * params.mean_G / (rho - 1.0)
        if isinstance(joint, DependentRay):
            return joint.beta / (rho - 1.0)
        raise TypeError(f"unsupported joint law {type(joint).__name__}")
    if method != "enumerate":
        raise ValueError(f"unknown method {method!r}")
    total = 0.0
    for g in np.flatnonzero(params.g_pmf):
        total += params.g_pmf[g] * sum(limit_rectangle_mass(joint, pat) for pat in rectangle_patterns(int(g)))
    return total / (rho - 1.0)


def limit_max_cdf(params: LimitParams, x, kappa: float | None = None) -> np.ndarray | float:
    """``E exp(-kappa W x^-alpha)``, averaged over the W source."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0):
        raise ValueError("x must be positive")
    k = kappa_lambda(params) if kappa is None else kappa
    w = params.w_values()
    val = np.exp(-k * np.multiply.outer(xa ** (-params.alpha), w)).mean(axis=-1)
    return float(val) if np.ndim(x) == 0 else val


@dataclass(frozen=True)
class LaplaceEstimate:
    value: float
    se: float
    phi: float
    phi_se: float


def laplace_functional_limit(params: LimitParams, f: Callable, zeta: float, n_mc: int,
                             rng: np.random.Generator) -> LaplaceEstimate:
    """Monte Carlo value of ``E exp(-N_*(f))`` for ``f`` vanishing on ``|x| <= zeta``.

    The inner limit-measure integral ``phi`` is estimated with ``n_mc`` draws
    restricted to the support of ``f``; the outer average over ``W`` is
    exact for the W source. The standard error comes from ``phi`` by the
    delta method.
    """
    if zeta <= 0:
        raise ValueError("the support of f must stay away from 0")
    joint, alpha = params.joint, params.alpha
    mass = zeta ** (-alpha)
    y = _two_sided_above(alpha, params.beta, zeta, n_mc, rng)
    if isinstance(joint, IidAxes):
        H = sample_totals(params, sample_M(params, rng, n_mc), rng)
        vals = params.mean_G * mass * (1.0 - np.exp(-H * f(y)))
    else:
        G = sample_G(params, rng, size=n_mc).astype(np.int64)
        M = sample_M(params, rng, n_mc)
        T = sample_totals(params, np.repeat(M, G), rng)
        cl = np.repeat(np.arange(n_mc), G)
        k = np.arange(T.size) - np.repeat(np.cumsum(G) - G, G)
        s = np.bincount(cl, weights=T * f(y[cl] * joint.ray_coefficients()[k]), minlength=n_mc)
        vals = mass * (1.0 - np.exp(-s))
    phi = float(vals.mean())
    phi_se = float(vals.std(ddof=1) / math.sqrt(n_mc))
    w = params.w_values()
    c = w / (params.rho - 1.0)
    e = np.exp(-c * phi)
    value = float(e.mean())
    se = float(abs((c * e).mean()) * phi_se)
    return LaplaceEstimate(value, se, phi, phi_se)
