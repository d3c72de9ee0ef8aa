"""Finite point measures on the real line and the statistics built on them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy import stats


@dataclass(frozen=True, eq=False)
class PointMeasure:
    """Finite multiset of real locations with positive integer multiplicities.

    Stored in canonical form: sorted locations, duplicates merged.
    """

    locations: np.ndarray
    multiplicities: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).ravel()
        mult = np.asarray(self.multiplicities, dtype=np.int64).ravel()
        if loc.shape != mult.shape:
            raise ValueError("locations and multiplicities differ in length")
        if not np.all(np.isfinite(loc)):
            raise ValueError("locations must be finite")
        if np.any(mult < 1):
            raise ValueError("multiplicities must be at least 1")
        if loc.size and not (np.all(loc[1:] > loc[:-1])):
            uniq, inv = np.unique(loc, return_inverse=True)
            mult = np.bincount(inv, weights=mult, minlength=uniq.size).astype(np.int64)
            loc = uniq
        loc.setflags(write=False)
        mult.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "multiplicities", mult)

    @classmethod
    def from_points(cls, points, weights=None) -> PointMeasure:
        points = np.asarray(points, dtype=float).ravel()
        if weights is None:
            weights = np.ones(points.size, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.int64).ravel()
        keep = weights > 0
        return cls(points[keep], weights[keep])

    @classmethod
    def empty(cls) -> PointMeasure:
        return cls(np.zeros(0), np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.locations.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointMeasure):
            return NotImplemented
        return (np.array_equal(self.locations, other.locations)
                and np.array_equal(self.multiplicities, other.multiplicities))

    @property
    def total_mass(self) -> int:
        return int(self.multiplicities.sum())

    def scaled(self, b: float) -> PointMeasure:
        """Every location multiplied by ``b > 0``."""
        if b <= 0:
            raise ValueError("scale factor must be positive")
        return PointMeasure(self.locations * b, self.multiplicities)

    def restricted(self, threshold: float) -> PointMeasure:
        """Points with ``|x| > threshold``."""
        keep = np.abs(self.locations) > threshold
        return PointMeasure(self.locations[keep], self.multiplicities[keep])

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        if not len(self):
            return 0.0
        return float(self.multiplicities @ f(self.locations))

    def to_json(self) -> list[list]:
        return [[float(x), int(m)] for x, m in zip(self.locations, self.multiplicities)]


def superpose(measures: Iterable[PointMeasure]) -> PointMeasure:
    measures = list(measures)
    if not measures:
        return PointMeasure.empty()
    return PointMeasure(np.concatenate([m.locations for m in measures]),
                        np.concatenate([m.multiplicities for m in measures]))


@dataclass(frozen=True)
class HatFunction:
    """``f(x) = height * clip((|x| - zeta) / zeta, 0, 1)``: Lipschitz, zero on ``|x| <= zeta``."""

    zeta: float
    height: float = 1.0

    def __post_init__(self):
        if self.zeta <= 0 or self.height <= 0:
            raise ValueError("zeta and height must be positive")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.height * np.clip((np.abs(x) - self.zeta) / self.zeta, 0.0, 1.0)


def counts_in(pm: PointMeasure, lo: float, hi: float = np.inf) -> int:
    """Total multiplicity with location in ``(lo, hi]``."""
    if not lo < hi:
        raise ValueError("need lo < hi")
    a = np.searchsorted(pm.locations, lo, side="right")
    b = np.searchsorted(pm.locations, hi, side="right")
    return int(pm.multiplicities[a:b].sum())


def laplace_at(pm: PointMeasure, f: Callable) -> float:
    """``exp(-sum m_i f(x_i))``."""
    return float(np.exp(-pm.integrate(f)))


def order_statistics(pm: PointMeasure, k: int) -> list[float]:
    """The ``k`` largest points, repeated by multiplicity."""
    if k < 1:
        raise ValueError("k must be at least 1")
    out: list[float] = []
    for x, m in zip(pm.locations[::-1], pm.multiplicities[::-1]):
        take = min(int(m), k - len(out))
        out.extend([float(x)] * take)
        if len(out) == k:
            break
    return out


def ecdf(samples, grid) -> np.ndarray:
    s = np.sort(np.asarray(samples, dtype=float))
    return np.searchsorted(s, np.asarray(grid, dtype=float), side="right") / s.size


def ks_two_sample(a, b) -> float:
    """Sup distance between the two empirical CDFs (ties allowed)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not a.size or not b.size:
        raise ValueError("both samples must be nonempty")
    return float(stats.ks_2samp(a, b, method="asymp").statistic)


def ks_vs_cdf(samples, cdf: Callable) -> float:
    """Sup of ``|ECDF - cdf|`` for a continuous ``cdf``; both sides of every jump are checked."""
    s = np.asarray(samples, dtype=float)
    if not s.size:
        raise ValueError("need at least one sample")
    return float(stats.kstest(s, cdf).statistic)


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical_pmf(samples) -> dict:
    vals, cnt = np.unique(np.asarray(samples), return_counts=True)
    return {v.item(): c / len(samples) for v, c in zip(vals, cnt)}
