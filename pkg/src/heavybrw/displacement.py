"""Displacement laws, the scaling sequence ``b_n`` and rectangle masses of
the limit measure.

All laws are symmetric in construction: a magnitude ``|X|`` is drawn from a
one-sided family and a sign is attached, positive with probability
``balance``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Mapping, Sequence

import numpy as np

from heavybrw import _fallback

PARETO = "pareto"
LIGHT_PARETO = "light_pareto"
SHIFTED_EXP = "shifted_exponential"
ZERO = "zero"

_CODES = {
    PARETO: _fallback.FAMILY_PARETO,
    LIGHT_PARETO: _fallback.FAMILY_PARETO,
    SHIFTED_EXP: _fallback.FAMILY_SHIFTED_EXP,
    ZERO: _fallback.FAMILY_ZERO,
}


@dataclass(frozen=True)
class TailLaw:
    """One-dimensional displacement law.

    ``index`` is the tail index for the Pareto families and the rate for
    the shifted exponential (``|X| = scale + Exp(rate)``).
    """

    family: str
    index: float = 1.0
    scale: float = 1.0
    balance: float = 0.5

    def __post_init__(self):
        if self.family not in _CODES:
            raise ValueError(f"unknown tail family {self.family!r}")
        if self.family != ZERO and (self.index <= 0 or self.scale <= 0):
            raise ValueError("index and scale must be positive")
        if not 0.0 <= self.balance <= 1.0:
            raise ValueError("balance must lie in [0, 1]")

    @property
    def code(self) -> int:
        return _CODES[self.family]

    @property
    def regularly_varying(self) -> bool:
        return self.family in (PARETO, LIGHT_PARETO)

    @property
    def alpha(self) -> float:
        if not self.regularly_varying:
            raise ValueError(f"{self.family} has no tail index")
        return self.index


def two_sided_pareto(alpha: float, beta: float = 1.0, scale: float = 1.0) -> TailLaw:
    """``P(X > x) = beta (x/scale)^-alpha`` and ``P(X < -x) = (1-beta)(x/scale)^-alpha``."""
    return TailLaw(PARETO, alpha, scale, beta)


def light_pareto(index: float, scale: float = 1.0, balance: float = 0.5) -> TailLaw:
    return TailLaw(LIGHT_PARETO, index, scale, balance)


def shifted_exponential(rate: float, scale: float = 1.0, balance: float = 0.5) -> TailLaw:
    return TailLaw(SHIFTED_EXP, rate, scale, balance)


def zero_law() -> TailLaw:
    return TailLaw(ZERO, 1.0, 1.0, 0.5)


def tail_complement(law: TailLaw, x) -> np.ndarray | float:
    """``P(|X| > x)`` for ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be nonnegative")
    if law.family == ZERO:
        out = np.zeros_like(x)
    elif law.family == SHIFTED_EXP:
        out = np.where(x < law.scale, 1.0, np.exp(-law.index * (x - law.scale)))
    else:
        with np.errstate(divide="ignore"):
            out = np.where(x <= law.scale, 1.0, (x / law.scale) ** (-law.index))
    return float(out) if out.ndim == 0 else out


def magnitudes(law: TailLaw, u: np.ndarray) -> np.ndarray:
    """Inverse-transform magnitudes from uniforms in ``(0, 1]``."""
    return _fallback._magnitudes(law.code, law.index, law.scale, np.asarray(u, dtype=float))


def signs(law: TailLaw, u: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(u) < law.balance, 1.0, -1.0)


# ---------------------------------------------------------------------------
# joint laws for the heavy type


@dataclass(frozen=True)
class IidAxes:
    """Heavy sibling displacements are i.i.d.; the limit measure sits on the axes."""

    marginal: TailLaw

    @property
    def alpha(self) -> float:
        return self.marginal.alpha

    @property
    def beta(self) -> float:
        return self.marginal.balance

    @property
    def max_block(self) -> int | None:
        return None

    def ray_coefficients(self) -> np.ndarray:
        return np.zeros(0)


@dataclass(frozen=True)
class DependentRay:
    """Heavy siblings share one draw: ``X_i = c_i * Y`` with ``1 = c_1 >= c_2 >= ... > 0``."""

    marginal: TailLaw
    coefficients: tuple[float, ...]

    def __post_init__(self):
        c = tuple(float(v) for v in self.coefficients)
        if not c or c[0] != 1.0:
            raise ValueError("ray coefficients must start with 1")
        if any(v <= 0 for v in c) or any(a < b for a, b in zip(c, c[1:])):
            raise ValueError("ray coefficients must be positive and nonincreasing")
        object.__setattr__(self, "coefficients", c)

    @property
    def alpha(self) -> float:
        return self.marginal.alpha

    @property
    def beta(self) -> float:
        return self.marginal.balance

    @property
    def max_block(self) -> int:
        return len(self.coefficients)

    def ray_coefficients(self) -> np.ndarray:
        return np.asarray(self.coefficients, dtype=float)


JointLaw = IidAxes | DependentRay


@dataclass(frozen=True)
class DisplacementModel:
    """``dominated[p]`` is the law of type ``p < Q-1``; ``heavy`` the joint law of type ``Q-1``."""

    dominated: tuple[TailLaw, ...]
    heavy: JointLaw
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "dominated", tuple(self.dominated))
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    @property
    def Q(self) -> int:
        return len(self.dominated) + 1

    def law(self, p: int) -> TailLaw:
        return self.heavy.marginal if p == self.Q - 1 else self.dominated[p]

    def kernel_params(self):
        laws = [self.law(p) for p in range(self.Q)]
        return (np.array([l.code for l in laws], dtype=np.int64),
                np.array([l.index for l in laws], dtype=float),
                np.array([l.scale for l in laws], dtype=float),
                np.array([l.balance for l in laws], dtype=float),
                np.ascontiguousarray(self.heavy.ray_coefficients()))


def sample_blocks(model: DisplacementModel, p: int, n_blocks: int, k: int,
                  rng: np.random.Generator) -> np.ndarray:
    """``n_blocks`` independent displacement blocks of ``k`` type-``p`` siblings."""
    if k < 1:
        raise ValueError("block size must be at least 1")
    law = model.law(p)
    heavy = p == model.Q - 1
    u_mag = 1.0 - rng.random((n_blocks, k))
    u_sign = rng.random((n_blocks, k))
    x = signs(law, u_sign) * magnitudes(law, u_mag)
    if heavy and isinstance(model.heavy, DependentRay):
        if k > model.heavy.max_block:
            raise ValueError(f"block of {k} exceeds {model.heavy.max_block} ray coefficients")
        x = model.heavy.ray_coefficients()[:k] * x[:, :1]
    return x


def sample_displacement_block(model: DisplacementModel, p: int, k: int,
                              rng: np.random.Generator) -> np.ndarray:
    return sample_blocks(model, p, 1, k, rng)[0]


# ---------------------------------------------------------------------------
# scaling sequence


def tail_quantile(law: TailLaw, level: float) -> float:
    """``inf{x : P(|X| > x) <= level}`` for a regularly varying law."""
    if not law.regularly_varying:
        raise ValueError(f"{law.family} is not regularly varying; b_n is undefined")
    if level >= 1.0:
        return law.scale
    return law.scale * level ** (-1.0 / law.index)


def scaling_bn(rho: float, law: TailLaw, n: int) -> float:
    """``b_n = U(rho^n)`` with ``U`` the tail quantile of ``|X|``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if not law.regularly_varying:
        raise ValueError(f"{law.family} is not regularly varying; b_n is undefined")
    return law.scale * rho ** (n / law.index)


@dataclass(frozen=True)
class ScalingSequence:
    rho: float
    law: TailLaw

    def __call__(self, n: int) -> float:
        return scaling_bn(self.rho, self.law, n)


# ---------------------------------------------------------------------------
# limit measure on rectangles


def _nu_mass(alpha: float, beta: float, lo: float, hi: float) -> float:
    """Mass of ``(lo, hi)`` with ``0 < lo`` under the positive half of nu_alpha."""
    if hi <= lo:
        return 0.0
    upper = 0.0 if math.isinf(hi) else hi ** (-alpha)
    return beta * (lo ** (-alpha) - upper)


def limit_rectangle_mass(joint: JointLaw, pattern: Sequence[int], cutoff: float = 1.0) -> float:
    """Limit-measure mass of ``G_{i_1} x ... x G_{i_g} x R x ...``.

    ``G_1 = (cutoff, inf]`` and ``G_0 = [-inf, cutoff)``. The all-zero
    pattern contains a neighbourhood of the origin and has infinite mass.
    """
    pattern = [int(i) for i in pattern]
    g = len(pattern)
    if g < 1 or any(i not in (0, 1) for i in pattern):
        raise ValueError("pattern must be a nonempty 0/1 sequence")
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    ones = sum(pattern)
    if ones == 0:
        return math.inf
    alpha, beta = joint.alpha, joint.beta
    if isinstance(joint, IidAxes):
        return beta * cutoff ** (-alpha) if ones == 1 else 0.0
    c = joint.coefficients
    if g > len(c):
        raise ValueError(f"pattern of length {g} exceeds {len(c)} ray coefficients")
    # with y > 0: c_j y > cutoff  <=>  y > cutoff / c_j
    lo = max(cutoff / c[j] for j in range(g) if pattern[j])
    hi = min((cutoff / c[j] for j in range(g) if not pattern[j]), default=math.inf)
    return _nu_mass(alpha, beta, lo, hi)


def rectangle_patterns(g: int):
    return (p for p in product((0, 1), repeat=g) if any(p))


# ---------------------------------------------------------------------------
# regular-variation diagnostics


def check_regular_variation(model: DisplacementModel, rho: float, n_grid, x_grid) -> dict:
    """Deviation of ``rho^n P(|X| > b_n x)`` from ``x^-alpha`` on a grid, plus
    the dominated-to-heavy tail ratios ``P(|X_p| > b_n) / P(|X_Q| > b_n)``."""
    n_grid = [int(n) for n in n_grid]
    x_grid = [float(x) for x in x_grid]
    if not n_grid or not x_grid:
        raise ValueError("grids must be nonempty")
    lawQ = model.heavy.marginal
    alpha = lawQ.alpha
    rows = []
    for n in n_grid:
        bn = scaling_bn(rho, lawQ, n)
        for x in x_grid:
            dev = abs(rho ** n * tail_complement(lawQ, bn * x) - x ** (-alpha))
            rows.append({"n": n, "x": x, "deviation": float(dev)})
    ratios = {}
    for p, law in enumerate(model.dominated):
        ratios[p] = [
            {"n": n, "ratio": float(tail_complement(law, scaling_bn(rho, lawQ, n))
                                    / tail_complement(lawQ, scaling_bn(rho, lawQ, n)))}
            for n in n_grid
        ]
    return {
        "max_deviation": max(r["deviation"] for r in rows),
        "rows": rows,
        "ratios": ratios,
    }


def law_from_config(block: Mapping, default_alpha: float, gamma: float) -> TailLaw:
    family = block.get("family", LIGHT_PARETO)
    if family == LIGHT_PARETO:
        return light_pareto(float(block.get("index", default_alpha + gamma)),
                            float(block.get("scale", 1.0)), float(block.get("balance", 0.5)))
    if family == PARETO:
        return two_sided_pareto(float(block["alpha"]), float(block.get("beta", 0.5)),
                                float(block.get("scale", 1.0)))
    if family == SHIFTED_EXP:
        return shifted_exponential(float(block["rate"]), float(block.get("scale", 1.0)),
                                   float(block.get("balance", 0.5)))
    if family == ZERO:
        return zero_law()
    raise ValueError(f"unknown displacement family {family!r}")


def displacement_from_config(block: Mapping, Q: int) -> DisplacementModel:
    alpha = float(block["alpha"])
    beta = float(block.get("beta", 1.0))
    gamma = float(block.get("gamma", 1.0))
    heavy_family = block.get("heavy_family", PARETO)
    if heavy_family == ZERO:
        marginal = zero_law()
    else:
        marginal = two_sided_pareto(alpha, beta, float(block.get("scale", 1.0)))
    joint_kind = block.get("joint", "iid")
    if joint_kind == "iid":
        joint = IidAxes(marginal)
    elif joint_kind == "ray":
        joint = DependentRay(marginal, tuple(block["coefficients"]))
    else:
        raise ValueError(f"unknown joint family {joint_kind!r}")
    dom_specs = block.get("dominated") or [{} for _ in range(Q - 1)]
    if len(dom_specs) != Q - 1:
        raise ValueError(f"need {Q - 1} dominated-type laws, got {len(dom_specs)}")
    dominated = tuple(law_from_config(s, alpha, gamma) for s in dom_specs)
    return DisplacementModel(dominated, joint, gamma)
