"""Multi-type Galton-Watson offspring laws and their spectral data.

Types are indexed ``0..Q-1``; the heavy-tailed type is always the last one,
``Q-1``. Every offspring law has finite support, so the ``E[Z log Z]``
moment condition holds automatically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.signal import fftconvolve

PROB_TOL = 1e-12


class ModelError(ValueError):
    """Raised for an offspring law or branching model that fails validation."""


class ConvergenceError(RuntimeError):
    pass


class InsufficientCapError(ValueError):
    """The population cap keeps less than the required share of the mass."""


class PopulationCapExceeded(RuntimeError):
    def __init__(self, population: int, cap: int):
        super().__init__(f"population {population} exceeds cap {cap}")
        self.population = population
        self.cap = cap


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support offspring laws, one per parent type.

    ``support[q]`` is an ``(S_q, Q)`` integer array of offspring-count
    vectors and ``probs[q]`` the matching probabilities.
    """

    support: tuple[np.ndarray, ...]
    probs: tuple[np.ndarray, ...]
    family: str = "table"
    params: object = None

    def __post_init__(self):
        if len(self.support) != len(self.probs) or not self.support:
            raise ModelError("need one support/probability pair per parent type")
        Q = len(self.support)
        for q, (vecs, p) in enumerate(zip(self.support, self.probs)):
            if vecs.ndim != 2 or vecs.shape[1] != Q or vecs.shape[0] != p.shape[0]:
                raise ModelError(f"parent type {q}: support must be (S, {Q}) matching probs")
            if np.any(p < 0):
                raise ModelError(f"parent type {q}: negative probability")
            if abs(p.sum() - 1.0) > PROB_TOL:
                raise ModelError(f"parent type {q}: probabilities sum to {p.sum()!r}")
            if np.any(vecs < 0):
                raise ModelError(f"parent type {q}: negative offspring count")
            vecs.setflags(write=False)
            p.setflags(write=False)

    @property
    def Q(self) -> int:
        return len(self.support)

    @property
    def k_max(self) -> int:
        return int(max(v.max() for v in self.support))

    @classmethod
    def deterministic(cls, vectors) -> OffspringLaw:
        """Every parent of type ``q`` has exactly ``vectors[q]`` children.

        A single flat vector is shared by all parent types.
        """
        arr = np.atleast_2d(np.asarray(vectors, dtype=np.int64))
        Q = arr.shape[1]
        if arr.shape[0] == 1:
            arr = np.repeat(arr, Q, axis=0)
        if arr.shape != (Q, Q):
            raise ModelError(f"deterministic law needs {Q} vectors of length {Q}")
        support = tuple(arr[q:q + 1].copy() for q in range(Q))
        probs = tuple(np.ones(1) for _ in range(Q))
        return cls(support, probs, "deterministic", arr.tolist())

    @classmethod
    def independent(cls, pmfs) -> OffspringLaw:
        """Counts of each child type drawn independently.

        ``pmfs[q][p]`` maps a count to its probability for children of type
        ``p`` from a parent of type ``q``. A bare mapping means ``Q = 1``.
        """
        if isinstance(pmfs, Mapping):
            pmfs = [[pmfs]]
        Q = len(pmfs)
        support, probs = [], []
        for q in range(Q):
            if len(pmfs[q]) != Q:
                raise ModelError(f"parent type {q}: need {Q} per-child-type pmfs")
            vecs = np.zeros((1, 0), dtype=np.int64)
            pr = np.ones(1)
            for p in range(Q):
                ks = np.array([int(k) for k in pmfs[q][p]], dtype=np.int64)
                ps = np.array([float(v) for v in pmfs[q][p].values()])
                if abs(ps.sum() - 1.0) > PROB_TOL:
                    raise ModelError(f"pmf ({q},{p}) sums to {ps.sum()!r}")
                vecs = np.hstack([np.repeat(vecs, len(ks), axis=0),
                                  np.tile(ks, len(vecs))[:, None]])
                pr = np.repeat(pr, len(ks)) * np.tile(ps, len(pr))
            support.append(vecs)
            probs.append(pr)
        norm = [{int(k): float(v) for k, v in row.items()} for rows in pmfs for row in rows]
        return cls(tuple(support), tuple(probs), "independent", norm)

    @classmethod
    def table(cls, rows) -> OffspringLaw:
        """``rows[q]`` is a list of ``(vector, probability)`` pairs."""
        support = tuple(np.array([v for v, _ in r], dtype=np.int64).reshape(len(r), -1) for r in rows)
        probs = tuple(np.array([p for _, p in r], dtype=float) for r in rows)
        params = [[(list(map(int, v)), float(p)) for v, p in r] for r in rows]
        return cls(support, probs, "table", params)

    def marginal(self, q: int, p: int) -> dict[int, float]:
        """Law of the number of type-``p`` children of a type-``q`` parent."""
        out: dict[int, float] = {}
        for k, pr in zip(self.support[q][:, p], self.probs[q]):
            out[int(k)] = out.get(int(k), 0.0) + float(pr)
        return dict(sorted(out.items()))

    def mean_matrix(self) -> np.ndarray:
        return np.array([self.probs[q] @ self.support[q] for q in range(self.Q)])

    def sampling_tables(self):
        """Flattened ``(row_start, cum, vecs)`` used by the kernels."""
        row_start = np.zeros(self.Q + 1, dtype=np.int64)
        row_start[1:] = np.cumsum([len(p) for p in self.probs])
        cums = []
        for p in self.probs:
            c = np.cumsum(p)
            c[-1] = 1.0
            cums.append(c)
        return row_start, np.concatenate(cums), np.ascontiguousarray(np.vstack(self.support))


@dataclass(frozen=True)
class SpectralData:
    M: np.ndarray
    rho: float
    sigma: np.ndarray
    theta: np.ndarray

    @property
    def projector(self) -> np.ndarray:
        return np.outer(self.theta, self.sigma)


@dataclass(frozen=True)
class BranchingModel:
    offspring: OffspringLaw
    root_distribution: np.ndarray = None
    _spectral: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        Q = self.offspring.Q
        pi = self.root_distribution
        if pi is None:
            pi = np.zeros(Q)
            pi[-1] = 1.0
        pi = np.asarray(pi, dtype=float)
        if pi.shape != (Q,) or np.any(pi < 0) or abs(pi.sum() - 1.0) > PROB_TOL:
            raise ModelError(f"root distribution must be a probability vector of length {Q}")
        pi.setflags(write=False)
        object.__setattr__(self, "root_distribution", pi)

    @property
    def Q(self) -> int:
        return self.offspring.Q

    @property
    def heavy(self) -> int:
        return self.offspring.Q - 1

    def spectral(self) -> SpectralData:
        if not self._spectral:
            self._spectral.append(perron_frobenius(self.offspring.mean_matrix()))
        return self._spectral[0]


def perron_frobenius(M, tol: float = 1e-13, max_iter: int = 100_000) -> SpectralData:
    """Perron root and normalised left/right eigenvectors by power iteration.

    The left vector sums to one and ``sigma @ theta == 1``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("mean matrix must be square")
    if np.any(M < 0):
        raise ValueError("mean matrix has negative entries")

    def iterate(A):
        v = np.full(A.shape[0], 1.0 / A.shape[0])
        est = np.inf
        for _ in range(max_iter):
            w = A @ v
            s = w.sum()
            if s <= 0:
                raise ConvergenceError("power iteration collapsed to zero")
            w /= s
            if abs(s - est) <= tol * s and np.max(np.abs(w - v)) <= tol:
                return s, w
            v, est = w, s
        raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")

    rho, theta = iterate(M)
    rho_left, sigma = iterate(M.T)
    if abs(rho - rho_left) > 1e3 * tol * rho:
        raise ConvergenceError("left and right iterations disagree on the Perron root")
    sigma = sigma / sigma.sum()
    theta = theta / (sigma @ theta)
    return SpectralData(M=M, rho=float(rho), sigma=sigma, theta=theta)


def sample_offspring(model: BranchingModel, q: int, rng: np.random.Generator) -> tuple[int, ...]:
    law = model.offspring
    r = rng.choice(len(law.probs[q]), p=law.probs[q])
    return tuple(int(k) for k in law.support[q][r])


def validate_model(model: BranchingModel) -> dict:
    """Check the branching assumptions; returns a JSON-ready report."""
    law = model.offspring
    failures = []
    no_leaf = all(bool(np.all(v >= 1)) for v in law.support)
    if not no_leaf:
        failures.append("leaf in support: some offspring vector has a zero component")
    zlogz = max(k * math.log(k) for v in law.support for k in v.ravel().tolist() if k > 0)
    M = law.mean_matrix()
    positive_regular = bool(np.all(M >= 1))
    if not positive_regular:
        failures.append("mean matrix has entries below 1")
    report = {
        "Q": law.Q,
        "no_leaf": no_leaf,
        "zlogz_bound": float(zlogz),
        "positively_regular": positive_regular,
        "mean_matrix": M.tolist(),
    }
    try:
        sd = model.spectral()
        report.update(rho=sd.rho, sigma=sd.sigma.tolist(), theta=sd.theta.tolist())
        supercritical = sd.rho > 1 + 1e-12
    except (ConvergenceError, ValueError) as exc:
        failures.append(f"spectral data unavailable: {exc}")
        supercritical = False
    report["supercritical"] = supercritical
    if not supercritical and "rho" in report:
        failures.append(f"rho={report['rho']:.6g} is not supercritical")
    report["failures"] = failures
    report["ok"] = not failures
    return report


def require_valid(model: BranchingModel) -> SpectralData:
    report = validate_model(model)
    if not report["ok"]:
        raise ModelError("; ".join(report["failures"]))
    return model.spectral()


# ---------------------------------------------------------------------------
# exact laws of generation totals


@dataclass(frozen=True)
class GenerationLaw:
    """Law of the total population at one generation.

    ``pmf[t]`` is ``P(total == t)`` for ``t < cap``; ``overflow`` holds the
    mass at ``t >= cap``.
    """

    m: int
    pmf: np.ndarray
    overflow: float

    @property
    def cap(self) -> int:
        return len(self.pmf)

    def as_dict(self, atol: float = 0.0) -> dict[int, float]:
        idx = np.flatnonzero(self.pmf > atol)
        return {int(t): float(self.pmf[t]) for t in idx}

    def mean_lower(self) -> float:
        return float(np.arange(self.cap) @ self.pmf)


def _truncated_conv(a: np.ndarray, b: np.ndarray, cap: int) -> np.ndarray:
    la = int(np.flatnonzero(a)[-1]) + 1 if a.any() else 1
    lb = int(np.flatnonzero(b)[-1]) + 1 if b.any() else 1
    a, b = a[:la], b[:lb]
    if la * lb <= 1 << 22:
        out = np.convolve(a, b)
    else:
        out = fftconvolve(a, b)
        np.clip(out, 0.0, None, out=out)
    res = np.zeros(cap)
    k = min(cap, len(out))
    res[:k] = out[:k]
    return res


def generation_law_table(model: BranchingModel, m_max: int, cap: int = 1 << 15) -> list[list[GenerationLaw]]:
    """Exact total-population laws for every root type and ``m <= m_max``.

    Uses the first-generation decomposition: a tree of depth ``m+1`` is the
    root's children, each carrying an independent depth-``m`` tree. Atoms
    below ``cap`` are exact; the rest is reported as overflow.

    Returns ``table[q][m]``.
    """
    if m_max < 0 or cap < 2:
        raise ValueError("need m_max >= 0 and cap >= 2")
    law = model.offspring
    Q = law.Q
    base = np.zeros(cap)
    base[1] = 1.0
    current = [base.copy() for _ in range(Q)]
    rows = [[GenerationLaw(0, base.copy(), 0.0)] for _ in range(Q)]
    for m in range(1, m_max + 1):
        powers = []
        for p in range(Q):
            k_top = int(max(v[:, p].max() for v in law.support))
            pw = [None] * (k_top + 1)
            unit = np.zeros(cap)
            unit[0] = 1.0
            pw[0] = unit
            for k in range(1, k_top + 1):
                pw[k] = _truncated_conv(pw[k - 1], current[p], cap)
            powers.append(pw)
        nxt = []
        for q in range(Q):
            acc = np.zeros(cap)
            for vec, pr in zip(law.support[q], law.probs[q]):
                term = powers[0][vec[0]]
                for p in range(1, Q):
                    term = _truncated_conv(term, powers[p][vec[p]], cap)
                acc += pr * term
            nxt.append(acc)
        current = nxt
        for q in range(Q):
            rows[q].append(GenerationLaw(m, current[q].copy(), max(0.0, 1.0 - current[q].sum())))
    return rows


def generation_total_pmf(model: BranchingModel, m: int, cap: int = 1 << 15,
                         root_type: int | None = None, min_mass: float = 0.99) -> GenerationLaw:
    """Exact law of the generation-``m`` total for a tree rooted at ``root_type``.

    Raises :class:`InsufficientCapError` when less than ``min_mass`` of the
    law lies below ``cap``.
    """
    if m < 0 or cap < 1:
        raise ValueError("need m >= 0 and cap >= 1")
    q = model.heavy if root_type is None else root_type
    row = generation_law_table(model, m, max(cap, 2))[q][m]
    if cap == 1:
        row = GenerationLaw(m, row.pmf[:1], 1.0 - row.pmf[0])
    if 1.0 - row.overflow < min_mass:
        raise InsufficientCapError(
            f"cap={cap} keeps only {1.0 - row.overflow:.4f} of the generation-{m} mass")
    return row


# ---------------------------------------------------------------------------
# count-level simulation (no positions)


def simulate_counts(model: BranchingModel, depth: int, reps: int, rng: np.random.Generator,
                    root_type: int | None = None, population_cap: int | None = None) -> np.ndarray:
    """Type counts ``Z_depth`` for ``reps`` independent trees, shape ``(reps, Q)``.

    Offspring vectors are tallied per parent type with one multinomial draw
    per replica, so the cost does not grow with the population.
    """
    law = model.offspring
    Q = law.Q
    Z = np.zeros((reps, Q), dtype=np.int64)
    if root_type is None:
        roots = rng.choice(Q, size=reps, p=model.root_distribution)
    else:
        roots = np.full(reps, root_type)
    Z[np.arange(reps), roots] = 1
    for _ in range(depth):
        nxt = np.zeros_like(Z)
        for q in range(Q):
            probs = law.probs[q]
            if len(probs) == 1:
                nxt += Z[:, q:q + 1] * law.support[q][0]
            else:
                tallies = rng.multinomial(Z[:, q], probs)
                nxt += tallies @ law.support[q]
        Z = nxt
        if population_cap is not None:
            worst = int(Z.sum(axis=1).max())
            if worst > population_cap:
                raise PopulationCapExceeded(worst, population_cap)
    return Z


def sample_generation_totals(model: BranchingModel, m: int, size: int, rng: np.random.Generator,
                             root_type: int | None = None) -> np.ndarray:
    q = model.heavy if root_type is None else root_type
    return simulate_counts(model, m, size, rng, root_type=q).sum(axis=1)


def power_mean(M: np.ndarray, n: int) -> np.ndarray:
    return np.linalg.matrix_power(np.asarray(M, dtype=float), n)


def parse_offspring(block: Mapping, Q: int) -> OffspringLaw:
    """Build an :class:`OffspringLaw` from a config mapping."""
    family = block.get("family")
    if family == "deterministic":
        law = OffspringLaw.deterministic(block["vector"] if "vector" in block else block["vectors"])
    elif family == "independent":
        pmfs = block["pmfs"]
        if isinstance(pmfs, Mapping):
            pmfs = [[pmfs]]
        if not all(isinstance(rows, (list, tuple)) and all(isinstance(r, Mapping) for r in rows)
                   for rows in pmfs):
            raise ModelError("pmfs must list, for each parent type, one child-count pmf per child type")
        pmfs = [[{int(k): float(v) for k, v in row.items()} for row in rows] for rows in pmfs]
        law = OffspringLaw.independent(pmfs)
    elif family == "table":
        law = OffspringLaw.table(block["rows"])
    else:
        raise ModelError(f"unknown offspring family {family!r}")
    if law.Q != Q:
        raise ModelError(f"offspring law has {law.Q} types, model declares {Q}")
    return law


def model_from_config(block: Mapping) -> BranchingModel:
    Q = int(block.get("types", 1))
    law = parse_offspring(block["offspring"], Q)
    pi = block.get("root_distribution")
    return BranchingModel(law, None if pi is None else np.asarray(pi, dtype=float))
