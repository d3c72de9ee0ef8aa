"""Streaming simulation of the branching random walk.

One generation is held in memory at a time. Heavy-type displacements above
``record`` (absolute units) are logged as events; each particle keeps the
id of its most recent such ancestor, and events point to their own nearest
logged ancestor. At the final generation the number of leaves below every
event is recovered by one bottom-up pass over the event forest, which is
exactly the multiplicity of that displacement in the single-big-jump
process.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from heavybrw.branching import (BranchingModel, PopulationCapExceeded, SpectralData,
                                require_valid, simulate_counts)
from heavybrw.displacement import DisplacementModel, scaling_bn
from heavybrw.kernels import get_backend
from heavybrw.pointproc import PointMeasure

DEFAULT_POPULATION_CAP = 2_000_000


@dataclass(frozen=True)
class StepThresholds:
    """Absolute thresholds used while growing one replica."""

    record: float = np.inf
    exceed: float = np.inf
    population_cap: int = DEFAULT_POPULATION_CAP


@dataclass
class GenerationState:
    generation: int
    types: np.ndarray
    positions: np.ndarray
    last_event: np.ndarray
    exceed: np.ndarray
    event_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    event_parents: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    # data of the step that produced this generation; empty for the root
    parent_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    displacements: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def root(cls, root_type: int, Q: int) -> GenerationState:
        return cls(
            generation=0,
            types=np.array([root_type], dtype=np.int64),
            positions=np.zeros(1),
            last_event=np.full(1, -1, dtype=np.int64),
            exceed=np.zeros((1, Q), dtype=np.int32),
            displacements=np.zeros(1),
            parent_index=np.full(1, -1, dtype=np.int64),
        )

    @property
    def size(self) -> int:
        return int(self.types.size)

    def type_counts(self, Q: int) -> np.ndarray:
        return np.bincount(self.types, minlength=Q)


class _Prepared:
    """Per-model arrays handed to the kernels, computed once."""

    def __init__(self, bmodel: BranchingModel, dmodel: DisplacementModel):
        if bmodel.Q != dmodel.Q:
            raise ValueError(f"branching model has {bmodel.Q} types, displacement model {dmodel.Q}")
        self.tables = bmodel.offspring.sampling_tables()
        self.fam = dmodel.kernel_params()
        self.max_block = dmodel.heavy.max_block
        self.Q = bmodel.Q


_PREPARED: dict = {}


def _prepared(bmodel, dmodel) -> _Prepared:
    key = (id(bmodel), id(dmodel))
    hit = _PREPARED.get(key)
    if hit is None or hit[0] is not bmodel or hit[1] is not dmodel:
        hit = (bmodel, dmodel, _Prepared(bmodel, dmodel))
        _PREPARED[key] = hit
    return hit[2]


def step_generation(state: GenerationState, bmodel: BranchingModel, dmodel: DisplacementModel,
                    thresholds: StepThresholds, rng: np.random.Generator,
                    backend=None) -> GenerationState:
    """Grow one generation.

    Uniform consumption per step: one offspring uniform per parent, then one
    magnitude uniform (in ``(0, 1]``) and one sign uniform per child.
    """
    kern = get_backend(backend) if backend is None or isinstance(backend, str) else backend
    prep = _prepared(bmodel, dmodel)
    row_start, cum, vecs = prep.tables
    u_off = rng.random(state.size)
    counts = kern.offspring_counts(state.types, u_off, row_start, cum, vecs)
    total = int(counts.sum())
    if total > thresholds.population_cap:
        raise PopulationCapExceeded(total, thresholds.population_cap)
    if prep.max_block is not None and counts[:, -1].max() > prep.max_block:
        raise ValueError(f"heavy sibling block larger than {prep.max_block} ray coefficients")
    u_mag = 1.0 - rng.random(total)
    u_sign = rng.random(total)
    code, index, scale, balance, ray = prep.fam
    (ct, cp, cl, cx, cpar, cd, evv, evp) = kern.expand_generation(
        state.types, state.positions, state.last_event, state.exceed, counts,
        u_mag, u_sign, code, index, scale, balance, ray,
        float(thresholds.record), float(thresholds.exceed), int(state.event_values.size))
    return GenerationState(
        generation=state.generation + 1,
        types=ct, positions=cp, last_event=cl, exceed=cx,
        event_values=np.concatenate([state.event_values, evv]),
        event_parents=np.concatenate([state.event_parents, evp]),
        parent_index=cpar, displacements=cd,
    )


@dataclass(frozen=True)
class SimulationSetup:
    """Everything needed to grow replicas of one model at one depth."""

    bmodel: BranchingModel
    dmodel: DisplacementModel
    eta: float = 0.01
    theta: float = 0.2
    population_cap: int = DEFAULT_POPULATION_CAP
    backend: str | None = None

    @property
    def spectral(self) -> SpectralData:
        return self.bmodel.spectral()

    def bn(self, n: int) -> float:
        law = self.dmodel.heavy.marginal
        if not law.regularly_varying:
            return 1.0
        return scaling_bn(self.spectral.rho, law, n)

    def thresholds(self, n: int) -> StepThresholds:
        bn = self.bn(n)
        return StepThresholds(record=self.eta * bn, exceed=self.theta * bn / n,
                              population_cap=self.population_cap)


@dataclass(frozen=True)
class ReplicaResult:
    n: int
    bn: float
    root_type: int
    points: PointMeasure          # N_n, locations S_v / b_n
    tilde: PointMeasure           # single-big-jump process restricted to |x| > eta
    max_position: float           # M_n, unscaled
    total: int
    w_hat: float
    type_counts: np.ndarray
    exceed_max: np.ndarray        # per type, max over leaves of ancestral exceedance counts
    theta: float
    eta: float

    @property
    def max_scaled(self) -> float:
        return self.max_position / self.bn


def grow(setup: SimulationSetup, n: int, rng: np.random.Generator, keep_history: bool = False):
    """Grow ``n`` generations; returns ``(root_type, final_state, history)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    require_valid(setup.bmodel)
    Q = setup.bmodel.Q
    root_type = int(rng.choice(Q, p=setup.bmodel.root_distribution))
    state = GenerationState.root(root_type, Q)
    thr = setup.thresholds(n)
    history = [state] if keep_history else None
    for _ in range(n):
        state = step_generation(state, setup.bmodel, setup.dmodel, thr, rng, setup.backend)
        if keep_history:
            history.append(state)
    return root_type, state, history


def finish_replica(setup: SimulationSetup, n: int, root_type: int, state: GenerationState) -> ReplicaResult:
    kern = get_backend(setup.backend)
    bn = setup.bn(n)
    rho = setup.spectral.rho
    Q = setup.bmodel.Q
    n_ev = int(state.event_values.size)
    ev_counts = kern.accumulate_events(state.event_parents, state.last_event, n_ev)
    tilde = PointMeasure.from_points(state.event_values / bn, ev_counts)
    return ReplicaResult(
        n=n, bn=bn, root_type=root_type,
        points=PointMeasure.from_points(state.positions / bn),
        tilde=tilde,
        max_position=float(state.positions.max()),
        total=state.size,
        w_hat=state.size / rho ** n,
        type_counts=state.type_counts(Q),
        exceed_max=state.exceed.max(axis=0).astype(np.int64),
        theta=setup.theta, eta=setup.eta,
    )


def run_replica(setup: SimulationSetup, n: int, rng: np.random.Generator) -> ReplicaResult:
    root_type, state, _ = grow(setup, n, rng)
    return finish_replica(setup, n, root_type, state)


def one_jump_events(replica: ReplicaResult, theta: float | None = None) -> np.ndarray:
    """Flags for violated one-large-jump events, one per type.

    For a dominated type: some leaf has an ancestral displacement of that
    type above ``theta b_n / n``. For the heavy type: some leaf has two.
    """
    if theta is not None and not np.isclose(theta, replica.theta):
        raise ValueError(f"replica was grown with theta={replica.theta}, not {theta}")
    need = np.ones(replica.exceed_max.size, dtype=np.int64)
    need[-1] = 2
    return replica.exceed_max >= need


def estimate_W(bmodel: BranchingModel, depth: int, reps: int, rng: np.random.Generator,
               root_type: int | None = None,
               population_cap: int | None = DEFAULT_POPULATION_CAP) -> np.ndarray:
    """Samples of ``|D_depth| / rho^depth`` from plain trees (``population_cap=None`` disables the cap)."""
    sd = require_valid(bmodel)
    if sd.rho ** depth > 1e6:
        raise ValueError(f"rho^depth = {sd.rho ** depth:.3g} exceeds 1e6")
    Z = simulate_counts(bmodel, depth, reps, rng, root_type=root_type,
                        population_cap=population_cap)
    return Z.sum(axis=1) / sd.rho ** depth
