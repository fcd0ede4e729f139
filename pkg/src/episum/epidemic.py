"""Compartment-model mechanics and the plaintext reference simulator.

The class machinery is table-driven: each class is a row with an optional
threshold trigger (susceptible-like), an optional dwell time (exposed- and
infectious-like), and a successor, so other compartment graphs drop in via
configuration. The default table is SEIR.

``reference_simulate`` runs the whole pipeline centrally with the same
filter and likelihood arithmetic as the distributed variants; its tallies
are the ground truth the protocol runs are compared against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

VENUES = ("household", "work", "school", "random")
BANDS = ("close", "medium", "far")
DEFAULT_DISTANCE_WEIGHTS = {"close": 2.0, "medium": 1.0, "far": 0.25}
DELTA_MAX = 100


class ConfigurationError(Exception):
    """Bad simulation parameters, surfaced at load time."""


@dataclass(frozen=True)
class ClassRule:
    """One row of the compartment table."""

    name: str
    transmits: bool = False       # members emit nonzero infection likelihoods
    infectable: bool = False      # threshold trigger moves members to `next`
    dwell: int | None = None      # days in class before moving to `next`
    next: str | None = None


@dataclass(frozen=True)
class InfectionState:
    klass: str
    days_in_class: int = 0


@dataclass(frozen=True)
class ClassTally:
    counts: tuple[int, ...]

    def __iter__(self):
        return iter(self.counts)

    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class Filter:
    kind: str                      # venue | time | distance
    blocked_venues: frozenset[str] = frozenset()
    start_hour: int = 0
    end_hour: int = 0
    min_band: str = "close"


def parse_filter(spec: dict, known_venues=VENUES) -> Filter:
    kind = spec.get("type")
    if kind == "venue":
        blocked = frozenset(spec["blocked"])
        unknown = blocked - set(known_venues)
        if unknown:
            raise ConfigurationError(f"unknown venue tags in filter: {sorted(unknown)}")
        return Filter(kind="venue", blocked_venues=blocked)
    if kind == "time":
        return Filter(kind="time", start_hour=int(spec["start_hour"]), end_hour=int(spec["end_hour"]))
    if kind == "distance":
        band = spec["min_band"]
        if band not in BANDS:
            raise ConfigurationError(f"unknown distance band {band!r}")
        return Filter(kind="distance", min_band=band)
    raise ConfigurationError(f"unknown filter type {kind!r}")


def _filter_blocks(f: Filter, venue: str, hour: int, band: str) -> bool:
    if f.kind == "venue":
        return venue in f.blocked_venues
    if f.kind == "time":
        return f.start_hour <= hour < f.end_hour
    if f.kind == "distance":
        return BANDS.index(band) < BANDS.index(f.min_band)
    raise AssertionError(f.kind)


def filter_encounters(records, filters) -> list:
    """Keep the records no blocking predicate matches. Deterministic."""
    return [
        r
        for r in records
        if not any(_filter_blocks(f, r.venue, r.hour, r.distance_band) for f in filters)
    ]


def filter_mask(venue_codes, hours, band_codes, filters) -> np.ndarray:
    """Vectorized filter over a day's encounter arrays (codes index VENUES
    and BANDS). Shared by the reference simulator and the protocol runs so
    both pipelines see exactly the same encounter subset."""
    keep = np.ones(len(venue_codes), dtype=bool)
    for f in filters:
        if f.kind == "venue":
            codes = [VENUES.index(v) for v in f.blocked_venues]
            keep &= ~np.isin(venue_codes, codes)
        elif f.kind == "time":
            keep &= ~((hours >= f.start_hour) & (hours < f.end_hour))
        elif f.kind == "distance":
            keep &= ~(band_codes < BANDS.index(f.min_band))
    return keep


@dataclass
class SimulationParams:
    """Everything the research institute publishes for one simulation run."""

    n_sim: int = 1
    n_step: int = 14
    classes: tuple[ClassRule, ...] = ()
    initial_infectious: int = 1
    initial_assignment: list[str] | None = None
    setting_filters: list[list[Filter]] = field(default_factory=list)
    beta: float = 1.0
    distance_weights: dict = field(default_factory=lambda: dict(DEFAULT_DISTANCE_WEIGHTS))
    threshold: int = 50
    latent_days: int = 2
    infectious_days: int = 5
    delta_max: int = DELTA_MAX

    def __post_init__(self):
        if not self.classes:
            self.classes = (
                ClassRule("S", infectable=True, next="E"),
                ClassRule("E", dwell=self.latent_days, next="I"),
                ClassRule("I", transmits=True, dwell=self.infectious_days, next="R"),
                ClassRule("R"),
            )
        if not self.setting_filters:
            self.setting_filters = [[] for _ in range(self.n_sim)]
        if len(self.setting_filters) != self.n_sim:
            raise ConfigurationError("one filter list per simulation setting required")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate class names")
        for c in self.classes:
            if c.next is not None and c.next not in names:
                raise ConfigurationError(f"class {c.name} points to unknown class {c.next}")
        for b in BANDS:
            if b not in self.distance_weights:
                raise ConfigurationError(f"missing distance weight for band {b!r}")

    def class_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)

    def rule(self, name: str) -> ClassRule:
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(name)

    def initial_states(self, p: int) -> list[InfectionState]:
        if self.initial_assignment is not None:
            if len(self.initial_assignment) != p:
                raise ConfigurationError("initial assignment length != population size")
            return [InfectionState(k) for k in self.initial_assignment]
        if self.initial_infectious > p:
            raise ConfigurationError("more initial infectious than participants")
        first_transmitting = next(c.name for c in self.classes if c.transmits)
        entry = self.classes[0].name
        return [
            InfectionState(first_transmitting if i < self.initial_infectious else entry)
            for i in range(p)
        ]

    @staticmethod
    def from_dict(d: dict) -> "SimulationParams":
        d = dict(d)
        if "setting_filters" in d:
            d["setting_filters"] = [
                [parse_filter(f) for f in setting] for setting in d["setting_filters"]
            ]
        if "classes" in d:
            d["classes"] = tuple(ClassRule(**c) for c in d["classes"])
        return SimulationParams(**d)

    @staticmethod
    def from_file(path) -> "SimulationParams":
        with open(path) as f:
            return SimulationParams.from_dict(json.load(f))


def compute_likelihood(sender_state: InfectionState, meta, params: SimulationParams) -> int:
    """Per-encounter infection likelihood the sender reports for its partner.

    Zero unless the sender's class transmits; otherwise
    round(beta * minutes * weight(band)) clamped to [0, delta_max].
    Rounding is half-up so the value is stable across platforms.
    """
    if meta.duration_min < 0:
        raise ValueError("negative encounter duration")
    if not params.rule(sender_state.klass).transmits:
        return 0
    raw = params.beta * meta.duration_min * params.distance_weights[meta.distance_band]
    return max(0, min(params.delta_max, math.floor(raw + 0.5)))


def likelihood_table(params: SimulationParams, durations, band_codes) -> np.ndarray:
    """Vectorized likelihood for a day's encounters, sender assumed
    transmitting (multiply by the sender's transmit indicator)."""
    w = np.array([params.distance_weights[b] for b in BANDS])
    raw = params.beta * durations.astype(np.float64) * w[band_codes]
    return np.clip(np.floor(raw + 0.5), 0, params.delta_max).astype(np.int64)


def update_class(state: InfectionState, delta: int, params: SimulationParams) -> InfectionState:
    """Advance one participant by one step given its cumulative likelihood.

    Threshold comparison is inclusive; dwell times count completed days, so
    a class with dwell d is left at the end of the d-th day in it.
    """
    rule = params.rule(state.klass)
    if rule.infectable and delta is not None and delta >= params.threshold:
        return InfectionState(rule.next, 0)
    days = state.days_in_class + 1
    if rule.dwell is not None and days >= rule.dwell:
        return InfectionState(rule.next, 0)
    return InfectionState(state.klass, days)


def tally_states(states, params: SimulationParams) -> ClassTally:
    names = params.class_names()
    counts = dict.fromkeys(names, 0)
    for s in states:
        counts[s.klass] += 1
    return ClassTally(tuple(counts[n] for n in names))


def indicator_tuple(state: InfectionState, params: SimulationParams) -> tuple[int, ...]:
    return tuple(1 if state.klass == n else 0 for n in params.class_names())


AGG_MOD = 1 << 32


def aggregate(indicators, rng, bus=None, session: str = "agg", labels=None) -> ClassTally:
    """Additive secret-shared aggregation of one-hot class tuples.

    Each participant splits its tuple into three uniform legs over Z_{2^32},
    one per server; the servers publish leg sums and the research institute
    adds them. The result equals the plaintext tally exactly. Tuples are
    summed as-is; a malformed (non-one-hot) tuple is only caught by the
    plaintext oracle comparison.
    """
    indicators = list(indicators)
    if not indicators:
        return ClassTally(())
    width = len(indicators[0])
    sums = [np.zeros(width, dtype=np.uint64) for _ in range(3)]
    for i, tup in enumerate(indicators):
        legs = rng.integers(0, AGG_MOD, size=(2, width), dtype=np.uint64)
        third = (np.array(tup, dtype=np.uint64) - legs[0] - legs[1]) % AGG_MOD
        for k, leg in enumerate((legs[0], legs[1], third)):
            sums[k] = (sums[k] + leg) % AGG_MOD
            if bus is not None:
                who = labels[i] if labels else f"P{i}"
                bus.send(session, who, f"S{k}", "agg-share", payload_bits=32 * width)
    if bus is not None:
        for k in range(3):
            bus.send(session, f"S{k}", "RI", "agg-sum", payload_bits=32 * width)
    total = (sums[0] + sums[1] + sums[2]) % AGG_MOD
    return ClassTally(tuple(int(x) for x in total))


def reference_simulate(population, params: SimulationParams, seed: int = 0):
    """Plaintext oracle: run the full compartment dynamics centrally.

    Returns {setting: [tally_0, ..., tally_n_step]} where tally_0 is the
    initial assignment histogram. Likelihood sums use plain integers; the
    headroom assertion guarantees they coincide with the wrapped Z_{2^128}
    arithmetic of the protocol pipelines.
    """
    p = population.size
    out = {}
    for setting in range(params.n_sim):
        states = params.initial_states(p)
        tallies = [tally_states(states, params)]
        for step in range(1, params.n_step + 1):
            day = population.day(step - 1)
            keep = filter_mask(day.venue, day.hour, day.band, params.setting_filters[setting])
            base = likelihood_table(params, day.duration, day.band)
            transmits = np.array(
                [params.rule(s.klass).transmits for s in states], dtype=bool
            )
            delta = np.zeros(p, dtype=np.int64)
            send_ab = keep & transmits[day.a]          # a transmits to b
            np.add.at(delta, day.b[send_ab], base[send_ab])
            send_ba = keep & transmits[day.b]
            np.add.at(delta, day.a[send_ba], base[send_ba])
            assert int(delta.max(initial=0)) < (1 << 62), "likelihood sum headroom exceeded"
            states = [update_class(s, int(d), params) for s, d in zip(states, delta)]
            tallies.append(tally_states(states, params))
        out[setting] = tallies
    return out
