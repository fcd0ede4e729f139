"""Synthetic population and daily encounter logs.

Each day is a venue-tagged encounter multigraph stored column-wise. The
edge count per day is fixed at round(p * ebar / 2), so the mean degree hits
the target exactly up to rounding; venue mix follows the spec weights so
containment filters have real work to do. Everything is deterministic per
seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .epidemic import BANDS, VENUES

DEFAULT_VENUE_WEIGHTS = {"household": 0.3, "work": 0.25, "school": 0.15, "random": 0.3}
_BAND_PROBS = (0.35, 0.45, 0.20)


@dataclass(frozen=True)
class PopulationSpec:
    p: int
    ebar: float
    days: int = 14
    venue_weights: dict = field(default_factory=lambda: dict(DEFAULT_VENUE_WEIGHTS))
    seed: int = 0

    @staticmethod
    def from_dict(d: dict) -> "PopulationSpec":
        return PopulationSpec(**d)


@dataclass
class DayLog:
    """One day's encounters, column-wise; venue/band are code indices."""

    a: np.ndarray
    b: np.ndarray
    venue: np.ndarray
    hour: np.ndarray
    duration: np.ndarray
    band: np.ndarray

    def __len__(self):
        return len(self.a)


@dataclass
class Population:
    spec: PopulationSpec
    household: np.ndarray
    site: np.ndarray          # work/school group id, -1 if none
    site_kind: np.ndarray     # 0 none, 1 work, 2 school
    days: list[DayLog]

    @property
    def size(self) -> int:
        return self.spec.p

    def day(self, idx: int) -> DayLog:
        return self.days[idx]

    def mean_degree(self, idx: int) -> float:
        return 2 * len(self.days[idx]) / self.size

    def incident(self, idx: int) -> list[np.ndarray]:
        """Edge indices touching each participant on one day."""
        day = self.days[idx]
        out: list[list[int]] = [[] for _ in range(self.size)]
        for e, (x, y) in enumerate(zip(day.a.tolist(), day.b.tolist())):
            out[x].append(e)
            out[y].append(e)
        return [np.array(v, dtype=np.int64) for v in out]

    def save(self, path):
        arrays = {}
        for i, d in enumerate(self.days):
            for name in ("a", "b", "venue", "hour", "duration", "band"):
                arrays[f"day{i}_{name}"] = getattr(d, name)
        np.savez_compressed(
            path,
            spec=json.dumps(
                {
                    "p": self.spec.p,
                    "ebar": self.spec.ebar,
                    "days": self.spec.days,
                    "venue_weights": self.spec.venue_weights,
                    "seed": self.spec.seed,
                }
            ),
            household=self.household,
            site=self.site,
            site_kind=self.site_kind,
            **arrays,
        )

    @staticmethod
    def load(path) -> "Population":
        data = np.load(path, allow_pickle=False)
        spec = PopulationSpec.from_dict(json.loads(str(data["spec"])))
        days = [
            DayLog(*[data[f"day{i}_{name}"] for name in ("a", "b", "venue", "hour", "duration", "band")])
            for i in range(spec.days)
        ]
        return Population(spec, data["household"], data["site"], data["site_kind"], days)


def _partition_groups(rng, members: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Assign members to consecutive groups of size lo..hi; returns group ids."""
    ids = np.empty(len(members), dtype=np.int64)
    pos = 0
    gid = 0
    while pos < len(members):
        size = int(rng.integers(lo, hi + 1))
        ids[pos : pos + size] = gid
        pos += size
        gid += 1
    return ids


def gen_population(spec: PopulationSpec) -> Population:
    """Generate the population structure and per-day encounter logs."""
    p = spec.p
    if p < 2:
        raise ValueError("population needs at least two participants")
    if not 0 < spec.ebar <= p - 1:
        raise ValueError("infeasible mean encounter count")
    rng = np.random.default_rng(spec.seed)

    order = rng.permutation(p)
    household = np.empty(p, dtype=np.int64)
    household[order] = _partition_groups(rng, order, 1, 5)

    is_school = rng.random(p) < 0.25
    site = np.full(p, -1, dtype=np.int64)
    site_kind = np.zeros(p, dtype=np.int8)
    school_members = np.flatnonzero(is_school)
    work_pool = np.flatnonzero(~is_school)
    works = work_pool[rng.random(len(work_pool)) < 0.8]
    if len(school_members):
        site[school_members] = _partition_groups(rng, school_members, 10, 40)
        site_kind[school_members] = 2
    if len(works):
        site[works] = _partition_groups(rng, works, 3, 20)
        site_kind[works] = 1

    group_members: dict[tuple[int, int], np.ndarray] = {}
    for kind_code, kind_arr in ((0, household), (1, site), (2, site)):
        pass
    hh_groups = [np.flatnonzero(household == g) for g in range(household.max() + 1)]
    hh_groups = [g for g in hh_groups if len(g) >= 2]
    work_groups = [
        np.flatnonzero((site == g) & (site_kind == 1)) for g in range(max(site.max() + 1, 1))
    ]
    work_groups = [g for g in work_groups if len(g) >= 2]
    school_groups = [
        np.flatnonzero((site == g) & (site_kind == 2)) for g in range(max(site.max() + 1, 1))
    ]
    school_groups = [g for g in school_groups if len(g) >= 2]

    pools = {"household": hh_groups, "work": work_groups, "school": school_groups}
    n_edges = max(1, round(p * spec.ebar / 2))
    weights = np.array([spec.venue_weights.get(v, 0.0) for v in VENUES], dtype=float)
    weights /= weights.sum()

    days = []
    for _ in range(spec.days):
        venue_counts = rng.multinomial(n_edges, weights)
        a_parts, b_parts, v_parts = [], [], []
        for vi, vname in enumerate(VENUES):
            k = int(venue_counts[vi])
            if k == 0:
                continue
            groups = pools.get(vname)
            if vname == "random" or not groups:
                # uniform distinct pairs over the whole population
                aa = rng.integers(0, p, size=k)
                bb = rng.integers(0, p - 1, size=k)
                bb = np.where(bb >= aa, bb + 1, bb)
                vi_eff = VENUES.index("random") if not groups and vname != "random" else vi
            else:
                gi = rng.integers(0, len(groups), size=k)
                aa = np.empty(k, dtype=np.int64)
                bb = np.empty(k, dtype=np.int64)
                for j, g in enumerate(gi):
                    members = groups[g]
                    x, y = rng.choice(len(members), size=2, replace=False)
                    aa[j], bb[j] = members[x], members[y]
                vi_eff = vi
            a_parts.append(aa)
            b_parts.append(bb)
            v_parts.append(np.full(k, vi_eff, dtype=np.int8))
        a = np.concatenate(a_parts).astype(np.int64)
        b = np.concatenate(b_parts).astype(np.int64)
        venue = np.concatenate(v_parts)
        m = len(a)
        # school encounters sit in school hours; the rest spread over the day
        hour = rng.integers(0, 24, size=m).astype(np.int8)
        school_code = VENUES.index("school")
        hour[venue == school_code] = rng.integers(8, 16, size=int((venue == school_code).sum()))
        duration = rng.integers(5, 121, size=m).astype(np.int16)
        band = rng.choice(len(BANDS), size=m, p=_BAND_PROBS).astype(np.int8)
        days.append(DayLog(a, b, venue, hour, duration, band))

    return Population(spec, household, site, site_kind, days)
