"""Synthetic multi-cycle election days with known ground truth.

The generative model follows the published per-station data: n virtual
voters (one per legitimate vote) receive parties so that the cycle-1
histogram reproduces the station tally exactly, then each cycle they are
thrown independently into counting frames with probabilities proportional
to the turnout-curve mass of each frame.  Optionally a row-stochastic
transition matrix re-samples every voter's party between cycles.

Randomness is derived from a single root seed through named streams, one
per (station, cycle, purpose), using numpy's SeedSequence/PCG64.  The
derivation is stable across platforms and worker layouts: simulating the
same station with the same root seed gives identical output no matter
which process does it, and cycle streams do not depend on the total cycle
count, so a U-cycle campaign is a prefix of the (U+1)-cycle one.

Arrival times are redrawn each cycle by default; pass
``reuse_arrivals=True`` to keep one habitual arrival frame per voter.
Redrawing is the pessimistic-for-the-attacker choice and the one used by
every shipped experiment.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .ingest import StationRecord, TurnoutCurve, parse_turnout_curve, DEFAULT_DAY_LENGTH
from .model import (
    FrameObservation,
    GroupMap,
    ObservationSet,
    Party,
    Tally,
    VoteTraceError,
)


class InvalidT(VoteTraceError):
    """Frame count must be a positive integer."""


class DegenerateCurve(VoteTraceError):
    """The turnout curve never rises above zero."""


class BadMatrix(VoteTraceError):
    """A transition matrix row is not a probability distribution."""


class SpecError(VoteTraceError):
    """A corpus specification is unusable."""


def _token(value: str | int) -> int:
    if isinstance(value, int):
        return value & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(value.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(seed: int, *path: str | int) -> np.random.Generator:
    """A named random stream: Generator(PCG64(SeedSequence([seed, *path]))).

    String path elements are hashed to stable 64-bit tokens, so streams are
    reproducible across platforms and independent of each other.
    """
    entropy = [_token(seed)] + [_token(p) for p in path]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class FrameSchedule:
    """Ordered counting-time boundaries (hours after poll opening)."""

    boundaries: tuple[float, ...]

    def __post_init__(self) -> None:
        bs = self.boundaries
        if not bs or any(b <= a for a, b in zip(bs, bs[1:])) or bs[0] <= 0:
            raise ValueError(f"boundaries must be strictly increasing: {bs}")

    @property
    def count(self) -> int:
        return len(self.boundaries)

    @property
    def day_length(self) -> float:
        return self.boundaries[-1]


#: With a 15-hour day and 7 counts, the first count happens after 3 hours
#: and the rest every 2 hours, mirroring the published turnout rhythm.
_SEVEN_COUNT_BOUNDARIES = (3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0)


def make_schedule(T: int, day_length: float = DEFAULT_DAY_LENGTH) -> FrameSchedule:
    """Equal-width frames, except the special 7-count day (see above)."""
    if T < 1:
        raise InvalidT(f"frame count must be >= 1, got {T}")
    if T == 7 and day_length == 15.0:
        return FrameSchedule(boundaries=_SEVEN_COUNT_BOUNDARIES)
    return FrameSchedule(
        boundaries=tuple(day_length * (t + 1) / T for t in range(T))
    )


def draw_voter_preferences(tally: Tally, rng: np.random.Generator) -> np.ndarray:
    """A uniformly random voter->party vector whose histogram equals the tally."""
    pool = np.repeat(np.arange(len(tally.counts)), tally.counts)
    return rng.permutation(pool)


def frame_probabilities(curve: TurnoutCurve, schedule: FrameSchedule) -> np.ndarray:
    """Per-frame arrival probabilities: normalized curve mass of each frame."""
    total = curve(schedule.day_length)
    if total <= 0:
        raise DegenerateCurve("turnout curve is zero over the whole day")
    values = [curve(b) for b in schedule.boundaries]
    masses = np.diff(np.concatenate(([0.0], values)))
    masses = np.clip(masses, 0.0, None)  # guard float dust on flat segments
    return masses / masses.sum()


def schedule_arrivals(
    curve: TurnoutCurve,
    schedule: FrameSchedule,
    n_voters: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """I.i.d. 1-based arrival frame per voter, weighted by the turnout curve."""
    p = frame_probabilities(curve, schedule)
    return rng.choice(schedule.count, size=n_voters, p=p) + 1


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic party-switching probabilities between adjacent cycles."""

    rows: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        for i, row in enumerate(self.rows):
            if len(row) != len(self.rows):
                raise BadMatrix(f"row {i} has {len(row)} entries, expected {len(self.rows)}")
            if any(x < 0 for x in row):
                raise BadMatrix(f"row {i} has a negative entry")
            if abs(sum(row) - 1.0) > 1e-9:
                raise BadMatrix(f"row {i} sums to {sum(row)}, expected 1")

    @classmethod
    def identity(cls, size: int) -> "TransitionMatrix":
        return cls(rows=tuple(tuple(1.0 if i == j else 0.0 for j in range(size)) for i in range(size)))

    @classmethod
    def two_party_switch(cls, switch_probability: float) -> "TransitionMatrix":
        s = switch_probability
        return cls(rows=((1.0 - s, s), (s, 1.0 - s)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=float)

    @property
    def is_identity(self) -> bool:
        return all(
            row[i] == 1.0 and all(x == 0.0 for j, x in enumerate(row) if j != i)
            for i, row in enumerate(self.rows)
        )


def apply_transition(
    votes: np.ndarray, matrix: TransitionMatrix, rng: np.random.Generator
) -> np.ndarray:
    """Re-sample each voter's party from her current party's matrix row."""
    m = matrix.as_array()
    if votes.size and votes.max() >= m.shape[0]:
        raise BadMatrix(
            f"matrix covers {m.shape[0]} parties but votes reference party {votes.max()}"
        )
    cumulative = np.cumsum(m, axis=1)
    u = rng.random(votes.shape[0])
    # per-row right-bisection; >= keeps zero-probability columns unreachable
    return np.minimum(
        (u[:, None] >= cumulative[votes]).sum(axis=1), m.shape[0] - 1
    ).astype(votes.dtype)


@dataclass(frozen=True)
class GroundTruth:
    """Per-cycle voter->party votes and voter->frame arrivals (1-based)."""

    votes: tuple[tuple[int, ...], ...]
    frames: tuple[tuple[int, ...], ...]

    @property
    def cycles(self) -> int:
        return len(self.votes)

    @property
    def n(self) -> int:
        return len(self.votes[0]) if self.votes else 0


def simulate_campaign(
    station: StationRecord,
    cycles: int,
    frames: int,
    seed: int,
    transition: TransitionMatrix | None = None,
    group_map: GroupMap | None = None,
    day_length: float = DEFAULT_DAY_LENGTH,
    reuse_arrivals: bool = False,
) -> tuple[ObservationSet, GroundTruth]:
    """Simulate U consecutive election cycles at one station.

    Cycle-1 preferences are a random permutation of the station tally;
    later cycles keep them fixed unless a transition matrix is given.
    Every cycle gets a fresh arrival split over the counting frames,
    weighted by the station's turnout curve.
    """
    if cycles < 1:
        raise ValueError(f"cycle count must be >= 1, got {cycles}")
    schedule = make_schedule(frames, day_length)
    curve = parse_turnout_curve(station, day_length)
    if group_map is None:
        group_map = GroupMap.build({}, station.party_names)
    n = station.legitimate
    P = len(station.party_names)

    votes_by_cycle: list[np.ndarray] = []
    arrivals_by_cycle: list[np.ndarray] = []
    for u in range(1, cycles + 1):
        if u == 1:
            votes = draw_voter_preferences(
                station.tally, derive_rng(seed, station.station_id, u, "prefs")
            )
        elif transition is None:
            votes = votes_by_cycle[-1]
        else:
            votes = apply_transition(
                votes_by_cycle[-1],
                transition,
                derive_rng(seed, station.station_id, u, "transition"),
            )
        if n > 0:
            arrival_cycle = 1 if reuse_arrivals else u
            arrivals = schedule_arrivals(
                curve,
                schedule,
                n,
                derive_rng(seed, station.station_id, arrival_cycle, "arrivals"),
            )
        else:
            arrivals = np.zeros(0, dtype=int)
        votes_by_cycle.append(votes)
        arrivals_by_cycle.append(arrivals)

    party_list = tuple(
        Party(i, name, group_map.group_index(name))
        for i, name in enumerate(station.party_names)
    )
    frame_obs: list[FrameObservation] = []
    tallies: list[Tally] = []
    for u in range(1, cycles + 1):
        votes = votes_by_cycle[u - 1]
        arrivals = arrivals_by_cycle[u - 1]
        tallies.append(Tally(tuple(int(c) for c in np.bincount(votes, minlength=P))))
        for t in range(1, schedule.count + 1):
            members = np.nonzero(arrivals == t)[0]
            counts = np.bincount(votes[members], minlength=P)
            frame_obs.append(
                FrameObservation(
                    cycle=u,
                    frame_index=t,
                    voters=frozenset(int(v) for v in members),
                    raw_counts=tuple(int(c) for c in counts),
                )
            )
    obs = ObservationSet(
        station_id=station.station_id,
        cycles=cycles,
        frames_per_cycle=schedule.count,
        frames=tuple(frame_obs),
        tallies=tuple(tallies),
        parties=tuple(party_list for _ in range(cycles)),
        group_map=group_map,
    )
    truth = GroundTruth(
        votes=tuple(tuple(int(v) for v in votes) for votes in votes_by_cycle),
        frames=tuple(tuple(int(a) for a in arrivals) for arrivals in arrivals_by_cycle),
    )
    return obs, truth


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StationProfile:
    """One neighborhood flavor: group-level tilts on the national shares.

    ``concentration`` is the Dirichlet scale applied to the tilted share
    vector; smaller values give more lopsided stations.
    """

    name: str
    weight: float
    group_boost: Mapping[str, float]
    concentration: float


@dataclass(frozen=True)
class CorpusSpec:
    """Parameters of a synthetic station corpus.

    Defaults are calibrated so that a generated corpus reproduces the
    published 2013 shape: median eligible near 590, median arrived near
    366, national turnout 64%, about one invalid vote per hundred, a
    mean per-station leading-party share near 0.38 and leading-group
    share near 0.54.
    """

    n_stations: int
    party_count: int = 34
    group_layout: tuple[tuple[str, tuple[int, ...]], ...] = (
        ("left", (0, 1)),
        ("right", (2, 3, 4)),
        ("center", (5, 6, 7, 8, 9)),
        ("ultra_orthodox", (10, 11, 12)),
        ("arab", (13, 14, 15, 16, 17)),
        ("MISC", tuple(range(18, 34))),
    )
    national_shares: tuple[float, ...] = ()
    profiles: tuple[StationProfile, ...] = ()
    eligible_mean: float = 586.0
    eligible_sd: float = 168.0
    eligible_min: int = 80
    eligible_max: int = 894
    turnout_mean: float = 0.64
    turnout_sd: float = 0.094
    invalid_rate: float = 0.0105
    arrival_shape: tuple[tuple[float, float], ...] = (
        (2.0, 0.10),
        (4.0, 0.22),
        (6.0, 0.34),
        (8.0, 0.46),
        (10.0, 0.58),
        (12.0, 0.72),
        (14.0, 0.90),
        (15.0, 1.0),
    )
    arrival_jitter: float = 60.0
    day_length: float = DEFAULT_DAY_LENGTH

    def __post_init__(self) -> None:
        if self.n_stations < 1:
            raise SpecError("need at least one station")
        if self.party_count < 1:
            raise SpecError("need at least one party")
        covered = sorted(i for _, members in self.group_layout for i in members)
        if covered != list(range(self.party_count)):
            raise SpecError("group layout must partition the party indices")
        if not self.national_shares:
            object.__setattr__(self, "national_shares", _default_national_shares())
        if not self.profiles:
            object.__setattr__(self, "profiles", _default_profiles())
        if len(self.national_shares) != self.party_count:
            raise SpecError("national shares must cover every party")
        if abs(sum(self.national_shares) - 1.0) > 1e-9:
            raise SpecError("national shares must sum to 1")
        if abs(sum(p.weight for p in self.profiles) - 1.0) > 1e-9:
            raise SpecError("profile weights must sum to 1")
        if self.arrival_shape[-1][1] != 1.0 or self.arrival_shape[-1][0] != self.day_length:
            raise SpecError("arrival shape must end at (day_length, 1.0)")

    @property
    def party_names(self) -> tuple[str, ...]:
        return tuple(f"P{i + 1:02d}" for i in range(self.party_count))

    def groups_config(self) -> dict[str, list[str]]:
        names = self.party_names
        return {
            group: [names[i] for i in members]
            for group, members in self.group_layout
            if group != "MISC"
        }

    def group_of_party(self) -> np.ndarray:
        out = np.zeros(self.party_count, dtype=int)
        for g, (_, members) in enumerate(self.group_layout):
            out[list(members)] = g
        return out


def _default_national_shares() -> tuple[float, ...]:
    # 2013-like magnitudes: two large lists, a mid-field, and a long tail
    # of sub-threshold parties.
    shares = [
        0.1139, 0.0455,                            # left
        0.2334, 0.0912, 0.0176,                    # right
        0.1433, 0.0499, 0.0208, 0.0080, 0.0040,    # center
        0.0875, 0.0516, 0.0121,                    # ultra orthodox
        0.0360, 0.0300, 0.0260, 0.0020, 0.0010,    # arab
    ]
    tail = [0.0045, 0.0040, 0.0035, 0.0030, 0.0025, 0.0020, 0.0016, 0.0012,
            0.0010, 0.0008, 0.0006, 0.0005, 0.0004, 0.0003, 0.0002, 0.0001]
    shares += tail
    total = sum(shares)
    return tuple(s / total for s in shares)


def _default_profiles() -> tuple[StationProfile, ...]:
    return (
        StationProfile(
            "mainstream_right", 0.30,
            {"left": 0.6, "right": 1.7, "center": 0.9, "ultra_orthodox": 0.5,
             "arab": 0.02, "MISC": 1.0},
            12.0,
        ),
        StationProfile(
            "mainstream_center", 0.25,
            {"left": 1.3, "right": 0.9, "center": 1.7, "ultra_orthodox": 0.2,
             "arab": 0.02, "MISC": 1.0},
            12.0,
        ),
        StationProfile(
            "left_urban", 0.10,
            {"left": 2.8, "right": 0.5, "center": 1.5, "ultra_orthodox": 0.1,
             "arab": 0.05, "MISC": 1.0},
            10.0,
        ),
        StationProfile(
            "religious_right", 0.09,
            {"left": 0.15, "right": 1.8, "center": 0.3, "ultra_orthodox": 2.2,
             "arab": 0.01, "MISC": 0.8},
            8.0,
        ),
        StationProfile(
            "haredi", 0.10,
            {"left": 0.05, "right": 0.4, "center": 0.1, "ultra_orthodox": 12.0,
             "arab": 0.005, "MISC": 0.5},
            5.0,
        ),
        StationProfile(
            "arab", 0.13,
            {"left": 0.05, "right": 0.02, "center": 0.05, "ultra_orthodox": 0.02,
             "arab": 30.0, "MISC": 0.3},
            5.0,
        ),
        StationProfile(
            "periphery_mixed", 0.03,
            {"left": 1.0, "right": 1.0, "center": 1.0, "ultra_orthodox": 1.0,
             "arab": 1.0, "MISC": 1.0},
            6.0,
        ),
    )


def _profile_shares(spec: CorpusSpec, profile: StationProfile) -> np.ndarray:
    shares = np.asarray(spec.national_shares, dtype=float)
    boost = np.ones(spec.party_count)
    for group, members in spec.group_layout:
        boost[list(members)] = profile.group_boost.get(group, 1.0)
    tilted = shares * boost
    return tilted / tilted.sum()


def gen_corpus(spec: CorpusSpec, seed: int) -> list[StationRecord]:
    """Deterministically generate a synthetic corpus of station records."""
    profile_weights = np.asarray([p.weight for p in spec.profiles])
    profile_shares = [_profile_shares(spec, p) for p in spec.profiles]
    shape_hours = np.asarray([h for h, _ in spec.arrival_shape])
    shape_values = np.asarray([v for _, v in spec.arrival_shape])
    shape_increments = np.diff(np.concatenate(([0.0], shape_values)))
    if np.any(shape_increments < 0):
        raise SpecError("arrival shape must be non-decreasing")

    records: list[StationRecord] = []
    for i in range(spec.n_stations):
        rng = derive_rng(seed, "corpus", i)
        profile_idx = int(rng.choice(len(spec.profiles), p=profile_weights))
        profile = spec.profiles[profile_idx]

        if spec.eligible_sd == 0:
            eligible = int(round(spec.eligible_mean))
        else:
            while True:
                eligible = int(round(rng.normal(spec.eligible_mean, spec.eligible_sd)))
                if spec.eligible_min <= eligible <= spec.eligible_max:
                    break
        if spec.turnout_sd == 0:
            turnout = spec.turnout_mean
        else:
            m, sd = spec.turnout_mean, spec.turnout_sd
            k = m * (1 - m) / sd**2 - 1
            turnout = float(rng.beta(m * k, (1 - m) * k))
        arrived = int(round(eligible * turnout))
        arrived = max(0, min(arrived, eligible))
        invalid = int(rng.binomial(arrived, spec.invalid_rate)) if arrived else 0
        legitimate = arrived - invalid

        alpha = profile.concentration * profile_shares[profile_idx]
        station_shares = rng.dirichlet(np.clip(alpha, 1e-9, None))
        counts = rng.multinomial(legitimate, station_shares)

        if spec.arrival_jitter > 0:
            jittered = rng.dirichlet(spec.arrival_jitter * np.clip(shape_increments, 1e-9, None))
            cumulative = np.cumsum(jittered)
            cumulative[-1] = 1.0
        else:
            cumulative = shape_values
        final = arrived / eligible if eligible else 0.0
        checkpoints = tuple(
            (float(h), float(c * final)) for h, c in zip(shape_hours, cumulative)
        )

        records.append(
            StationRecord(
                station_id=f"{i + 1:05d}",
                eligible=eligible,
                arrived=arrived,
                legitimate=legitimate,
                party_names=spec.party_names,
                tally=Tally(tuple(int(c) for c in counts)),
                turnout_checkpoints=checkpoints,
            )
        )
    return records
