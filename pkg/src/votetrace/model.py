"""Core domain types shared by the simulator, the attack, and the evaluation.

A *frame* is the interval between two consecutive leftover-ballot counts at
one polling station.  Each frame carries the set of voters who voted during
it and, per party, the number of ballots that went missing from that party's
stack.  Collected over several election cycles, these frames are the entire
input of the attack.

Counts are kept as exact integers (count, frame size); the floating-point
distribution is derived on demand.  All types here are immutable value data
and safe to share between parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

MISC_GROUP = "MISC"


class VoteTraceError(Exception):
    """Base class for all errors raised by this package."""


class EmptyFrame(VoteTraceError):
    """A per-frame distribution was requested for a frame with no voters."""


class UnknownParty(VoteTraceError):
    """A party name is not registered in the group map."""


class ValidationError(VoteTraceError):
    """An ObservationSet violates its structural invariants."""


def normalize_frame(raw_counts: Sequence[int], voter_count: int) -> tuple[float, ...]:
    """Scale per-party missing-ballot counts by the number of voters in the frame.

    Raises EmptyFrame for a frame with no voters, and ValueError when the
    counts do not add up to the frame size (the two are collected jointly,
    so a mismatch means corrupted input).
    """
    if voter_count == 0:
        raise EmptyFrame("cannot normalize a frame with no voters")
    if any(c < 0 for c in raw_counts):
        raise ValueError(f"negative count in {raw_counts!r}")
    if sum(raw_counts) != voter_count:
        raise ValueError(
            f"counts sum to {sum(raw_counts)}, expected frame size {voter_count}"
        )
    return tuple(c / voter_count for c in raw_counts)


def support(distribution: Sequence[float]) -> tuple[int, ...]:
    """Parties with strictly positive mass, in party-index order."""
    return tuple(p for p, value in enumerate(distribution) if value > 0)


def group_of(party: "Party", group_map: "GroupMap") -> int:
    """The unique group a party belongs to.  Raises UnknownParty."""
    return group_map.group_index(party.name)


@dataclass(frozen=True)
class Party:
    """One contesting party within a single election cycle.

    Party ids are dense 0..P-1 *within a cycle*; party lists may differ
    between cycles, so cross-cycle identity is by name and group identity
    goes through the GroupMap.
    """

    id: int
    name: str
    group_id: int


@dataclass(frozen=True)
class GroupMap:
    """Total mapping from party names to political groups.

    ``groups`` lists (group name, member party names); every registered
    party belongs to exactly one group.  Parties not mentioned by the
    configuration are absorbed by the MISC group.
    """

    groups: tuple[tuple[str, tuple[str, ...]], ...]
    membership: Mapping[str, int] = field(hash=False)

    @classmethod
    def build(
        cls, named_groups: Mapping[str, Sequence[str]], parties: Iterable[str]
    ) -> "GroupMap":
        """Assemble a GroupMap covering ``parties``, adding MISC for the rest.

        Raises ValueError if a party is claimed by two groups.
        """
        seen: dict[str, str] = {}
        for group, members in named_groups.items():
            for name in members:
                if name in seen:
                    raise ValueError(
                        f"party {name!r} appears in groups {seen[name]!r} and {group!r}"
                    )
                seen[name] = group
        order = [g for g in named_groups if g != MISC_GROUP]
        order.append(MISC_GROUP)
        index = {g: i for i, g in enumerate(order)}
        members_by_group: dict[str, list[str]] = {g: [] for g in order}
        for name in named_groups.get(MISC_GROUP, ()):
            members_by_group[MISC_GROUP].append(name)
        membership: dict[str, int] = {}
        for group, members in named_groups.items():
            for name in members:
                membership[name] = index[group]
                if group != MISC_GROUP:
                    members_by_group[group].append(name)
        for name in parties:
            if name not in membership:
                membership[name] = index[MISC_GROUP]
                members_by_group[MISC_GROUP].append(name)
        groups = tuple((g, tuple(members_by_group[g])) for g in order)
        return cls(groups=groups, membership=membership)

    @property
    def group_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.groups)

    def group_index(self, party_name: str) -> int:
        try:
            return self.membership[party_name]
        except KeyError:
            raise UnknownParty(f"party {party_name!r} is not registered") from None


@dataclass(frozen=True)
class Tally:
    """Per-party vote counts for one station and cycle."""

    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(c < 0 for c in self.counts):
            raise ValueError(f"negative tally entry in {self.counts!r}")

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class FrameObservation:
    """One (cycle, frame) observation: who voted, and what went missing.

    ``cycle`` and ``frame_index`` are 1-based.  ``raw_counts`` are the
    per-party missing-ballot counts for the frame; their sum equals the
    number of voters.  Empty frames are legal (they keep the counting
    schedule intact for reporting) but have no distribution.
    """

    cycle: int
    frame_index: int
    voters: frozenset[int]
    raw_counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if sum(self.raw_counts) != len(self.voters):
            raise ValueError(
                f"frame ({self.cycle},{self.frame_index}): counts sum to "
                f"{sum(self.raw_counts)} but frame holds {len(self.voters)} voters"
            )

    @property
    def is_empty(self) -> bool:
        return not self.voters

    @property
    def normalized(self) -> tuple[float, ...] | None:
        """The frame's vote distribution, or None for an empty frame."""
        if self.is_empty:
            return None
        return normalize_frame(self.raw_counts, len(self.voters))


@dataclass(frozen=True)
class ObservationSet:
    """Everything the adversary collected about one station over U cycles.

    Frames are ordered by (cycle, frame_index) and cover every slot of the
    counting schedule, empty frames included.  ``tallies[u-1]`` is the
    published result of cycle u, and per cycle the frame counts add back up
    to it.
    """

    station_id: str
    cycles: int
    frames_per_cycle: int
    frames: tuple[FrameObservation, ...]
    tallies: tuple[Tally, ...]
    parties: tuple[tuple[Party, ...], ...]
    group_map: GroupMap

    def frames_of_cycle(self, cycle: int) -> tuple[FrameObservation, ...]:
        return tuple(f for f in self.frames if f.cycle == cycle)

    def validate(self) -> None:
        """Check structural invariants; raises ValidationError on violation."""
        if len(self.tallies) != self.cycles or len(self.parties) != self.cycles:
            raise ValidationError("tallies/parties must have one entry per cycle")
        expected = [
            (u, t)
            for u in range(1, self.cycles + 1)
            for t in range(1, self.frames_per_cycle + 1)
        ]
        if [(f.cycle, f.frame_index) for f in self.frames] != expected:
            raise ValidationError("frames must cover every (cycle, frame) slot in order")
        for u in range(1, self.cycles + 1):
            party_count = len(self.parties[u - 1])
            seen: set[int] = set()
            sums = [0] * party_count
            for f in self.frames_of_cycle(u):
                if len(f.raw_counts) != party_count:
                    raise ValidationError(
                        f"cycle {u}: frame {f.frame_index} has {len(f.raw_counts)} "
                        f"parties, expected {party_count}"
                    )
                if seen & f.voters:
                    raise ValidationError(
                        f"cycle {u}: voters {sorted(seen & f.voters)} appear in "
                        f"two frames"
                    )
                seen |= f.voters
                for p, c in enumerate(f.raw_counts):
                    sums[p] += c
            if tuple(sums) != self.tallies[u - 1].counts:
                raise ValidationError(
                    f"cycle {u}: frame counts {tuple(sums)} do not reconstruct "
                    f"the tally {self.tallies[u - 1].counts}"
                )
        voter_sets = [
            frozenset().union(*(f.voters for f in self.frames_of_cycle(u)))
            for u in range(1, self.cycles + 1)
        ]
        if any(vs != voter_sets[0] for vs in voter_sets[1:]):
            raise ValidationError("the voter registry must be identical across cycles")

    @property
    def voter_ids(self) -> tuple[int, ...]:
        """All voters of the station, ascending."""
        ids: set[int] = set()
        for f in self.frames:
            ids |= f.voters
        return tuple(sorted(ids))
