"""Shared builders for hand-made observation sets."""

from votetrace.model import FrameObservation, GroupMap, ObservationSet, Party, Tally


def build_observations(cycle_frames, n_parties, station_id="t", groups=None):
    """Build an ObservationSet from per-cycle lists of (voters, counts) frames.

    Every cycle must list the same number of frames; tallies are the
    per-cycle column sums.
    """
    party_names = [f"P{i}" for i in range(n_parties)]
    gm = GroupMap.build(groups or {}, party_names)
    parties = tuple(
        Party(i, name, gm.group_index(name)) for i, name in enumerate(party_names)
    )
    frames = []
    tallies = []
    for u, frame_list in enumerate(cycle_frames, start=1):
        sums = [0] * n_parties
        for t, (voters, counts) in enumerate(frame_list, start=1):
            frames.append(
                FrameObservation(
                    cycle=u,
                    frame_index=t,
                    voters=frozenset(voters),
                    raw_counts=tuple(counts),
                )
            )
            for p, c in enumerate(counts):
                sums[p] += c
        tallies.append(Tally(tuple(sums)))
    return ObservationSet(
        station_id=station_id,
        cycles=len(cycle_frames),
        frames_per_cycle=len(cycle_frames[0]),
        frames=tuple(frames),
        tallies=tuple(tallies),
        parties=tuple(parties for _ in cycle_frames),
        group_map=gm,
    )
