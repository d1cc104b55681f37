"""Scoring, summary metrics, parameter sweeps, and the exhaustive oracle.

Success is counted over *all* voters of a station: a voter the attack left
unassigned (safe-only runs) counts as a failure.  Group-level success maps
the assigned party through the group map and accepts any party of the
correct group.  Aggregates over stations are unweighted means (one station,
one vote); voter-weighted means are reported alongside.

The brute-force oracle enumerates every voter-to-party assignment that is
consistent with every frame's counts in every cycle, independently of the
attack's data structures, and reports the voters forced to a single party
across all consistent assignments.  It is the ground truth the safe phase
is measured against on small instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from multiprocessing import Pool
from typing import Iterable, Mapping, Sequence

import numpy as np

from .attack import AttackResult, run_attack
from .ingest import DEFAULT_DAY_LENGTH, StationRecord
from .model import GroupMap, ObservationSet, Tally, VoteTraceError
from .simulator import GroundTruth, TransitionMatrix, simulate_campaign

MODES = ("safe", "unsafe_party", "unsafe_group")


class MismatchedVoters(VoteTraceError):
    """Attack result and ground truth disagree on the voter universe."""


class EmptyTally(VoteTraceError):
    """A metric over an empty tally is undefined."""


class ZeroVariance(VoteTraceError):
    """Pearson correlation is undefined for a constant sequence."""


class SearchSpaceTooLarge(VoteTraceError):
    """The oracle's work budget was exhausted."""


def success_rate(
    result: AttackResult,
    truth: GroundTruth,
    mode: str = "party",
    group_map: GroupMap | None = None,
    cycle: int = -1,
) -> float:
    """Fraction of all voters whose assignment is correct at the scoring cycle.

    ``mode='group'`` accepts any party in the true party's group and needs a
    group map.  Unassigned voters count as failures.
    """
    if mode not in ("party", "group"):
        raise ValueError(f"unknown scoring mode {mode!r}")
    n = truth.n
    if result.n != n or any(not (0 <= v < n) for v in result.assignments):
        raise MismatchedVoters(
            f"result covers {result.n} voters, truth covers {n}"
        )
    if n == 0:
        return 1.0
    true_votes = truth.votes[cycle]
    if mode == "party":
        hits = sum(1 for v, (p, _) in result.assignments.items() if p == true_votes[v])
    else:
        if group_map is None:
            raise ValueError("group scoring needs a group map")
        group = [group_map.group_index(name) for name in result.party_names]
        hits = sum(
            1
            for v, (p, _) in result.assignments.items()
            if group[p] == group[true_votes[v]]
        )
    return hits / n


def baseline_rate(
    tally: Tally,
    mode: str = "party",
    group_map: GroupMap | None = None,
    party_names: Sequence[str] | None = None,
) -> float:
    """Success rate of always guessing the tally's largest party (or group)."""
    if tally.total == 0:
        raise EmptyTally("baseline of an empty tally")
    if mode == "party":
        return max(tally.counts) / tally.total
    if mode == "group":
        if group_map is None or party_names is None:
            raise ValueError("group baseline needs a group map and party names")
        sums: dict[int, int] = {}
        for name, c in zip(party_names, tally.counts):
            g = group_map.group_index(name)
            sums[g] = sums.get(g, 0) + c
        return max(sums.values()) / tally.total
    raise ValueError(f"unknown baseline mode {mode!r}")


def homogeneity(tally: Tally, party_count: int) -> float:
    """Root-mean-square deviation of the normalized tally from uniform.

    Computed over all ``party_count`` contesting parties (zero-vote parties
    included), so values are comparable across stations: 0 for a perfectly
    uniform tally, sqrt(P-1)/P for a unanimous one.
    """
    if tally.total == 0:
        raise EmptyTally("homogeneity of an empty tally")
    if party_count < len(tally.counts):
        raise ValueError("party_count below the tally width")
    q = np.zeros(party_count)
    q[: len(tally.counts)] = np.asarray(tally.counts) / tally.total
    return float(np.sqrt(np.mean((q - 1.0 / party_count) ** 2)))


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length sequences of size >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        raise ZeroVariance("constant input sequence")
    return float(dx @ dy) / math.sqrt(vx * vy)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------


def brute_force_oracle(
    observations: ObservationSet, node_budget: int = 2_000_000
) -> tuple[dict[int, int], int]:
    """Enumerate all assignments consistent with every frame count.

    Returns (forced voter -> party, number of consistent assignments).
    Raises SearchSpaceTooLarge when the backtracking search exceeds
    ``node_budget`` visited nodes.  Intended for small instances.
    """
    observations.validate()
    roster: list[str] = []
    for cycle_parties in observations.parties:
        for p in cycle_parties:
            if p.name not in roster:
                roster.append(p.name)
    index = {name: i for i, name in enumerate(roster)}
    P = len(roster)
    U, T = observations.cycles, observations.frames_per_cycle

    voters = list(observations.voter_ids)
    n = len(voters)
    pos = {v: i for i, v in enumerate(voters)}
    frame_of = np.zeros((U, n), dtype=int)
    raw = np.zeros((U, T, P), dtype=int)
    for f in observations.frames:
        u, t = f.cycle - 1, f.frame_index - 1
        cycle_index = [index[p.name] for p in observations.parties[u]]
        for p_local, c in enumerate(f.raw_counts):
            raw[u, t, cycle_index[p_local]] += c
        for v in f.voters:
            frame_of[u, pos[v]] = t

    options: list[set[int]] = [set() for _ in range(n)]
    chosen = [0] * n
    nodes = 0
    consistent = 0

    def recurse(i: int) -> None:
        nonlocal nodes, consistent
        nodes += 1
        if nodes > node_budget:
            raise SearchSpaceTooLarge(f"budget of {node_budget} nodes exhausted")
        if i == n:
            consistent += 1
            for j in range(n):
                options[j].add(chosen[j])
            return
        ts = frame_of[:, i]
        for p in range(P):
            if all(raw[u, ts[u], p] > 0 for u in range(U)):
                for u in range(U):
                    raw[u, ts[u], p] -= 1
                chosen[i] = p
                recurse(i + 1)
                for u in range(U):
                    raw[u, ts[u], p] += 1

    recurse(0)
    forced = {
        voters[i]: next(iter(options[i]))
        for i in range(n)
        if len(options[i]) == 1
    }
    return forced, consistent


# ---------------------------------------------------------------------------
# Station scoring and sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StationScore:
    """Per-station attack outcome against ground truth."""

    station_id: str
    n: int
    safe_coverage: float
    safe_rate: float
    party_accuracy: float
    group_accuracy: float
    homogeneity: float
    baseline_party: float
    baseline_group: float

    @property
    def size(self) -> int:
        return self.n


@dataclass(frozen=True)
class SweepRow:
    """One aggregate line of a sweep report."""

    cycles: int
    frames: int
    seed: int
    mode: str
    mean_rate: float
    weighted_mean_rate: float
    baseline: float
    corr_size: float
    corr_homogeneity: float
    n_stations: int


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]
    station_scores: tuple[tuple[int, int, int, StationScore], ...]


def score_station(
    record: StationRecord,
    cycles: int,
    frames: int,
    seed: int,
    group_map: GroupMap | None = None,
    transition: TransitionMatrix | None = None,
    day_length: float = DEFAULT_DAY_LENGTH,
    use_tally_constraint: bool = False,
) -> StationScore | None:
    """Simulate one station, attack it in full mode, and score both phases.

    Safe-phase rates are read off the full run's safe-tagged assignments;
    those are exactly the assignments a safe-only run would make, because
    everything after the first guess is tagged unsafe.  Returns None for a
    station with no legitimate votes.
    """
    if record.legitimate == 0:
        return None
    obs, truth = simulate_campaign(
        record, cycles, frames, seed, transition=transition,
        group_map=group_map, day_length=day_length,
    )
    result = run_attack(
        obs, mode="full", transition=transition,
        use_tally_constraint=use_tally_constraint,
    )
    n = result.n
    true_votes = truth.votes[-1]
    group = [obs.group_map.group_index(name) for name in result.party_names]
    safe_hits = party_hits = group_hits = safe_total = 0
    for v, (p, phase) in result.assignments.items():
        party_ok = p == true_votes[v]
        party_hits += party_ok
        group_hits += group[p] == group[true_votes[v]]
        if phase == "safe":
            safe_total += 1
            safe_hits += party_ok
    P = len(result.party_names)
    return StationScore(
        station_id=record.station_id,
        n=n,
        safe_coverage=safe_total / n,
        safe_rate=safe_hits / n,
        party_accuracy=party_hits / n,
        group_accuracy=group_hits / n,
        homogeneity=homogeneity(obs.tallies[0], P),
        baseline_party=baseline_rate(obs.tallies[0]),
        baseline_group=baseline_rate(
            obs.tallies[0], "group", obs.group_map, record.party_names
        ),
    )


def _score_task(args) -> StationScore | None:
    return score_station(*args)


def _safe_pearson(xs, ys) -> float:
    try:
        return pearson(xs, ys)
    except (ZeroVariance, ValueError):
        return float("nan")


def sweep(
    corpus: Sequence[StationRecord],
    cycles_list: Sequence[int],
    frames_list: Sequence[int],
    seeds: Sequence[int],
    group_map: GroupMap | None = None,
    transition: TransitionMatrix | None = None,
    day_length: float = DEFAULT_DAY_LENGTH,
    use_tally_constraint: bool = False,
    parallel: int = 1,
    keep_station_scores: bool = True,
) -> SweepReport:
    """Simulate, attack, and score every station for each (U, T, seed).

    Emits three aggregate rows per combination (safe / unsafe_party /
    unsafe_group) with unweighted and voter-weighted station means and the
    size and homogeneity correlations.  Station order, worker count, and
    scheduling do not affect the output: scores are keyed by station id.
    """
    if not corpus:
        raise ValueError("empty corpus")
    rows: list[SweepRow] = []
    kept: list[tuple[int, int, int, StationScore]] = []
    for frames in frames_list:
        for cycles in cycles_list:
            for seed in seeds:
                tasks = [
                    (r, cycles, frames, seed, group_map, transition, day_length,
                     use_tally_constraint)
                    for r in sorted(corpus, key=lambda r: r.station_id)
                ]
                if parallel > 1:
                    with Pool(parallel) as pool:
                        scored = pool.map(_score_task, tasks, chunksize=16)
                else:
                    scored = [_score_task(t) for t in tasks]
                scores = [s for s in scored if s is not None]
                if not scores:
                    continue
                if keep_station_scores:
                    kept += [(cycles, frames, seed, s) for s in scores]
                sizes = [s.n for s in scores]
                homogeneities = [s.homogeneity for s in scores]
                total = sum(sizes)
                for mode in MODES:
                    if mode == "safe":
                        rates = [s.safe_rate for s in scores]
                        base = [s.baseline_party for s in scores]
                    elif mode == "unsafe_party":
                        rates = [s.party_accuracy for s in scores]
                        base = [s.baseline_party for s in scores]
                    else:
                        rates = [s.group_accuracy for s in scores]
                        base = [s.baseline_group for s in scores]
                    rows.append(
                        SweepRow(
                            cycles=cycles,
                            frames=frames,
                            seed=seed,
                            mode=mode,
                            mean_rate=float(np.mean(rates)),
                            weighted_mean_rate=float(
                                np.dot(rates, sizes) / total
                            ),
                            baseline=float(np.mean(base)),
                            corr_size=_safe_pearson(sizes, rates),
                            corr_homogeneity=_safe_pearson(homogeneities, rates),
                            n_stations=len(scores),
                        )
                    )
    return SweepReport(rows=tuple(rows), station_scores=tuple(kept))


REPORT_COLUMNS = (
    "U,T,seed,mode,mean_rate,weighted_mean_rate,baseline,"
    "corr_size,corr_homogeneity,n_stations"
)

STATION_COLUMNS = (
    "U,T,seed,station_id,n,safe_coverage,safe_rate,party_accuracy,"
    "group_accuracy,homogeneity,baseline_party,baseline_group"
)


def write_report_csv(report: SweepReport, sink) -> None:
    sink.write(REPORT_COLUMNS + "\n")
    for r in report.rows:
        sink.write(
            f"{r.cycles},{r.frames},{r.seed},{r.mode},{r.mean_rate!r},"
            f"{r.weighted_mean_rate!r},{r.baseline!r},{r.corr_size!r},"
            f"{r.corr_homogeneity!r},{r.n_stations}\n"
        )


def write_station_scores_csv(report: SweepReport, sink) -> None:
    sink.write(STATION_COLUMNS + "\n")
    for cycles, frames, seed, s in report.station_scores:
        sink.write(
            f"{cycles},{frames},{seed},{s.station_id},{s.n},{s.safe_coverage!r},"
            f"{s.safe_rate!r},{s.party_accuracy!r},{s.group_accuracy!r},"
            f"{s.homogeneity!r},{s.baseline_party!r},{s.baseline_group!r}\n"
        )
