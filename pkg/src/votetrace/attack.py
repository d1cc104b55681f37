"""The two-phase vote-assignment attack over one station's observations.

One frame with a single non-empty stack pins every voter in it; one voter
whose frames share exactly one party is pinned too.  The *safe phase*
applies these two rules to a fixpoint: every assignment it makes is
provably correct, because it only uses constraints the counts enforce.
The *unsafe phase* then picks the single (voter, party) pair with the
highest product of per-frame vote frequencies, commits it, re-runs the
safe fixpoint, and repeats until everyone is assigned.

Wrong unsafe guesses can corrupt the working counts.  The three recovery
rules, all logged as inconsistency events and never fatal:

* a count that would go negative is clamped at zero;
* a voter whose frame supports no longer intersect is deferred;
* a voter whose likelihood row is all zero is given the remaining-tally
  heaviest party among the parties her frames still support.

With a transition matrix the likelihood generalizes from one party to a
per-cycle party list, scored as (product of frame frequencies along the
list) times (product of transition probabilities between consecutive
entries) and maximized by dynamic programming over cycles; the reported
party is the final-cycle entry of the best list, and the matrix rows are
indexed by the station's party roster.

Party indices used here are *canonical*: the union of all cycles' party
names in first-appearance order, so cycles with different rosters still
intersect by name.  For data whose roster never changes this is the
per-cycle index unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .model import ObservationSet, ValidationError, VoteTraceError
from .simulator import TransitionMatrix

SAFE = "safe"
UNSAFE = "unsafe"


class MatrixMismatch(VoteTraceError):
    """A transition matrix does not cover the station's party roster."""


@dataclass(frozen=True)
class AttackResult:
    """Final or partial per-voter party assignments with phase provenance."""

    station_id: str
    mode: str
    n: int
    assignments: dict[int, tuple[int, str]]
    party_names: tuple[str, ...] = ()
    inconsistencies: tuple[dict, ...] = ()
    trace: tuple[tuple, ...] | None = None

    @property
    def safe_count(self) -> int:
        return sum(1 for _, phase in self.assignments.values() if phase == SAFE)

    @property
    def unsafe_count(self) -> int:
        return sum(1 for _, phase in self.assignments.values() if phase == UNSAFE)


class AttackState:
    """Mutable working state: live frames, remaining tallies, assignments.

    Counts are exact integers throughout; per-frame distributions are
    derived on demand, so the safe rules never depend on float rounding.
    """

    def __init__(
        self,
        observations: ObservationSet,
        use_tally_constraint: bool = False,
        record_trace: bool = False,
    ) -> None:
        observations.validate()
        self.station_id = observations.station_id
        self.cycles = observations.cycles
        self.frames_per_cycle = observations.frames_per_cycle
        self.use_tally_constraint = use_tally_constraint

        roster: list[str] = []
        for cycle_parties in observations.parties:
            for p in cycle_parties:
                if p.name not in roster:
                    roster.append(p.name)
        self.party_names: tuple[str, ...] = tuple(roster)
        index = {name: i for i, name in enumerate(roster)}
        P = len(roster)
        U, T = self.cycles, self.frames_per_cycle

        ext_ids = np.asarray(observations.voter_ids, dtype=np.int64)
        self._ext_ids = ext_ids
        n = len(ext_ids)
        self.n = n

        self._raw = np.zeros((U, T, P), dtype=np.int64)
        self._size = np.zeros((U, T), dtype=np.int64)
        self._frame_of = np.zeros((U, n), dtype=np.int64)
        self._members: list[list[np.ndarray]] = [[None] * T for _ in range(U)]
        self._remaining = np.zeros((U, P), dtype=np.int64)

        for u in range(U):
            cycle_index = [index[p.name] for p in observations.parties[u]]
            for p_local, c in enumerate(observations.tallies[u].counts):
                self._remaining[u, cycle_index[p_local]] = c
        for f in observations.frames:
            u, t = f.cycle - 1, f.frame_index - 1
            cycle_index = [index[p.name] for p in observations.parties[u]]
            for p_local, c in enumerate(f.raw_counts):
                self._raw[u, t, cycle_index[p_local]] += c
            dense = np.searchsorted(ext_ids, np.asarray(sorted(f.voters), dtype=np.int64))
            self._members[u][t] = dense
            self._size[u, t] = len(dense)
            self._frame_of[u, dense] = t

        self._supp_count = (self._raw > 0).sum(axis=2)
        self._alive = np.ones(n, dtype=bool)
        self._assigned = np.full(n, -1, dtype=np.int64)
        self._phase = np.zeros(n, dtype=np.int8)  # 0 none, 1 safe, 2 unsafe

        self._pending_frames: set[tuple[int, int]] = set()
        self._pending_voters: set[int] = set()
        self._touched: set[int] = set()  # alive voters whose likelihood row is stale
        self._empty_logged: set[int] = set()
        self._guessing = False  # set by the first non-safe assignment
        self.inconsistencies: list[dict] = []
        self._trace: list[tuple] | None = [] if record_trace else None
        self._logL: np.ndarray | None = None
        self._logM: np.ndarray | None = None
        self._transition_obj: TransitionMatrix | None = None

        self._seed_all_pending()

    # -- bookkeeping ------------------------------------------------------

    def _seed_all_pending(self) -> None:
        self._pending_frames = {
            (u, t)
            for u in range(self.cycles)
            for t in range(self.frames_per_cycle)
            if self._size[u, t] > 0
        }
        self._pending_voters = set(np.nonzero(self._alive)[0].tolist())
        self._touched = set(self._pending_voters)

    @property
    def remaining_tallies(self) -> np.ndarray:
        return self._remaining.copy()

    def unassigned_voters(self) -> tuple[int, ...]:
        """External ids of voters not yet assigned, ascending."""
        return tuple(int(self._ext_ids[i]) for i in np.nonzero(self._alive)[0])

    @property
    def is_complete(self) -> bool:
        return not self._alive.any()

    def assignments(self) -> dict[int, tuple[int, str]]:
        out: dict[int, tuple[int, str]] = {}
        done = np.nonzero(~self._alive)[0]
        for i in done:
            phase = SAFE if self._phase[i] == 1 else UNSAFE
            out[int(self._ext_ids[i])] = (int(self._assigned[i]), phase)
        return out

    def conservation_ok(self) -> bool:
        """Frame counts add to remaining tallies and to live frame sizes."""
        return bool(
            np.array_equal(self._raw.sum(axis=1), self._remaining)
            and np.array_equal(self._raw.sum(axis=2), self._size)
        )

    def result(self, mode: str) -> AttackResult:
        return AttackResult(
            station_id=self.station_id,
            mode=mode,
            n=self.n,
            assignments=self.assignments(),
            party_names=self.party_names,
            inconsistencies=tuple(self.inconsistencies),
            trace=tuple(self._trace) if self._trace is not None else None,
        )

    def _log(self, kind: str, **context) -> None:
        self.inconsistencies.append({"kind": kind, **context})

    # -- state updates ----------------------------------------------------

    def assign(
        self,
        voter: int,
        party: int,
        phase: str = UNSAFE,
        parties_by_cycle: Sequence[int] | None = None,
        origin: str = "manual",
    ) -> None:
        """Commit voter -> party: remove her from every live frame she is in,
        decrement that party's count there, and reduce the remaining tallies.

        ``parties_by_cycle`` overrides the per-cycle decrements for
        transition-weighted assignments; ``party`` stays the reported label.

        The safe tag is only honored before the first guess: once any
        unsafe assignment lands, later safe-rule deductions inherit its
        uncertainty and are tagged unsafe.
        """
        dense = int(np.searchsorted(self._ext_ids, voter))
        if dense >= self.n or self._ext_ids[dense] != voter:
            raise KeyError(f"unknown voter {voter}")
        if not self._alive[dense]:
            raise ValueError(f"voter {voter} already assigned")
        per_cycle = (
            [party] * self.cycles if parties_by_cycle is None else list(parties_by_cycle)
        )
        if len(per_cycle) != self.cycles:
            raise ValueError("need one party per cycle")
        for u in range(self.cycles):
            p = per_cycle[u]
            t = int(self._frame_of[u, dense])
            if self._raw[u, t, p] > 0:
                self._raw[u, t, p] -= 1
                if self._raw[u, t, p] == 0:
                    self._supp_count[u, t] -= 1
            else:
                self._log(
                    "negative_count",
                    voter=int(voter),
                    cycle=u + 1,
                    frame=t + 1,
                    party=int(p),
                )
            self._size[u, t] -= 1
            self._remaining[u, p] -= 1
            self._pending_frames.add((u, t))
            ms = self._members[u][t]
            live = ms[self._alive[ms]].tolist()
            self._pending_voters.update(live)
            self._touched.update(live)
        if phase != SAFE:
            self._guessing = True
        self._alive[dense] = False
        self._assigned[dense] = party
        self._phase[dense] = 1 if (phase == SAFE and not self._guessing) else 2
        self._pending_voters.discard(dense)
        self._touched.discard(dense)
        if self._logL is not None:
            self._logL[dense, :] = -np.inf
        if self._trace is not None:
            self._trace.append((len(self._trace), origin, int(voter), int(party)))

    # -- safe rules -------------------------------------------------------

    def _homogeneous_party(self, u: int, t: int) -> int | None:
        if self._size[u, t] > 0 and self._supp_count[u, t] == 1:
            return int(np.argmax(self._raw[u, t]))
        return None

    def _sweep_homogeneous(self, candidates: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
        applied: list[tuple[int, int]] = []
        for u, t in sorted(candidates):
            p = self._homogeneous_party(u, t)
            if p is None:
                continue
            for m in self._members[u][t]:
                if self._alive[m]:
                    voter = int(self._ext_ids[m])
                    self.assign(voter, p, phase=SAFE, origin="homogeneous")
                    applied.append((voter, p))
        return applied

    def _intersection_rows(self, dense_ids: np.ndarray) -> np.ndarray:
        P = len(self.party_names)
        mask = np.ones((len(dense_ids), P), dtype=bool)
        for u in range(self.cycles):
            t = self._frame_of[u, dense_ids]
            mask &= self._raw[u, t, :] > 0
            if self.use_tally_constraint:
                mask &= self._remaining[u] > 0
        return mask

    def _sweep_singletons(self, candidates: Iterable[int]) -> list[tuple[int, int]]:
        applied: list[tuple[int, int]] = []
        dense_ids = np.asarray(
            sorted(i for i in candidates if self._alive[i]), dtype=np.int64
        )
        if not len(dense_ids):
            return applied
        mask = self._intersection_rows(dense_ids)
        options = mask.sum(axis=1)
        for row in np.nonzero(options <= 1)[0]:
            dense = int(dense_ids[row])
            if not self._alive[dense]:
                continue
            # earlier assignments in this sweep may have shrunk the support
            current = self._intersection_rows(np.asarray([dense]))[0]
            live = np.nonzero(current)[0]
            voter = int(self._ext_ids[dense])
            if len(live) == 1:
                p = int(live[0])
                self.assign(voter, p, phase=SAFE, origin="singleton")
                applied.append((voter, p))
            elif len(live) == 0:
                if dense not in self._empty_logged:
                    self._empty_logged.add(dense)
                    self._log("empty_intersection", voter=voter)
        return applied

    def _safe_fixpoint(self) -> list[tuple[int, int]]:
        applied: list[tuple[int, int]] = []
        while self._pending_frames or self._pending_voters:
            frames, self._pending_frames = self._pending_frames, set()
            applied += self._sweep_homogeneous(frames)
            voters, self._pending_voters = self._pending_voters, set()
            applied += self._sweep_singletons(voters)
        return applied

    # -- likelihood -------------------------------------------------------

    def _log_rows(self, dense_ids: np.ndarray) -> np.ndarray:
        """Per-cycle log frame-frequency rows, summed over cycles."""
        P = len(self.party_names)
        acc = np.zeros((len(dense_ids), P))
        with np.errstate(divide="ignore"):
            for u in range(self.cycles):
                t = self._frame_of[u, dense_ids]
                acc += np.log(self._raw[u, t, :]) - np.log(self._size[u, t])[:, None]
        return acc

    def _viterbi_rows(self, dense_ids: np.ndarray, logM: np.ndarray) -> np.ndarray:
        """Max over per-cycle party lists of frame-frequency and transition
        log-mass, per final-cycle party."""
        with np.errstate(divide="ignore"):
            t = self._frame_of[0, dense_ids]
            d = np.log(self._raw[0, t, :]) - np.log(self._size[0, t])[:, None]
            for u in range(1, self.cycles):
                d = (d[:, :, None] + logM[None, :, :]).max(axis=1)
                t = self._frame_of[u, dense_ids]
                d += np.log(self._raw[u, t, :]) - np.log(self._size[u, t])[:, None]
        return d

    def _viterbi_path(self, dense: int, final_party: int, logM: np.ndarray) -> list[int]:
        with np.errstate(divide="ignore"):
            t = int(self._frame_of[0, dense])
            d = np.log(self._raw[0, t, :].astype(float)) - np.log(self._size[0, t])
            back: list[np.ndarray] = []
            for u in range(1, self.cycles):
                scores = d[:, None] + logM
                back.append(np.argmax(scores, axis=0))
                t = int(self._frame_of[u, dense])
                d = scores.max(axis=0) + np.log(self._raw[u, t, :].astype(float)) - np.log(
                    self._size[u, t]
                )
        path = [final_party]
        for pointers in reversed(back):
            path.append(int(pointers[path[-1]]))
        path.reverse()
        return path

    def _prepare_likelihood(self, transition: TransitionMatrix | None) -> None:
        if self._logL is None or self._transition_obj is not transition:
            self._logL = np.full((self.n, len(self.party_names)), -np.inf)
            self._touched = set(np.nonzero(self._alive)[0].tolist())
            self._transition_obj = transition
            if transition is not None:
                if len(transition.rows) != len(self.party_names):
                    raise MatrixMismatch(
                        f"matrix covers {len(transition.rows)} parties, station "
                        f"roster has {len(self.party_names)}"
                    )
                with np.errstate(divide="ignore"):
                    self._logM = np.log(transition.as_array())
            else:
                self._logM = None
        if self._touched:
            rows = np.asarray(
                sorted(i for i in self._touched if self._alive[i]), dtype=np.int64
            )
            if len(rows):
                if self._logM is None:
                    self._logL[rows] = self._log_rows(rows)
                else:
                    self._logL[rows] = self._viterbi_rows(rows, self._logM)
            self._touched = set()

    def likelihoods(self, transition: TransitionMatrix | None = None) -> np.ndarray:
        """Likelihood matrix over (unassigned voters ascending, party)."""
        self._prepare_likelihood(transition)
        rows = np.nonzero(self._alive)[0]
        return np.exp(self._logL[rows])

    def _unsafe_step(self, transition: TransitionMatrix | None) -> tuple[int, int]:
        self._prepare_likelihood(transition)
        flat = int(np.argmax(self._logL))
        P = len(self.party_names)
        dense, party = divmod(flat, P)
        if not np.isfinite(self._logL[dense, party]):
            return self._fallback_assignment()
        voter = int(self._ext_ids[dense])
        per_cycle = None
        if self._logM is not None and self.cycles > 1:
            per_cycle = self._viterbi_path(dense, party, self._logM)
        self.assign(voter, party, phase=UNSAFE, parties_by_cycle=per_cycle,
                    origin="likelihood")
        return voter, party

    def _fallback_assignment(self) -> tuple[int, int]:
        """Every live likelihood is zero: assign the lowest-id voter the
        remaining-tally-heaviest party among her frames' supports."""
        dense = int(np.nonzero(self._alive)[0][0])
        supports = np.zeros(len(self.party_names), dtype=bool)
        for u in range(self.cycles):
            t = int(self._frame_of[u, dense])
            supports |= self._raw[u, t, :] > 0
        if not supports.any():
            supports[:] = True
        weights = np.where(supports, self._remaining[-1], np.iinfo(np.int64).min)
        party = int(np.argmax(weights))
        voter = int(self._ext_ids[dense])
        self._log("all_zero_likelihood", voter=voter, party=party)
        self.assign(voter, party, phase=UNSAFE, origin="fallback")
        return voter, party


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def find_homogeneous_frames(state: AttackState) -> list[tuple[int, int]]:
    """One pass over all live frames; assigns single-party frames wholesale."""
    candidates = [
        (u, t)
        for u in range(state.cycles)
        for t in range(state.frames_per_cycle)
    ]
    return state._sweep_homogeneous(candidates)


def find_single_option_voters(state: AttackState) -> list[tuple[int, int]]:
    """One pass over all unassigned voters; assigns singleton intersections."""
    return state._sweep_singletons(np.nonzero(state._alive)[0].tolist())


def safe_phase(state: AttackState) -> AttackResult:
    """Alternate the two safe rules until neither makes progress."""
    sweeps = 0
    while True:
        applied = find_homogeneous_frames(state)
        applied += find_single_option_voters(state)
        sweeps += 1
        if not applied:
            break
        if sweeps > state.n + 1:
            raise AssertionError("safe phase failed to reach a fixpoint")
    state._pending_frames.clear()
    state._pending_voters.clear()
    return state.result(mode="safe_only")


def likelihood_matrix(
    state: AttackState, transition: TransitionMatrix | None = None
) -> np.ndarray:
    """Product of per-frame vote frequencies, per (unassigned voter, party).

    Rows follow ``state.unassigned_voters()`` order.  With a transition
    matrix, entry (v, p) is the best score over per-cycle party lists whose
    final entry is p.
    """
    return state.likelihoods(transition)


def unsafe_step(
    state: AttackState, transition: TransitionMatrix | None = None
) -> tuple[int, int]:
    """Assign the argmax-likelihood pair; ties break toward the lower voter
    id, then the lower party index."""
    if state.is_complete:
        raise ValueError("no unassigned voters left")
    return state._unsafe_step(transition)


def run_attack(
    observations: ObservationSet,
    mode: str = "full",
    transition: TransitionMatrix | None = None,
    use_tally_constraint: bool = False,
    record_trace: bool = False,
) -> AttackResult:
    """Run the attack on one station.

    ``safe_only`` stops at the safe fixpoint; ``full`` alternates greedy
    likelihood assignments with safe fixpoints until every voter has a
    party.  Deterministic in all arguments.
    """
    if mode not in ("safe_only", "full"):
        raise ValueError(f"unknown mode {mode!r}")
    state = AttackState(
        observations,
        use_tally_constraint=use_tally_constraint,
        record_trace=record_trace,
    )
    state._safe_fixpoint()
    if mode == "safe_only":
        return state.result(mode)
    while not state.is_complete:
        state._unsafe_step(transition)
        state._safe_fixpoint()
    return state.result(mode)
