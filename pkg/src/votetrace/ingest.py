"""Parsing and serialization for the pipeline's file formats.

Three formats cross module boundaries:

* ``stations.csv`` -- published per-station results.  Header
  ``station_id,eligible,arrived,legitimate,<party...>[,t+2h,...]``; the
  party-name columns sit between ``legitimate`` and the optional turnout
  checkpoint columns (``t+<hours>h``, accumulated arrived fraction of
  eligible).  Lines starting with ``#`` are comments.
* ``observations.json`` / ``truth.json`` -- a simulated campaign, see
  ``write_observations`` / ``write_truth`` for the exact fields.
* ``assignments.json`` -- attack output, see ``write_assignments``.

All documents carry a top-level ``format_version``.  Rows with internal
inconsistencies are skipped with a diagnostic rather than aborting the
file; real published data contains anomalies.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

from . import FORMAT_VERSION, __version__
from .model import (
    FrameObservation,
    GroupMap,
    ObservationSet,
    Party,
    Tally,
    VoteTraceError,
)

log = logging.getLogger(__name__)

FIXED_COLUMNS = ("station_id", "eligible", "arrived", "legitimate")
CHECKPOINT_RE = re.compile(r"^t\+(\d+(?:\.\d+)?)h$")

ELIGIBLE_LEGAL_CAP = 900  # statutory bound on assigned voters; exceeding is suspicious, not fatal
DEFAULT_DAY_LENGTH = 15.0  # hours; makes 30/15/7 frames mean half-hour/hour/two-hour counts


class SchemaError(VoteTraceError):
    """The station CSV header is missing or misorders a fixed column."""


class RowError(VoteTraceError):
    """One station row is internally inconsistent; the row is skipped."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonMonotoneCheckpoints(VoteTraceError):
    """Accumulated turnout checkpoints must be non-decreasing."""


class ConfigError(VoteTraceError):
    """The group configuration is malformed."""


class FormatError(VoteTraceError):
    """A JSON document does not match the expected schema or version."""


@dataclass(frozen=True)
class StationRecord:
    """One polling station's published results.

    ``turnout_checkpoints`` holds (hour offset from poll opening,
    accumulated arrived fraction of eligible) pairs; when present, the last
    fraction equals arrived/eligible.
    """

    station_id: str
    eligible: int
    arrived: int
    legitimate: int
    party_names: tuple[str, ...]
    tally: Tally
    turnout_checkpoints: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if not (0 <= self.legitimate <= self.arrived <= self.eligible):
            raise ValueError(
                f"station {self.station_id}: require legitimate <= arrived <= "
                f"eligible, got {self.legitimate}/{self.arrived}/{self.eligible}"
            )
        if len(self.party_names) != len(self.tally.counts):
            raise ValueError(f"station {self.station_id}: party/tally length mismatch")
        if self.tally.total != self.legitimate:
            raise ValueError(
                f"station {self.station_id}: tally sums to {self.tally.total}, "
                f"expected {self.legitimate} legitimate votes"
            )
        if self.turnout_checkpoints:
            fractions = [f for _, f in self.turnout_checkpoints]
            if any(b < a for a, b in zip(fractions, fractions[1:])):
                raise ValueError(f"station {self.station_id}: decreasing checkpoints")
            final = self.arrived / self.eligible if self.eligible else 0.0
            if abs(fractions[-1] - final) > 1e-9:
                raise ValueError(
                    f"station {self.station_id}: last checkpoint {fractions[-1]} "
                    f"!= arrived/eligible {final}"
                )
        if self.eligible > ELIGIBLE_LEGAL_CAP:
            log.warning(
                "station %s: eligible %d exceeds the legal cap of %d",
                self.station_id,
                self.eligible,
                ELIGIBLE_LEGAL_CAP,
            )


@dataclass(frozen=True)
class TurnoutCurve:
    """Piecewise-linear accumulated-arrival fraction over the voting day.

    Anchored at (0, 0); constant after the last checkpoint.  ``points``
    are strictly increasing in the hour coordinate.
    """

    points: tuple[tuple[float, float], ...]
    day_length: float

    def __call__(self, hour: float) -> float:
        pts = ((0.0, 0.0),) + self.points
        if hour <= 0:
            return 0.0
        for (h0, f0), (h1, f1) in zip(pts, pts[1:]):
            if hour <= h1:
                if h1 == h0:
                    return f1
                return f0 + (hour - h0) * (f1 - f0) / (h1 - h0)
        return pts[-1][1]

    @property
    def final(self) -> float:
        return self.points[-1][1] if self.points else 0.0


def parse_turnout_curve(
    record: StationRecord, day_length: float = DEFAULT_DAY_LENGTH
) -> TurnoutCurve:
    """Build the station's arrival curve from its checkpoints.

    Without checkpoints the default is the uniform curve: a straight line
    from (0, 0) to (day_length, arrived/eligible).
    """
    final = record.arrived / record.eligible if record.eligible else 0.0
    if not record.turnout_checkpoints:
        return TurnoutCurve(points=((day_length, final),), day_length=day_length)
    hours = [h for h, _ in record.turnout_checkpoints]
    fractions = [f for _, f in record.turnout_checkpoints]
    if any(b <= a for a, b in zip(hours, hours[1:])):
        raise NonMonotoneCheckpoints(f"checkpoint hours not increasing: {hours}")
    if any(b < a for a, b in zip(fractions, fractions[1:])) or fractions[0] < 0:
        raise NonMonotoneCheckpoints(f"checkpoint fractions decrease: {fractions}")
    return TurnoutCurve(points=tuple(record.turnout_checkpoints), day_length=day_length)


def _split_header(header: Sequence[str]) -> tuple[tuple[str, ...], tuple[float, ...]]:
    if tuple(header[: len(FIXED_COLUMNS)]) != FIXED_COLUMNS:
        raise SchemaError(
            f"header must start with {','.join(FIXED_COLUMNS)}, got {header[:4]}"
        )
    parties: list[str] = []
    checkpoint_hours: list[float] = []
    for name in header[len(FIXED_COLUMNS):]:
        m = CHECKPOINT_RE.match(name)
        if m:
            checkpoint_hours.append(float(m.group(1)))
        elif checkpoint_hours:
            raise SchemaError(f"party column {name!r} after checkpoint columns")
        else:
            parties.append(name)
    if not parties:
        raise SchemaError("no party columns declared")
    return tuple(parties), tuple(checkpoint_hours)


def parse_station_results(
    source: IO[str] | IO[bytes], row_errors: list[RowError] | None = None
) -> list[StationRecord]:
    """Parse a stations.csv stream into StationRecords.

    Inconsistent rows raise nothing: each is skipped, logged, and appended
    to ``row_errors`` when a list is supplied.  A malformed header raises
    SchemaError.
    """
    text = source.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = [
        (i + 1, line)
        for i, line in enumerate(text.splitlines())
        if line.strip() and not line.startswith("#")
    ]
    if not lines:
        raise SchemaError("empty file")
    header = next(csv.reader([lines[0][1]]))
    party_names, checkpoint_hours = _split_header(header)
    expected_width = len(FIXED_COLUMNS) + len(party_names) + len(checkpoint_hours)

    records: list[StationRecord] = []
    for lineno, line in lines[1:]:
        row = next(csv.reader([line]))
        try:
            if len(row) != expected_width:
                raise ValueError(f"expected {expected_width} fields, got {len(row)}")
            station_id = row[0]
            try:
                eligible, arrived, legitimate = (int(x) for x in row[1:4])
                counts = tuple(int(x) for x in row[4 : 4 + len(party_names)])
            except ValueError:
                raise ValueError("non-integer count") from None
            checkpoints = tuple(
                (h, float(x))
                for h, x in zip(checkpoint_hours, row[4 + len(party_names):])
            )
            records.append(
                StationRecord(
                    station_id=station_id,
                    eligible=eligible,
                    arrived=arrived,
                    legitimate=legitimate,
                    party_names=party_names,
                    tally=Tally(counts),
                    turnout_checkpoints=checkpoints,
                )
            )
        except ValueError as exc:
            err = RowError(lineno, str(exc))
            log.warning("skipping station row: %s", err)
            if row_errors is not None:
                row_errors.append(err)
    return records


def write_station_results(records: Sequence[StationRecord], sink: IO[str]) -> None:
    """Serialize records to the canonical stations.csv form.

    All records must share one party roster and one checkpoint schedule;
    float checkpoints are written with repr so parse/serialize round-trips
    are byte-identical.
    """
    if not records:
        raise ValueError("nothing to write")
    party_names = records[0].party_names
    hours = tuple(h for h, _ in records[0].turnout_checkpoints)
    header = list(FIXED_COLUMNS) + list(party_names) + [f"t+{_fmt_hour(h)}h" for h in hours]
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(header)
    for r in records:
        if r.party_names != party_names:
            raise ValueError(f"station {r.station_id}: mixed party rosters")
        if tuple(h for h, _ in r.turnout_checkpoints) != hours:
            raise ValueError(f"station {r.station_id}: mixed checkpoint schedules")
        row = [r.station_id, r.eligible, r.arrived, r.legitimate]
        row += [str(c) for c in r.tally.counts]
        row += [repr(f) for _, f in r.turnout_checkpoints]
        writer.writerow(row)


def _fmt_hour(h: float) -> str:
    return str(int(h)) if float(h).is_integer() else repr(h)


def stations_to_string(records: Sequence[StationRecord]) -> str:
    buf = io.StringIO()
    write_station_results(records, buf)
    return buf.getvalue()


def build_group_map(config: IO[str] | IO[bytes] | None, parties: Sequence[str]) -> GroupMap:
    """Read a groups.json stream and produce a total GroupMap over ``parties``.

    The config maps group name -> list of party names; parties absent from
    it fall into MISC.  A None config maps everything to MISC.
    """
    named: Mapping[str, Sequence[str]] = {}
    if config is not None:
        raw = config.read()
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        try:
            named = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"groups config is not valid JSON: {exc}") from None
        if not isinstance(named, dict) or not all(
            isinstance(v, list) and all(isinstance(p, str) for p in v)
            for v in named.values()
        ):
            raise ConfigError("groups config must map group name to a list of party names")
    try:
        return GroupMap.build(named, parties)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------


def _dump(document: dict, sink: IO[str]) -> None:
    json.dump(document, sink, sort_keys=True, separators=(",", ":"))
    sink.write("\n")


def _load(source: IO[str] | IO[bytes], kind: str) -> dict:
    raw = source.read()
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    doc = json.loads(raw)
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise FormatError(f"expected a {kind!r} document")
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"unsupported format_version {doc.get('format_version')!r}, "
            f"this build reads {FORMAT_VERSION}"
        )
    return doc


def observations_document(observation_sets: Sequence[ObservationSet]) -> dict:
    """observations.json layout:

    ``{format_version, tool_version, kind: "observations", stations: [...]}``
    where each station holds ``station_id``, ``cycles``, ``frames_per_cycle``,
    ``groups`` (group name -> member party names), ``parties`` (per cycle,
    list of names), ``tallies`` (per cycle, list of counts) and ``frames``
    (per frame: ``cycle``, ``frame``, ``voters``, ``counts``).
    """
    stations = []
    for obs in observation_sets:
        groups = {name: list(members) for name, members in obs.group_map.groups}
        stations.append(
            {
                "station_id": obs.station_id,
                "cycles": obs.cycles,
                "frames_per_cycle": obs.frames_per_cycle,
                "groups": groups,
                "parties": [[p.name for p in cycle] for cycle in obs.parties],
                "tallies": [list(t.counts) for t in obs.tallies],
                "frames": [
                    {
                        "cycle": f.cycle,
                        "frame": f.frame_index,
                        "voters": sorted(f.voters),
                        "counts": list(f.raw_counts),
                    }
                    for f in obs.frames
                ],
            }
        )
    return {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "kind": "observations",
        "stations": stations,
    }


def write_observations(observation_sets: Sequence[ObservationSet], sink: IO[str]) -> None:
    _dump(observations_document(observation_sets), sink)


def read_observations(source: IO[str] | IO[bytes]) -> list[ObservationSet]:
    doc = _load(source, "observations")
    out = []
    for st in doc["stations"]:
        gm = GroupMap.build(
            {g: list(members) for g, members in st["groups"].items()},
            [name for cycle in st["parties"] for name in cycle],
        )
        parties = tuple(
            tuple(Party(i, name, gm.group_index(name)) for i, name in enumerate(cycle))
            for cycle in st["parties"]
        )
        frames = tuple(
            FrameObservation(
                cycle=f["cycle"],
                frame_index=f["frame"],
                voters=frozenset(f["voters"]),
                raw_counts=tuple(f["counts"]),
            )
            for f in st["frames"]
        )
        out.append(
            ObservationSet(
                station_id=st["station_id"],
                cycles=st["cycles"],
                frames_per_cycle=st["frames_per_cycle"],
                frames=frames,
                tallies=tuple(Tally(tuple(c)) for c in st["tallies"]),
                parties=parties,
                group_map=gm,
            )
        )
    return out


def truth_document(truths: Mapping[str, "object"]) -> dict:
    """truth.json layout:

    ``{format_version, tool_version, kind: "truth", stations: {station_id:
    {votes, frames}}}`` with ``votes[u-1][v]`` the party index voter v chose
    in cycle u, and ``frames[u-1][v]`` her 1-based arrival frame.
    """
    stations = {}
    for sid, truth in truths.items():
        stations[sid] = {
            "votes": [list(v) for v in truth.votes],
            "frames": [list(f) for f in truth.frames],
        }
    return {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "kind": "truth",
        "stations": stations,
    }


def write_truth(truths: Mapping[str, "object"], sink: IO[str]) -> None:
    _dump(truth_document(truths), sink)


def read_truth(source: IO[str] | IO[bytes]) -> dict[str, "object"]:
    from .simulator import GroundTruth

    doc = _load(source, "truth")
    return {
        sid: GroundTruth(
            votes=tuple(tuple(v) for v in st["votes"]),
            frames=tuple(tuple(f) for f in st["frames"]),
        )
        for sid, st in doc["stations"].items()
    }


def assignments_document(results: Sequence["object"]) -> dict:
    """assignments.json layout:

    ``{format_version, tool_version, kind: "assignments", stations: [...]}``
    where each station holds ``station_id``, ``mode``, ``n``,
    ``safe_count``, ``unsafe_count``, ``assignments`` (per voter: ``voter``,
    ``party`` index, ``phase``) and ``inconsistencies`` (per event: ``kind``
    plus context fields).
    """
    stations = []
    for r in results:
        stations.append(
            {
                "station_id": r.station_id,
                "mode": r.mode,
                "n": r.n,
                "safe_count": r.safe_count,
                "unsafe_count": r.unsafe_count,
                "assignments": [
                    {"voter": v, "party": party, "phase": phase}
                    for v, (party, phase) in sorted(r.assignments.items())
                ],
                "inconsistencies": [dict(e) for e in r.inconsistencies],
            }
        )
    return {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "kind": "assignments",
        "stations": stations,
    }


def write_assignments(results: Sequence["object"], sink: IO[str]) -> None:
    _dump(assignments_document(results), sink)


def read_assignments(source: IO[str] | IO[bytes]) -> list["object"]:
    from .attack import AttackResult

    doc = _load(source, "assignments")
    out = []
    for st in doc["stations"]:
        out.append(
            AttackResult(
                station_id=st["station_id"],
                mode=st["mode"],
                n=st["n"],
                assignments={
                    a["voter"]: (a["party"], a["phase"]) for a in st["assignments"]
                },
                inconsistencies=tuple(st["inconsistencies"]),
            )
        )
    return out


def read_transition_matrix(
    source: IO[str] | IO[bytes], party_names: Sequence[str]
) -> "object":
    """Read a transition config: JSON mapping party name -> {party name: prob}.

    Missing entries are zero.  Returns a TransitionMatrix aligned with
    ``party_names``.
    """
    from .simulator import TransitionMatrix

    raw = source.read()
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        table = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"transition config is not valid JSON: {exc}") from None
    if not isinstance(table, dict):
        raise ConfigError("transition config must map party name to a row")
    unknown = set(table) - set(party_names)
    if unknown:
        raise ConfigError(f"transition rows for unknown parties: {sorted(unknown)}")
    index = {name: i for i, name in enumerate(party_names)}
    size = len(party_names)
    rows = [[0.0] * size for _ in range(size)]
    for i in range(size):
        rows[i][i] = 1.0  # parties without a row keep their voters
    for name, row in table.items():
        if not isinstance(row, dict):
            raise ConfigError(f"row for {name!r} must be an object")
        unknown = set(row) - set(party_names)
        if unknown:
            raise ConfigError(f"row for {name!r} targets unknown parties: {sorted(unknown)}")
        rows[index[name]] = [float(row.get(p, 0.0)) for p in party_names]
    return TransitionMatrix(rows=tuple(tuple(r) for r in rows))
