import io
import json

import pytest

from votetrace.ingest import (
    ConfigError,
    FormatError,
    NonMonotoneCheckpoints,
    SchemaError,
    StationRecord,
    build_group_map,
    parse_station_results,
    parse_turnout_curve,
    read_observations,
    read_transition_matrix,
    read_truth,
    stations_to_string,
    write_observations,
    write_truth,
)
from votetrace.model import Tally
from votetrace.simulator import CorpusSpec, gen_corpus, simulate_campaign

HEADER = "station_id,eligible,arrived,legitimate,Aleph,Bet,Gimel\n"


def parse(text, errors=None):
    return parse_station_results(io.StringIO(text), row_errors=errors)


def test_parse_basic_row():
    records = parse(HEADER + "0001,600,366,360,120,140,100\n")
    assert len(records) == 1
    r = records[0]
    assert r.station_id == "0001"
    assert r.party_names == ("Aleph", "Bet", "Gimel")
    assert r.tally.total == 360


def test_parse_skips_arrived_above_eligible():
    errors = []
    records = parse(HEADER + "0001,600,601,360,120,140,100\n", errors)
    assert records == []
    assert len(errors) == 1 and errors[0].line == 2


def test_parse_skips_non_integer_count():
    errors = []
    records = parse(HEADER + "0001,600,366,x,120,140,100\n", errors)
    assert records == []
    assert "non-integer" in str(errors[0])


def test_parse_skips_tally_mismatch():
    errors = []
    parse(HEADER + "0001,600,366,360,120,140,99\n", errors)
    assert len(errors) == 1


def test_parse_keeps_good_rows_around_bad_ones():
    errors = []
    text = HEADER + "0001,600,366,360,120,140,100\nbad,1,2,3\n0002,500,300,299,99,100,100\n"
    records = parse(text, errors)
    assert [r.station_id for r in records] == ["0001", "0002"]
    assert len(errors) == 1


def test_parse_missing_fixed_column_is_schema_error():
    with pytest.raises(SchemaError):
        parse("station_id,eligible,legitimate,Aleph\n")


def test_parse_requires_party_columns():
    with pytest.raises(SchemaError):
        parse("station_id,eligible,arrived,legitimate,t+2h\n")


def test_parse_checkpoint_columns():
    text = (
        "station_id,eligible,arrived,legitimate,A,B,t+2h,t+4h\n"
        "0001,100,50,50,20,30,0.1,0.5\n"
    )
    (r,) = parse(text)
    assert r.turnout_checkpoints == ((2.0, 0.1), (4.0, 0.5))


def test_eligible_above_cap_warns_but_parses(caplog):
    text = HEADER + "0001,950,366,360,120,140,100\n"
    with caplog.at_level("WARNING"):
        records = parse(text)
    assert len(records) == 1
    assert "legal cap" in caplog.text


def test_roundtrip_100_station_corpus_is_byte_identical():
    records = gen_corpus(CorpusSpec(n_stations=100), seed=17)
    first = stations_to_string(records)
    reparsed = parse_station_results(io.StringIO(first))
    assert reparsed == records
    assert stations_to_string(reparsed) == first


def test_turnout_curve_linear_interpolation():
    r = StationRecord(
        station_id="s", eligible=100, arrived=20, legitimate=18,
        party_names=("A",), tally=Tally((18,)),
        turnout_checkpoints=((2.0, 0.1), (4.0, 0.2)),
    )
    curve = parse_turnout_curve(r, day_length=15.0)
    assert curve(3.0) == pytest.approx(0.15)
    assert curve(0.0) == 0.0
    # constant after the last checkpoint
    assert curve(10.0) == pytest.approx(0.2)
    assert curve(15.0) == pytest.approx(0.2)


def test_turnout_curve_default_is_uniform():
    r = StationRecord(
        station_id="s", eligible=100, arrived=60, legitimate=60,
        party_names=("A",), tally=Tally((60,)),
    )
    curve = parse_turnout_curve(r, day_length=15.0)
    assert curve(7.5) == pytest.approx(0.3)
    assert curve(15.0) == pytest.approx(0.6)


def test_turnout_curve_rejects_decreasing_fractions():
    # StationRecord construction already rejects decreasing checkpoints, so
    # bypass it to exercise the parser's own guard
    bad = StationRecord(
        station_id="s", eligible=100, arrived=10, legitimate=10,
        party_names=("A",), tally=Tally((10,)),
    )
    object.__setattr__(bad, "turnout_checkpoints", ((2.0, 0.2), (4.0, 0.1)))
    with pytest.raises(NonMonotoneCheckpoints):
        parse_turnout_curve(bad)


def test_station_record_rejects_decreasing_checkpoints():
    with pytest.raises(ValueError):
        StationRecord(
            station_id="s", eligible=100, arrived=10, legitimate=10,
            party_names=("A",), tally=Tally((10,)),
            turnout_checkpoints=((2.0, 0.2), (4.0, 0.1)),
        )


def test_station_record_requires_final_checkpoint_to_match_turnout():
    with pytest.raises(ValueError):
        StationRecord(
            station_id="s", eligible=100, arrived=10, legitimate=10,
            party_names=("A",), tally=Tally((10,)),
            turnout_checkpoints=((2.0, 0.05), (15.0, 0.2)),
        )


def test_build_group_map_2013_config():
    config = json.dumps(
        {
            "ultra orthodox": ["Yahadut Hatora", "Am Shalem", "Shas"],
            "left": ["Meretz", "HaAvoda"],
        }
    )
    gm = build_group_map(io.StringIO(config), ["Shas", "Meretz", "Likud"])
    assert gm.group_names[gm.group_index("Shas")] == "ultra orthodox"
    assert gm.group_names[gm.group_index("Likud")] == "MISC"


def test_build_group_map_empty_config_all_misc():
    gm = build_group_map(None, ["A", "B", "C"])
    assert all(gm.group_names[gm.group_index(p)] == "MISC" for p in "ABC")


def test_build_group_map_duplicate_party_is_config_error():
    config = json.dumps({"g1": ["X"], "g2": ["X"]})
    with pytest.raises(ConfigError):
        build_group_map(io.StringIO(config), ["X"])


def test_observations_json_roundtrip():
    records = gen_corpus(CorpusSpec(n_stations=2), seed=6)
    sets, truths = [], {}
    for r in records:
        obs, truth = simulate_campaign(r, cycles=2, frames=7, seed=6)
        sets.append(obs)
        truths[r.station_id] = truth
    buf = io.StringIO()
    write_observations(sets, buf)
    restored = read_observations(io.StringIO(buf.getvalue()))
    assert restored == sets

    tbuf = io.StringIO()
    write_truth(truths, tbuf)
    assert read_truth(io.StringIO(tbuf.getvalue())) == truths


def test_read_observations_rejects_wrong_version():
    doc = {"format_version": 99, "kind": "observations", "stations": []}
    with pytest.raises(FormatError):
        read_observations(io.StringIO(json.dumps(doc)))


def test_read_transition_matrix():
    config = json.dumps({"A": {"A": 0.9, "B": 0.1}, "B": {"B": 1.0}})
    m = read_transition_matrix(io.StringIO(config), ["A", "B", "C"])
    assert m.rows[0] == (0.9, 0.1, 0.0)
    assert m.rows[1] == (0.0, 1.0, 0.0)
    assert m.rows[2] == (0.0, 0.0, 1.0)  # unmentioned parties stay put


def test_read_transition_matrix_rejects_unknown_party():
    config = json.dumps({"Zz": {"Zz": 1.0}})
    with pytest.raises(ConfigError):
        read_transition_matrix(io.StringIO(config), ["A"])
