import io

import numpy as np
import pytest

from lgrowth.data import (
    DataError, LongitudinalDataset, Observation, OutcomeSpec, dataset_to_csv, default_outcomes,
    encode_covariates, parse_dataset, summarize, summary_to_csv, validate_outcomes,
)

HEADER = "subject_id,session,age,position,post_season," + ",".join(f"y{d}" for d in range(1, 11))


def row(sid="p1", session="1", age="10.1", position="midfielder", post="0",
        y=("120", "6.5", "5.4", "6.1", "30", "", "", "12", "7", "7.2")):
    return ",".join([sid, session, age, position, post, *y])


def test_default_taxonomy():
    outs = default_outcomes()
    assert [o.name for o in outs if o.is_count] == ["y1", "y5", "y8", "y9"]
    assert [o.name for o in outs if o.channel == "speed"] == ["y2", "y3", "y4", "y6", "y7", "y10"]
    assert [o.facet for o in outs] == [1] * 7 + [2] * 3
    assert [o.name for o in outs if o.fixed] == ["y1", "y8"]


def test_validate_outcomes_requires_one_anchor_per_facet():
    outs = list(default_outcomes())
    outs[0] = OutcomeSpec(1, "x", "count", "accuracy", 1, "free")
    with pytest.raises(ValueError, match="facet 1"):
        validate_outcomes(outs)


@pytest.mark.parametrize("position, post, expected", [
    ("goalkeeper", 0, (0, 0, 0, 0)),
    ("forward", 1, (1, 1, 0, 0)),
    ("defender", 0, (0, 0, 0, 1)),
])
def test_encode_covariates(position, post, expected):
    x = encode_covariates(Observation("a", "1", 11.0, position, post, (1.0,) * 10))
    np.testing.assert_array_equal(x, expected)


def test_encoding_injective():
    codes = {tuple(encode_covariates(Observation("a", "1", 11.0, p, s, ())))
             for p in ("forward", "midfielder", "defender", "goalkeeper") for s in (0, 1)}
    assert len(codes) == 8


def test_parse_three_rows_one_subject():
    text = "\n".join([HEADER, row(age="10.6", session="2"), row(age="10.1"), row(age="11.2", session="3")]) + "\n"
    ds = parse_dataset(text)
    assert ds.n_subjects == 1 and ds.n_rows == 3
    np.testing.assert_array_equal(ds.age, [10.1, 10.6, 11.2])  # occasions follow age, not file order
    np.testing.assert_array_equal(ds.occasion, [0, 1, 2])
    assert ds.mask[:, 5].all() and not ds.mask[:, 0].any()


@pytest.mark.parametrize("bad_row, match", [
    (row(position="striker"), r"row 2: unknown position 'striker'"),
    (row(y=("-1",) + ("",) * 9), r"row 2: count y1"),
    (row(y=("1.5",) + ("",) * 9), r"row 2: count y1"),
    (row(post="2"), r"row 2: post_season"),
    (row(age="abc"), r"row 2: age"),
    (row(age="50"), r"row 2: age"),
    (row(y=("1", "x") + ("",) * 8), r"row 2: y2"),
])
def test_parse_rejections_name_row(bad_row, match):
    with pytest.raises(DataError, match=match):
        parse_dataset(HEADER + "\n" + bad_row + "\n")


def test_duplicate_key_rejected():
    with pytest.raises(DataError, match=r"row 3: duplicate key"):
        parse_dataset("\n".join([HEADER, row(), row(age="10.9")]) + "\n")


def test_outcome_count_mismatch():
    with pytest.raises(DataError, match="do not match"):
        parse_dataset("subject_id,session,age,position,post_season,y1,y2\np,1,10,forward,0,1,2\n")


def test_missing_column_and_field_count():
    with pytest.raises(DataError, match="missing columns"):
        parse_dataset(HEADER.replace("position,", "") + "\n")
    with pytest.raises(DataError, match="expected 15 fields"):
        parse_dataset(HEADER + "\np1,1,10\n")


def test_fully_missing_rows_dropped():
    empty = row(session="2", age="10.5", y=("",) * 10)
    ds = parse_dataset("\n".join([HEADER, row(), empty]) + "\n")
    assert ds.n_rows == 1


def test_round_trip_preserves_values_and_mask(tmp_path):
    text = "\n".join([HEADER, row(), row(sid="p2", age="12.25", position="forward", post="1",
                                         y=("", "6.123456789", "", "", "", "1e-3", "", "", "0", ""))]) + "\n"
    ds = parse_dataset(text)
    again = parse_dataset(dataset_to_csv(ds))
    np.testing.assert_array_equal(ds.mask, again.mask)
    np.testing.assert_array_equal(ds.y[~ds.mask], again.y[~again.mask])
    np.testing.assert_array_equal(ds.age, again.age)
    path = tmp_path / "d.csv"
    path.write_text(text)
    assert parse_dataset(path).n_rows == 2
    assert parse_dataset(io.StringIO(text)).n_rows == 2


def test_dataset_is_read_only():
    ds = parse_dataset(HEADER + "\n" + row() + "\n")
    with pytest.raises(ValueError):
        ds.y[0, 0] = 3.0


def test_summarize_single_occasion():
    ds = parse_dataset(HEADER + "\n" + row(y=("5",) + ("",) * 9) + "\n")
    s = summarize(ds)
    assert s[0].mean_obs_per_subject == 1 and s[0].missing_proportion == 0
    assert all(r.missing_proportion == 1.0 and r.mean_obs_per_subject == 0 for r in s[1:])
    assert summary_to_csv(s).splitlines()[0] == "variable,outcome,mean_obs_per_player,missing_proportion"


def test_summarize_fully_observed_and_empty():
    full = row(y=("1", "2", "3", "4", "5", "6", "7", "8", "9", "10"))
    ds = parse_dataset(HEADER + "\n" + full + "\n")
    assert all(r.missing_proportion == 0 for r in summarize(ds))
    empty = LongitudinalDataset.from_observations([])
    with pytest.raises(DataError):
        summarize(empty)


def test_repeated_age_rejected():
    with pytest.raises(DataError, match="repeated age"):
        parse_dataset("\n".join([HEADER, row(), row(session="2")]) + "\n")
