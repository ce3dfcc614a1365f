from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swfield.connectivity import (
    BackmapParams, ConnectivityError, HelioPosition, ImageIndex, ImageIndexEntry, InsideSourceSurfaceError,
    InvalidSpeedError, Split, SplitRules, UnpairedError, assign_split, assign_splits, backmap,
    backmap_footpoint, forward_fill, pair_indices, pair_with_image, read_image_index, unmap_longitude,
    write_image_index,
)

# r = 0.5 AU, r_ss = 2.5 R_sun, 400 km/s, 25.38 d; hand arithmetic, frozen
TRAVEL_TIME_S = 182649.213375
DELTA_LON_DEG = 29.985752130122144


def ts(text):
    return datetime.fromisoformat(text).replace(tzinfo=timezone.utc).timestamp()


def test_reference_case():
    fp = backmap_footpoint(HelioPosition(0.5, 0.0, 10.0), 400.0)
    assert fp.travel_time == pytest.approx(TRAVEL_TIME_S, rel=1e-12)
    assert fp.travel_time == pytest.approx(1.83e5, rel=0.005)
    assert fp.lon - 10.0 == pytest.approx(DELTA_LON_DEG, abs=1e-9)


def test_fast_limit():
    fp = backmap_footpoint(HelioPosition(0.5, 0.0, 123.4), 1e9)
    assert fp.lon == pytest.approx(123.4, abs=1e-4)
    assert fp.travel_time < 0.1


def test_latitude_preserved():
    assert backmap_footpoint(HelioPosition(0.3, 12.3, 0.0), 500.0).lat == 12.3


def test_longitude_wraps():
    fp = backmap_footpoint(HelioPosition(0.5, 0.0, 350.0), 400.0)
    assert 0.0 <= fp.lon < 360.0
    assert fp.lon == pytest.approx(350.0 + DELTA_LON_DEG - 360.0, abs=1e-9)


def test_backmap_errors():
    with pytest.raises(InvalidSpeedError):
        backmap_footpoint(HelioPosition(0.5, 0.0, 0.0), 0.0)
    with pytest.raises(InsideSourceSurfaceError):
        backmap_footpoint(HelioPosition(0.01, 0.0, 0.0), 400.0)
    with pytest.raises(ConnectivityError):
        HelioPosition(0.5, 95.0, 0.0)


def test_monotone_in_speed():
    v = np.linspace(200.0, 900.0, 100)
    _, lon, _ = backmap(0.5, 0.0, 0.0, v)
    assert np.all(np.diff(lon) < 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 1.5), st.floats(0, 359.999), st.floats(150, 1500))
def test_round_trip(r, lon, v):
    _, fp_lon, tt = backmap(r, 0.0, lon, v)
    back = unmap_longitude(fp_lon, tt)
    err = abs((float(back) - lon + 180.0) % 360.0 - 180.0)
    assert err < 1e-9


def test_custom_params():
    p = BackmapParams(rotation_period_days=27.27, source_surface_au=0.0)
    _, lon, tt = backmap(1.0, 0.0, 0.0, 400.0, p)
    assert float(lon) == pytest.approx(360.0 / (27.27 * 86400) * 1.495978707e11 / 4e5, rel=1e-12)


def test_forward_fill():
    out = forward_fill([0.0, 3600.0], [1.0, 2.0], [-60.0, 0.0, 1800.0, 3600.0, 7200.0])
    assert list(out) == [1.0, 1.0, 1.0, 2.0, 2.0]


# -- pairing ------------------------------------------------------------------

NOON = ts("2020-05-10T12:00:00")
INDEX = ImageIndex([int(NOON), int(NOON + 720)], [0, 1])


def test_pair_nearest():
    assert pair_with_image(NOON + 300, 0.0, INDEX).image_key == int(NOON)


def test_pair_tie_goes_earlier():
    assert pair_with_image(NOON + 360, 0.0, INDEX).image_key == int(NOON)


def test_pair_uses_emission_time():
    assert pair_with_image(NOON + 1000, 640.0, INDEX).image_key == int(NOON)


def test_unpaired():
    with pytest.raises(UnpairedError):
        pair_with_image(NOON + 1800, 0.0, INDEX, tolerance=360.0)


def test_pair_accepts_entry_list():
    entries = [ImageIndexEntry(int(NOON), 0), ImageIndexEntry(int(NOON + 720), 1)]
    assert pair_with_image(NOON + 700, 0.0, entries).embedding_offset == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2000, 5000), min_size=1, max_size=50))
def test_pairing_is_a_function(offsets):
    keys = np.arange(0, 3600, 720)
    idx = pair_indices(np.array(offsets), 0.0, keys, 720.0)
    assert idx.shape == (len(offsets),)
    emit = np.array(offsets)
    for i, j in zip(emit, idx):
        d = np.abs(keys - i)
        if j < 0:
            assert d.min() > 720.0
        else:
            assert d[j] == d.min() and (d[:j] > d[j]).all()


def test_index_must_be_sorted():
    with pytest.raises(ConnectivityError):
        ImageIndex([720, 0], [0, 1])


def test_index_csv_roundtrip(tmp_path):
    write_image_index(tmp_path / "i.csv", INDEX)
    back = read_image_index(tmp_path / "i.csv")
    assert np.array_equal(back.keys, INDEX.keys) and np.array_equal(back.offsets, INDEX.offsets)


# -- splits -------------------------------------------------------------------

@pytest.mark.parametrize("day,split", [
    ("2020-05-10", Split.TRAIN),
    ("2021-02-14", Split.VALIDATION),
    ("2023-02-01", Split.TEST),
    ("2018-11-15", Split.EXCLUDED),
    ("2024-02-01", Split.EXCLUDED),
    ("2023-12-31", Split.TRAIN),
    ("2019-03-31", Split.VALIDATION),
])
def test_split_examples(day, split):
    assert assign_split(ts(day + "T12:00:00")) is split


def test_month_edges():
    assert assign_split(ts("2022-03-31T23:59:59")) is Split.VALIDATION
    assert assign_split(ts("2022-04-01T00:00:00")) is Split.TRAIN


def test_vectorised_matches_scalar(rng):
    t = rng.uniform(ts("2018-01-01T00:00:00"), ts("2025-01-01T00:00:00"), 500)
    assert list(assign_splits(t)) == [assign_split(x) for x in t]


def test_split_rules_roundtrip():
    rules = SplitRules.from_dict({"test": {"years": [2023, 2024]}})
    assert SplitRules.from_dict(rules.to_dict()) == rules
    assert rules.assign(2024, 2) is Split.TEST
    with pytest.raises(ValueError):
        SplitRules.from_dict({"holdout": {}})
