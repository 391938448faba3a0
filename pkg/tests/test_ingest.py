from datetime import date, datetime, timedelta

import numpy as np
import pytest

from mandicast.ingest import (
    MandiMeta,
    ParseError,
    RawPriceRecord,
    WeatherSeries,
    parse_mandi_csv,
    parse_price_csv,
    parse_weather_csv,
    shortlist_mandis,
    write_mandi_csv,
    write_price_csv,
    write_weather_csv,
)

PRICE_HEADER = "mandi_id,crop,date,min_price,max_price,modal_price,arrival\n"
WEATHER_HEADER = "mandi_id,timestamp,temperature,precipitation,solar_radiation,humidity\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestParsePrices:
    def test_missing_cells_stay_missing(self, tmp_path):
        p = write(tmp_path, "p.csv", PRICE_HEADER + "M001,tomato,2018-01-02,,,,\n")
        (rec,) = parse_price_csv(p)
        assert rec.modal_price is None
        assert rec.arrival is None

    def test_direct_field_mapping(self, tmp_path):
        p = write(tmp_path, "p.csv", PRICE_HEADER + "M001,tomato,2018-01-02,1100,1300,1200,30\n")
        (rec,) = parse_price_csv(p)
        assert rec == RawPriceRecord("M001", "tomato", date(2018, 1, 2), 1200.0, 30.0)

    def test_invalid_month_reports_row(self, tmp_path):
        p = write(tmp_path, "p.csv", PRICE_HEADER + "M001,tomato,2018-13-02,,,1200,30\n")
        with pytest.raises(ParseError) as err:
            parse_price_csv(p)
        assert err.value.row == 2
        assert "row 2" in str(err.value)

    def test_duplicate_key_names_the_key(self, tmp_path):
        rows = "M001,tomato,2018-01-02,,,1200,30\nM001,tomato,2018-01-02,,,1250,31\n"
        p = write(tmp_path, "p.csv", PRICE_HEADER + rows)
        with pytest.raises(ParseError, match="M001.*tomato.*2018-01-02"):
            parse_price_csv(p)

    def test_negative_value_rejected(self, tmp_path):
        p = write(tmp_path, "p.csv", PRICE_HEADER + "M001,tomato,2018-01-02,,,-5,30\n")
        with pytest.raises(ParseError, match="negative"):
            parse_price_csv(p)

    def test_wrong_column_count(self, tmp_path):
        p = write(tmp_path, "p.csv", PRICE_HEADER + "M001,tomato,2018-01-02,1200\n")
        with pytest.raises(ParseError, match="columns"):
            parse_price_csv(p)

    def test_no_fabricated_values(self, tmp_path):
        # non-missing outputs == non-empty input cells, counted per field
        rng = np.random.default_rng(5)
        lines = [PRICE_HEADER]
        n_price = n_arrival = 0
        for i in range(200):
            price = "" if rng.random() < 0.4 else f"{rng.uniform(100, 2000):.2f}"
            arrival = "" if rng.random() < 0.4 else f"{rng.uniform(1, 90):.2f}"
            n_price += price != ""
            n_arrival += arrival != ""
            day = date(2018, 1, 1) + timedelta(days=i)
            lines.append(f"M{i % 7},tomato,{day.isoformat()},,,{price},{arrival}\n")
        records = parse_price_csv(write(tmp_path, "p.csv", "".join(lines)))
        assert sum(r.modal_price is not None for r in records) == n_price
        assert sum(r.arrival is not None for r in records) == n_arrival

    def test_round_trip_identity(self, tmp_path):
        rng = np.random.default_rng(11)
        records = []
        for i in range(50):
            records.append(
                RawPriceRecord(
                    f"M{i % 5}",
                    "potato",
                    date(2015, 3, 1) + timedelta(days=i),
                    None if rng.random() < 0.3 else round(float(rng.uniform(50, 3000)), 2),
                    None if rng.random() < 0.3 else round(float(rng.uniform(0, 80)), 2),
                )
            )
        path = tmp_path / "rt.csv"
        write_price_csv(path, records)
        assert parse_price_csv(path) == records


class TestParseWeather:
    def make_rows(self, mandi, start, hours):
        rows = []
        for h in range(hours):
            ts = (start + timedelta(hours=h)).isoformat(timespec="minutes")
            rows.append(f"{mandi},{ts},25.1,0.0,300.5,60.2\n")
        return rows

    def test_length_preserved(self, tmp_path):
        rows = self.make_rows("M1", datetime(2018, 1, 1), 48)
        (series,) = parse_weather_csv(write(tmp_path, "w.csv", WEATHER_HEADER + "".join(rows)))
        assert series.hours == 48
        assert series.data.shape == (4, 48)

    def test_gap_error_names_missing_hour(self, tmp_path):
        text = WEATHER_HEADER + (
            "M1,2018-01-01T05:00,25,0,300,60\n"
            "M1,2018-01-01T07:00,25,0,300,60\n"
        )
        with pytest.raises(ParseError, match="M1.*06:00"):
            parse_weather_csv(write(tmp_path, "w.csv", text))

    def test_duplicate_hour(self, tmp_path):
        text = WEATHER_HEADER + (
            "M1,2018-01-01T05:00,25,0,300,60\n"
            "M1,2018-01-01T05:00,25,0,300,60\n"
        )
        with pytest.raises(ParseError, match="duplicate"):
            parse_weather_csv(write(tmp_path, "w.csv", text))

    def test_interleaved_mandis(self, tmp_path):
        a = self.make_rows("A", datetime(2018, 1, 1), 24)
        b = self.make_rows("B", datetime(2018, 1, 1), 24)
        mixed = [row for pair in zip(a, b) for row in pair]
        series = parse_weather_csv(write(tmp_path, "w.csv", WEATHER_HEADER + "".join(mixed)))
        assert [s.mandi_id for s in series] == ["A", "B"]
        assert all(s.hours == 24 for s in series)

    def test_missing_cell_is_error(self, tmp_path):
        text = WEATHER_HEADER + "M1,2018-01-01T05:00,25,,300,60\n"
        with pytest.raises(ParseError, match="missing precipitation"):
            parse_weather_csv(write(tmp_path, "w.csv", text))

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        data = np.round(rng.uniform(0, 100, size=(4, 30)), 4)
        series = WeatherSeries("M9", datetime(2016, 5, 1), data)
        path = tmp_path / "w.csv"
        write_weather_csv(path, [series])
        (back,) = parse_weather_csv(path)
        assert back.mandi_id == "M9"
        assert back.start == series.start
        np.testing.assert_array_equal(back.data, series.data)


class TestMandis:
    def test_bounds_enforced(self):
        with pytest.raises(ValueError, match="latitude"):
            MandiMeta("M1", "x", 91.0, 0.0)
        with pytest.raises(ValueError, match="longitude"):
            MandiMeta("M1", "x", 0.0, -181.0)

    def test_round_trip(self, tmp_path):
        mandis = [MandiMeta("M1", "Azadpur", 28.7041, 77.1025), MandiMeta("M2", "Koyambedu", 13.07, 80.19)]
        path = tmp_path / "m.csv"
        write_mandi_csv(path, mandis)
        assert parse_mandi_csv(path) == mandis

    def test_duplicate_id(self, tmp_path):
        text = "mandi_id,name,latitude,longitude\nM1,a,10,10\nM1,b,11,11\n"
        with pytest.raises(ParseError, match="duplicate"):
            parse_mandi_csv(write(tmp_path, "m.csv", text))


def _records_for(mandi, years, days_per_year, both=True):
    out = []
    for y in years:
        for i in range(days_per_year):
            out.append(
                RawPriceRecord(
                    mandi, "tomato", date(y, 2, 1) + timedelta(days=i), 100.0, 5.0 if both else None
                )
            )
    return out


class TestShortlist:
    YEARS = range(2014, 2019)

    def test_four_days_every_year_included(self):
        records = _records_for("M1", self.YEARS, 4)
        assert shortlist_mandis(records, "tomato", self.YEARS) == {"M1"}

    def test_three_days_one_year_excluded(self):
        records = [r for r in _records_for("M1", self.YEARS, 4)
                   if not (r.date.year == 2016 and r.date.day == 4)]
        assert sum(1 for r in records if r.date.year == 2016) == 3
        assert shortlist_mandis(records, "tomato", self.YEARS) == set()

    def test_price_only_days_do_not_count(self):
        records = _records_for("M1", self.YEARS, 4, both=False)
        assert shortlist_mandis(records, "tomato", self.YEARS) == set()

    def test_empty_result_is_valid(self):
        assert shortlist_mandis([], "tomato", self.YEARS) == set()

    def test_monotone_under_added_days(self):
        rng = np.random.default_rng(17)
        base = []
        for m in range(6):
            for y in self.YEARS:
                n = int(rng.integers(0, 8))
                base.extend(_records_for(f"M{m}", [y], n))
        before = shortlist_mandis(base, "tomato", self.YEARS)
        extra = _records_for("M0", self.YEARS, 10) + _records_for("M5", [2016], 6)
        seen = {(r.mandi_id, r.crop, r.date) for r in base}
        grown = base + [r for r in extra if (r.mandi_id, r.crop, r.date) not in seen]
        after = shortlist_mandis(grown, "tomato", self.YEARS)
        assert before <= after
