import io
import json
from pathlib import Path

import httpx
import numpy as np
import pytest

from gravipanel.errors import DataError
from gravipanel.ingest import (
    IndicatorRecord,
    MembershipRecord,
    PairStaticRecord,
    TradeFlowRecord,
    assemble_gravity_panel,
    compute_real_fx,
    fetch_indicators,
    read_indicator_csv,
    read_membership_csv,
    read_pair_static_csv,
    read_trade_csv,
)
from gravipanel.panel import EntityId

FIXTURES = Path(__file__).parent / "fixtures"


class TestTradeCsv:
    def test_direct_parse(self):
        stream = io.StringIO("reporter,partner,year,export_value_usd\nPER,CHN,2012,7849000000\n")
        records = read_trade_csv(stream)
        assert records == [TradeFlowRecord("PER", "CHN", 2012, 7.849e9)]

    def test_malformed_year_cites_line(self):
        stream = io.StringIO("reporter,partner,year,export_value_usd\nPER,CHN,20x2,100\n")
        with pytest.raises(DataError, match="line 2"):
            read_trade_csv(stream)

    def test_negative_value_rejected(self):
        stream = io.StringIO("reporter,partner,year,export_value_usd\nPER,CHN,2012,-5\n")
        with pytest.raises(DataError, match=">= 0"):
            read_trade_csv(stream)

    def test_missing_column_named(self):
        stream = io.StringIO("reporter,partner,year\nPER,CHN,2012\n")
        with pytest.raises(DataError, match="export_value_usd"):
            read_trade_csv(stream)


class TestIndicatorCsv:
    def test_direct_parse(self):
        stream = io.StringIO("country,year,indicator,value\nPER,2015,gdp_usd,189800000000\n")
        assert read_indicator_csv(stream) == [IndicatorRecord("PER", 2015, "gdp_usd", 1.898e11)]

    def test_empty_year(self):
        stream = io.StringIO("country,year,indicator,value\nCHL,,9999,\n")
        with pytest.raises(DataError, match="year"):
            read_indicator_csv(stream)

    def test_unknown_indicator(self):
        stream = io.StringIO("country,year,indicator,value\nPER,2015,magic,3\n")
        with pytest.raises(DataError, match="unknown indicator"):
            read_indicator_csv(stream)

    def test_nonpositive_gdp_rejected(self):
        stream = io.StringIO("country,year,indicator,value\nPER,2015,gdp_usd,0\n")
        with pytest.raises(DataError, match="> 0"):
            read_indicator_csv(stream)


class TestPairStaticCsv:
    def test_direct_parse(self):
        stream = io.StringIO("partner,distance_km,common_language,common_border\nBRA,3163,1,1\n")
        assert read_pair_static_csv(stream) == [PairStaticRecord("BRA", 3163.0, 1, 1)]

    def test_flag_outside_binary(self):
        stream = io.StringIO("partner,distance_km,common_language,common_border\nBRA,3163,2,0\n")
        with pytest.raises(DataError, match="0 or 1"):
            read_pair_static_csv(stream)


class TestMembershipCsv:
    def test_parse_and_duplicate_detection(self):
        text = (
            "organization,country,accession_year,status\n"
            "MERCOSUR,PER,2003,associate\n"
            "MERCOSUR,BRA,1991,member\n"
        )
        records = read_membership_csv(io.StringIO(text))
        assert records[0] == MembershipRecord("MERCOSUR", "PER", 2003, "associate")
        with pytest.raises(DataError, match="duplicate"):
            read_membership_csv(io.StringIO(text + "MERCOSUR,PER,2004,member\n"))


def fixture_client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler), base_url="https://api.test")


class TestFetchIndicators:
    def test_recorded_fixture_yields_ten_records(self):
        payload = json.loads((FIXTURES / "wb_gdp_per.json").read_text())

        def handler(request):
            assert "/country/PER/indicator/NY.GDP.MKTP.CD" in str(request.url)
            assert request.url.params["format"] == "json"
            assert request.url.params["date"] == "2006:2015"
            return httpx.Response(200, json=payload)

        records = fetch_indicators(
            "https://api.test",
            {"NY.GDP.MKTP.CD": "gdp_usd"},
            ["PER"],
            (2006, 2015),
            client=fixture_client(handler),
        )
        assert len(records) == 10
        assert records[0] == IndicatorRecord("PER", 2006, "gdp_usd", 88643432836.0)
        assert [r.year for r in records] == list(range(2006, 2016))

    def test_two_page_fixture(self):
        def item(year):
            return {
                "countryiso3code": "PER",
                "country": {"id": "PE"},
                "date": str(year),
                "value": 100.0 + year,
            }

        def handler(request):
            page = int(request.url.params["page"])
            meta = {"page": page, "pages": 2, "per_page": 5, "total": 10}
            years = range(2015, 2010, -1) if page == 1 else range(2010, 2005, -1)
            return httpx.Response(200, json=[meta, [item(y) for y in years]])

        records = fetch_indicators(
            "https://api.test",
            {"NY.GDP.MKTP.CD": "gdp_usd"},
            ["PER"],
            (2006, 2015),
            per_page=5,
            client=fixture_client(handler),
        )
        assert len(records) == 10
        assert [r.year for r in records] == list(range(2006, 2016))

    def test_null_values_become_absent(self):
        payload = json.loads((FIXTURES / "wb_gdp_per.json").read_text())
        for item in payload[1]:
            if item["date"] == "2009":
                item["value"] = None

        records = fetch_indicators(
            "https://api.test",
            {"NY.GDP.MKTP.CD": "gdp_usd"},
            ["PER"],
            (2006, 2015),
            client=fixture_client(lambda request: httpx.Response(200, json=payload)),
        )
        assert len(records) == 9
        assert 2009 not in {r.year for r in records}

    def test_idempotent_against_fixture(self):
        payload = json.loads((FIXTURES / "wb_gdp_per.json").read_text())
        client = fixture_client(lambda request: httpx.Response(200, json=payload))
        first = fetch_indicators(
            "https://api.test", {"NY.GDP.MKTP.CD": "gdp_usd"}, ["PER"], (2006, 2015), client=client
        )
        second = fetch_indicators(
            "https://api.test", {"NY.GDP.MKTP.CD": "gdp_usd"}, ["PER"], (2006, 2015), client=client
        )
        assert first == second

    def test_http_error_includes_status_and_url(self):
        client = fixture_client(lambda request: httpx.Response(503, json=[]))
        with pytest.raises(DataError) as err:
            fetch_indicators(
                "https://api.test", {"X": "gdp_usd"}, ["PER"], (2006, 2015), client=client
            )
        assert "503" in str(err.value) and "api.test" in str(err.value)

    def test_malformed_envelope(self):
        client = fixture_client(lambda request: httpx.Response(200, json={"oops": 1}))
        with pytest.raises(DataError, match="envelope"):
            fetch_indicators(
                "https://api.test", {"X": "gdp_usd"}, ["PER"], (2006, 2015), client=client
            )

    def test_empty_country_list(self):
        with pytest.raises(ValueError, match="countries"):
            fetch_indicators("https://api.test", {"X": "gdp_usd"}, [], (2006, 2015))

    def test_percent_codes_scaled_to_fractions(self):
        payload = [
            {"page": 1, "pages": 1, "per_page": 50, "total": 1},
            [{"countryiso3code": "PER", "date": "2014", "value": 3.3}],
        ]
        records = fetch_indicators(
            "https://api.test",
            {"FP.CPI.TOTL.ZG": "inflation_rate"},
            ["PER"],
            (2014, 2014),
            client=fixture_client(lambda request: httpx.Response(200, json=payload)),
        )
        assert records[0].value == pytest.approx(0.033)


class TestComputeRealFx:
    def test_identity(self):
        assert compute_real_fx(3.2, 3.2, 110.0, 110.0) == 1.0

    def test_cross_rate(self):
        assert compute_real_fx(1.0, 2.0, 100.0, 100.0) == 2.0

    def test_homogeneous_in_price_levels(self):
        base = compute_real_fx(3.2, 6.1, 104.0, 118.0)
        doubled = compute_real_fx(3.2, 6.1, 208.0, 236.0)
        assert doubled == pytest.approx(base, rel=1e-12)

    def test_nonpositive_input(self):
        with pytest.raises(DataError, match="> 0"):
            compute_real_fx(0.0, 1.0, 1.0, 1.0)


def indicator_rows(country, years, **series):
    records = []
    for indicator, values in series.items():
        for year, value in zip(years, values):
            if value is not None:
                records.append(IndicatorRecord(country, year, indicator, value))
    return records


def assemble_inputs(years=(2002, 2003, 2004)):
    flows = [TradeFlowRecord("PER", "BRA", y, 1e9 + 1e8 * i) for i, y in enumerate(years)]
    indicators = indicator_rows(
        "PER",
        years,
        gdp_usd=[50e9] * len(years),
        gnipc_usd=[2000.0] * len(years),
        gdppc_usd=[2100.0] * len(years),
        fx_rate=[3.5] * len(years),
        cpi_index=[100.0, 102.0, 104.0][: len(years)],
        inflation_rate=[0.02] * len(years),
    )
    indicators += indicator_rows(
        "BRA",
        years,
        gdp_usd=[500e9] * len(years),
        gnipc_usd=[3000.0] * len(years),
        gdppc_usd=[3100.0] * len(years),
        fx_rate=[2.9] * len(years),
        cpi_index=[100.0, 105.0, 110.0][: len(years)],
        inflation_rate=[0.05, 0.05, 0.033][: len(years)],
    )
    statics = [PairStaticRecord("BRA", 3163.0, 1, 1)]
    memberships = [
        MembershipRecord("MERCOSUR", "BRA", 1991, "member"),
        MembershipRecord("MERCOSUR", "PER", 2003, "associate"),
        MembershipRecord("APEC", "PER", 1998, "member"),
        MembershipRecord("CAN", "PER", 1969, "member"),
    ]
    return flows, indicators, statics, memberships


class TestAssemble:
    def test_mercosur_dummy_switches_at_accession(self):
        flows, indicators, statics, memberships = assemble_inputs()
        panel = assemble_gravity_panel(
            flows, indicators, statics, memberships, (2002, 2004), "GMP"
        )
        i = panel.entity_index(EntityId("PER", "BRA"))
        series = panel.variables["mercosur"][i]
        assert series[panel.time_index(2002)] == 0.0
        assert series[panel.time_index(2003)] == 1.0
        assert series[panel.time_index(2004)] == 1.0

    def test_membership_dummy_monotone(self):
        flows, indicators, statics, memberships = assemble_inputs()
        panel = assemble_gravity_panel(
            flows, indicators, statics, memberships, (2002, 2004), "GMP"
        )
        for org in ("apec", "can", "mercosur"):
            series = panel.variables[org][0]
            assert all(a <= b for a, b in zip(series, series[1:]))

    def test_ifl_adds_one_to_inflation(self):
        flows, indicators, statics, memberships = assemble_inputs()
        panel = assemble_gravity_panel(
            flows, indicators, statics, memberships, (2002, 2004), "CTP"
        )
        i = panel.entity_index(EntityId("PER", "BRA"))
        assert panel.variables["ifl"][i, panel.time_index(2004)] == pytest.approx(1.033)

    def test_gdppcdif_zero_survives_assembly(self):
        flows, indicators, statics, memberships = assemble_inputs()
        indicators = [
            r
            for r in indicators
            if not (r.indicator == "gdppc_usd" and r.country == "BRA")
        ]
        indicators += indicator_rows("BRA", (2002, 2003, 2004), gdppc_usd=[2100.0] * 3)
        panel = assemble_gravity_panel(
            flows, indicators, statics, memberships, (2002, 2004), "GMP"
        )
        assert panel.variables["gdppcdif"][0, 0] == 0.0

    def test_no_partially_populated_cells(self, caplog):
        flows, indicators, statics, memberships = assemble_inputs()
        # Remove one BRA GDP year; the whole 2003 cell must disappear.
        indicators = [
            r
            for r in indicators
            if not (r.indicator == "gdp_usd" and r.country == "BRA" and r.year == 2003)
        ]
        with caplog.at_level("WARNING", logger="gravipanel.ingest"):
            panel = assemble_gravity_panel(
                flows, indicators, statics, memberships, (2002, 2004), "GMP"
            )
        j = panel.time_index(2003)
        present = [panel.mask[name][0, j] for name in panel.variables]
        assert not any(present)
        assert any("incomplete_cell" in r.message for r in caplog.records)
        assert any("WARN ingest" in r.getMessage() for r in caplog.records)

    def test_unknown_partner_excluded_with_warning(self, caplog):
        flows, indicators, statics, memberships = assemble_inputs()
        flows.append(TradeFlowRecord("PER", "XXX", 2003, 1e6))
        with caplog.at_level("WARNING", logger="gravipanel.ingest"):
            panel = assemble_gravity_panel(
                flows, indicators, statics, memberships, (2002, 2004), "GMP"
            )
        assert all(e.partner != "XXX" for e in panel.entities)
        assert any("unknown_partner" in r.message and "XXX" in r.message for r in caplog.records)

    def test_rtp_restricts_to_mercosur(self, caplog):
        flows, indicators, statics, memberships = assemble_inputs()
        flows.append(TradeFlowRecord("PER", "USA", 2003, 5e9))
        indicators += indicator_rows(
            "USA",
            (2002, 2003, 2004),
            gdp_usd=[1e13] * 3,
            gdppc_usd=[4e4] * 3,
            fx_rate=[1.0] * 3,
            cpi_index=[100.0] * 3,
        )
        statics = statics + [PairStaticRecord("USA", 5000.0, 0, 0)]
        with caplog.at_level("WARNING", logger="gravipanel.ingest"):
            panel = assemble_gravity_panel(
                flows, indicators, statics, memberships, (2002, 2004), "RTP"
            )
        assert [e.partner for e in panel.entities] == ["BRA"]
        assert "gnipc_exporter" not in panel.variables
        assert "gdppcdif" in panel.variables

    def test_ctp_without_inflation_errors(self):
        flows, indicators, statics, memberships = assemble_inputs()
        indicators = [r for r in indicators if r.indicator != "inflation_rate"]
        with pytest.raises(DataError, match="inflation"):
            assemble_gravity_panel(flows, indicators, statics, memberships, (2002, 2004), "CTP")

    def test_ctp_country_dummies(self):
        flows, indicators, statics, memberships = assemble_inputs()
        flows.append(TradeFlowRecord("PER", "CHN", 2003, 2e9))
        indicators += indicator_rows(
            "CHN",
            (2003,),
            gdp_usd=[1.6e12],
            fx_rate=[8.2],
            cpi_index=[100.0],
            inflation_rate=[0.012],
        )
        statics = statics + [PairStaticRecord("CHN", 17000.0, 0, 0)]
        panel = assemble_gravity_panel(
            flows, indicators, statics, memberships, (2002, 2004), "CTP"
        )
        i = panel.entity_index(EntityId("PER", "CHN"))
        j = panel.time_index(2003)
        assert panel.variables["chn"][i, j] == 1.0
        assert panel.variables["usa"][i, j] == 0.0

    def test_real_fx_uses_rebased_cpi(self):
        flows, indicators, statics, memberships = assemble_inputs()
        panel = assemble_gravity_panel(
            flows, indicators, statics, memberships, (2002, 2004), "GMP"
        )
        i = panel.entity_index(EntityId("PER", "BRA"))
        assert panel.variables["fx"][i, panel.time_index(2002)] == pytest.approx(2.9 / 3.5)
        expected_2003 = (2.9 / 3.5) * (102.0 / 100.0) / (105.0 / 100.0)
        assert panel.variables["fx"][i, panel.time_index(2003)] == pytest.approx(expected_2003)

    def test_join_completeness_invariant(self):
        flows, indicators, statics, memberships = assemble_inputs()
        panel = assemble_gravity_panel(
            flows, indicators, statics, memberships, (2002, 2004), "GMP"
        )
        masks = np.stack([panel.mask[name] for name in panel.variables])
        cellwise = masks.all(axis=0) | (~masks).all(axis=0)
        assert cellwise.all()
