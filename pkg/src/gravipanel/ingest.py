"""Raw-data ingestion: strict CSV readers for trade flows, country-year
indicators, pair geography, and organization membership; a paginated client
for the public indicator API; and assembly of the three study panels.

Data problems that exclude a partner or a cell are emitted as structured
warning lines ``WARN ingest <code> <detail>`` on the module logger; hard
schema violations raise DataError.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, TextIO

import httpx
import numpy as np

from .errors import DataError
from .panel import EntityId, PanelDataset

logger = logging.getLogger(__name__)

REPORTER = "PER"

INDICATORS = ("gdp_usd", "gnipc_usd", "gdppc_usd", "inflation_rate", "fx_rate", "cpi_index")
POSITIVE_INDICATORS = frozenset({"gdp_usd", "gnipc_usd", "gdppc_usd"})

ORGANIZATIONS = ("APEC", "CAN", "MERCOSUR", "EU")
VARIANTS = ("GMP", "CTP", "RTP")

CTP_COUNTRY_DUMMIES = ("IND", "KOR", "CHL", "CHN", "USA", "JPN")

DEFAULT_INDICATOR_CODES: dict[str, str] = {
    "NY.GDP.MKTP.CD": "gdp_usd",
    "NY.GNP.PCAP.CD": "gnipc_usd",
    "NY.GDP.PCAP.CD": "gdppc_usd",
    "FP.CPI.TOTL.ZG": "inflation_rate",
    "PA.NUS.FCRF": "fx_rate",
    "FP.CPI.TOTL": "cpi_index",
}

# API codes reported in percent; canonical records carry fractions per year.
PERCENT_CODES = frozenset({"FP.CPI.TOTL.ZG"})


@dataclass(frozen=True)
class TradeFlowRecord:
    reporter: str
    partner: str
    year: int
    export_value: float


@dataclass(frozen=True)
class IndicatorRecord:
    country: str
    year: int
    indicator: str
    value: float


@dataclass(frozen=True)
class PairStaticRecord:
    partner: str
    distance_km: float
    common_language: int
    common_border: int


@dataclass(frozen=True)
class MembershipRecord:
    organization: str
    country: str
    accession_year: int
    status: str


def _warn(code: str, detail: str) -> None:
    logger.warning("WARN ingest %s %s", code, detail)


def _check_header(row: Sequence[str] | None, expected: Sequence[str]) -> None:
    if row is None:
        raise DataError("empty file: missing header row")
    missing = [c for c in expected if c not in row]
    if missing:
        raise DataError(f"missing column: {', '.join(missing)}")
    if list(row) != list(expected):
        raise DataError(f"header must be {','.join(expected)}, got {','.join(row)}")


def _parse_int(raw: str, line: int, column: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise DataError(f"line {line}: invalid {column} {raw!r}") from None


def _parse_float(raw: str, line: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"line {line}: invalid {column} {raw!r}") from None
    if not np.isfinite(value):
        raise DataError(f"line {line}: non-finite {column} {raw!r}")
    return value


def _parse_iso3(raw: str, line: int, column: str) -> str:
    if len(raw) != 3 or not raw.isalpha() or not raw.isupper():
        raise DataError(f"line {line}: invalid {column} {raw!r}, want 3 uppercase letters")
    return raw


def _rows(stream: TextIO, expected: Sequence[str]):
    reader = csv.reader(stream)
    header = next(reader, None)
    _check_header(header, expected)
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(expected):
            raise DataError(f"line {line}: expected {len(expected)} fields, got {len(row)}")
        yield line, row


def read_trade_csv(stream: TextIO) -> list[TradeFlowRecord]:
    """Parse ``reporter,partner,year,export_value_usd`` rows strictly."""
    records = []
    for line, row in _rows(stream, ("reporter", "partner", "year", "export_value_usd")):
        value = _parse_float(row[3], line, "export_value_usd")
        if value < 0:
            raise DataError(f"line {line}: export value must be >= 0, got {value}")
        records.append(
            TradeFlowRecord(
                reporter=_parse_iso3(row[0], line, "reporter"),
                partner=_parse_iso3(row[1], line, "partner"),
                year=_parse_int(row[2], line, "year"),
                export_value=value,
            )
        )
    return records


def read_indicator_csv(stream: TextIO) -> list[IndicatorRecord]:
    """Parse ``country,year,indicator,value`` rows strictly."""
    records = []
    for line, row in _rows(stream, ("country", "year", "indicator", "value")):
        country = _parse_iso3(row[0], line, "country")
        year = _parse_int(row[1], line, "year")
        indicator = row[2]
        if indicator not in INDICATORS:
            raise DataError(f"line {line}: unknown indicator {indicator!r}")
        value = _parse_float(row[3], line, "value")
        if indicator in POSITIVE_INDICATORS and value <= 0:
            raise DataError(f"line {line}: {indicator} must be > 0, got {value}")
        records.append(IndicatorRecord(country, year, indicator, value))
    return records


def read_pair_static_csv(stream: TextIO) -> list[PairStaticRecord]:
    """Parse ``partner,distance_km,common_language,common_border`` rows."""
    records = []
    for line, row in _rows(
        stream, ("partner", "distance_km", "common_language", "common_border")
    ):
        distance = _parse_float(row[1], line, "distance_km")
        if distance <= 0:
            raise DataError(f"line {line}: distance_km must be > 0, got {distance}")
        flags = []
        for column, raw in (("common_language", row[2]), ("common_border", row[3])):
            flag = _parse_int(raw, line, column)
            if flag not in (0, 1):
                raise DataError(f"line {line}: {column} must be 0 or 1, got {flag}")
            flags.append(flag)
        records.append(
            PairStaticRecord(_parse_iso3(row[0], line, "partner"), distance, *flags)
        )
    return records


def read_membership_csv(stream: TextIO) -> list[MembershipRecord]:
    """Parse ``organization,country,accession_year,status`` rows."""
    records = []
    seen = set()
    for line, row in _rows(stream, ("organization", "country", "accession_year", "status")):
        organization = row[0]
        if organization not in ORGANIZATIONS:
            raise DataError(f"line {line}: unknown organization {organization!r}")
        country = _parse_iso3(row[1], line, "country")
        if (organization, country) in seen:
            raise DataError(f"line {line}: duplicate membership ({organization}, {country})")
        seen.add((organization, country))
        status = row[3]
        if status not in ("member", "associate"):
            raise DataError(f"line {line}: status must be member or associate, got {status!r}")
        records.append(
            MembershipRecord(
                organization, country, _parse_int(row[2], line, "accession_year"), status
            )
        )
    return records


def fetch_indicators(
    base_url: str,
    indicator_codes: Mapping[str, str] | None = None,
    countries: Sequence[str] = (),
    year_range: tuple[int, int] = (2006, 2015),
    per_page: int = 1000,
    client: httpx.Client | None = None,
) -> list[IndicatorRecord]:
    """Fetch country-year indicators from a World Bank style v2 JSON API.

    ``indicator_codes`` maps API series codes to canonical indicator names
    (defaults to DEFAULT_INDICATOR_CODES).  Issues
    ``GET {base}/country/{codes}/indicator/{code}`` with ``format=json`` and
    ``date=YYYY:YYYY``, following the page counter in the response envelope.
    Null values become absent records; percent-coded series are converted to
    fractions.  Records are returned sorted by (indicator, country, year).
    """
    if indicator_codes is None:
        indicator_codes = DEFAULT_INDICATOR_CODES
    if not indicator_codes:
        raise ValueError("indicator_codes must not be empty")
    if not countries:
        raise ValueError("countries must not be empty")

    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=30.0)
    try:
        records = []
        country_path = ";".join(countries)
        for code, indicator in indicator_codes.items():
            scale = 0.01 if code in PERCENT_CODES else 1.0
            page = 1
            while True:
                url = f"{base_url.rstrip('/')}/country/{country_path}/indicator/{code}"
                response = client.get(
                    url,
                    params={
                        "format": "json",
                        "date": f"{year_range[0]}:{year_range[1]}",
                        "per_page": per_page,
                        "page": page,
                    },
                )
                if response.status_code != 200:
                    raise DataError(
                        f"indicator API returned {response.status_code} for {response.request.url}"
                    )
                payload = response.json()
                if not isinstance(payload, list) or len(payload) != 2:
                    raise DataError(f"malformed API envelope for {code}: expected [metadata, data]")
                metadata, data = payload
                if not isinstance(metadata, dict) or not isinstance(data, list):
                    raise DataError(f"malformed API envelope for {code}")
                for item in data:
                    if item.get("value") is None:
                        continue
                    country = item.get("countryiso3code") or item.get("country", {}).get("id", "")
                    try:
                        year = int(item["date"])
                    except (KeyError, ValueError):
                        raise DataError(f"malformed API record for {code}: bad date") from None
                    records.append(
                        IndicatorRecord(country, year, indicator, float(item["value"]) * scale)
                    )
                pages = int(metadata.get("pages", 1))
                if page >= pages:
                    break
                page += 1
    finally:
        if own_client:
            client.close()
    records.sort(key=lambda r: (r.indicator, r.country, r.year))
    return records


def compute_real_fx(
    nominal_fx_i: float, nominal_fx_j: float, cpi_i: float, cpi_j: float
) -> float:
    """Real exchange rate proxy: nominal cross rate deflated by relative CPI.

    Exchange rates are local currency per USD for exporter i and importer j;
    the result is (fx_j / fx_i) * (cpi_i / cpi_j), homogeneous of degree zero
    in each country's CPI level.
    """
    for name, value in (
        ("nominal_fx_i", nominal_fx_i),
        ("nominal_fx_j", nominal_fx_j),
        ("cpi_i", cpi_i),
        ("cpi_j", cpi_j),
    ):
        if not value > 0:
            raise DataError(f"{name} must be > 0, got {value}")
    return (nominal_fx_j / nominal_fx_i) * (cpi_i / cpi_j)


def _indicator_lookup(
    indicators: Iterable[IndicatorRecord],
) -> dict[str, dict[str, dict[int, float]]]:
    table: dict[str, dict[str, dict[int, float]]] = {}
    for record in indicators:
        table.setdefault(record.country, {}).setdefault(record.indicator, {})[
            record.year
        ] = record.value
    return table


def _rebased_cpi(series: dict[int, float], years: Sequence[int]) -> dict[int, float]:
    """CPI series divided by its value at the first window year with data."""
    anchor = next((series[y] for y in years if y in series and series[y] > 0), None)
    if anchor is None:
        return {}
    return {y: series[y] / anchor for y in years if y in series and series[y] > 0}


def _membership_dummy(
    acc: dict[tuple[str, str], int], org: str, partner: str, year: int
) -> float:
    """Both-sides accession rule: 1 only once the reporter and the partner
    have each joined the organization."""
    partner_year = acc.get((org, partner))
    reporter_year = acc.get((org, REPORTER))
    if partner_year is None or reporter_year is None:
        return 0.0
    return 1.0 if year >= partner_year and year >= reporter_year else 0.0


def _variant_variables(variant: str) -> list[str]:
    base = ["tradevalue", "gdp_exporter", "gdp_importer", "fx", "distance", "language", "border"]
    if variant == "GMP":
        return base + ["gnipc_exporter", "gnipc_importer", "gdppcdif", "apec", "can", "mercosur"]
    if variant == "RTP":
        return base + ["gdppcdif", "apec", "can", "mercosur"]
    return base + ["ifl"] + [c.lower() for c in CTP_COUNTRY_DUMMIES] + ["eu"]


def assemble_gravity_panel(
    flows: Iterable[TradeFlowRecord],
    indicators: Iterable[IndicatorRecord],
    statics: Iterable[PairStaticRecord],
    memberships: Iterable[MembershipRecord],
    window: tuple[int, int],
    variant: str,
) -> PanelDataset:
    """Join raw records into one of the three study panels.

    Every (partner, year) cell is either complete in all variant-required
    variables or wholly absent; incomplete cells with a trade flow are
    dropped with a warning record.  Partners without indicator or geography
    data are excluded entirely.  Membership dummies are accession-year aware
    and non-decreasing in time; the RTP variant keeps only partners that
    appear in the MERCOSUR membership rows.
    """
    if variant not in VARIANTS:
        raise DataError(f"unknown panel variant {variant!r}")
    first, last = window
    if first > last:
        raise DataError(f"window start {first} after end {last}")
    years = tuple(range(first, last + 1))

    table = _indicator_lookup(indicators)
    if REPORTER not in table:
        raise DataError(f"no indicator data for reporter {REPORTER}")
    if variant == "CTP" and not any("inflation_rate" in by_ind for by_ind in table.values()):
        raise DataError("CTP variant requires inflation_rate indicator data")

    static_by_partner = {s.partner: s for s in statics}
    acc = {(m.organization, m.country): m.accession_year for m in memberships}
    mercosur_set = {m.country for m in memberships if m.organization == "MERCOSUR"}

    flow_map: dict[tuple[str, int], float] = {}
    skipped_reporters = set()
    for flow in flows:
        if flow.reporter != REPORTER:
            if flow.reporter not in skipped_reporters:
                skipped_reporters.add(flow.reporter)
                _warn("foreign_reporter", f"{flow.reporter} ignored, panel reports {REPORTER}")
            continue
        if not first <= flow.year <= last:
            continue
        key = (flow.partner, flow.year)
        if key in flow_map:
            raise DataError(f"duplicate trade flow for ({REPORTER}-{flow.partner}, {flow.year})")
        flow_map[key] = flow.export_value

    partners = sorted({p for p, _ in flow_map})
    usable = []
    for partner in partners:
        if variant == "RTP" and partner not in mercosur_set:
            _warn("partner_excluded_variant", f"{partner} not a MERCOSUR member or associate")
            continue
        if partner not in table:
            _warn("unknown_partner", f"{partner} has no indicator data")
            continue
        if partner not in static_by_partner:
            _warn("unknown_partner", f"{partner} has no geography data")
            continue
        usable.append(partner)
    if not usable:
        raise DataError("no usable partners after exclusions")

    required = _variant_variables(variant)
    entities = tuple(sorted(EntityId(REPORTER, p) for p in usable))
    shape = (len(entities), len(years))
    grids = {name: np.full(shape, np.nan) for name in required}

    reporter_ind = table[REPORTER]
    reporter_cpi = _rebased_cpi(reporter_ind.get("cpi_index", {}), years)

    for i, entity in enumerate(entities):
        partner = entity.partner
        partner_ind = table[partner]
        partner_cpi = _rebased_cpi(partner_ind.get("cpi_index", {}), years)
        static = static_by_partner[partner]
        for j, year in enumerate(years):
            cell = {
                "tradevalue": flow_map.get((partner, year)),
                "gdp_exporter": reporter_ind.get("gdp_usd", {}).get(year),
                "gdp_importer": partner_ind.get("gdp_usd", {}).get(year),
                "distance": static.distance_km,
                "language": float(static.common_language),
                "border": float(static.common_border),
            }
            fx_i = reporter_ind.get("fx_rate", {}).get(year)
            fx_j = partner_ind.get("fx_rate", {}).get(year)
            cpi_i = reporter_cpi.get(year)
            cpi_j = partner_cpi.get(year)
            if None not in (fx_i, fx_j, cpi_i, cpi_j) and min(fx_i, fx_j, cpi_i, cpi_j) > 0:
                cell["fx"] = compute_real_fx(fx_i, fx_j, cpi_i, cpi_j)
            else:
                cell["fx"] = None

            if variant in ("GMP", "RTP"):
                gdppc_i = reporter_ind.get("gdppc_usd", {}).get(year)
                gdppc_j = partner_ind.get("gdppc_usd", {}).get(year)
                cell["gdppcdif"] = (
                    abs(gdppc_i - gdppc_j) if None not in (gdppc_i, gdppc_j) else None
                )
                for org in ("apec", "can", "mercosur"):
                    cell[org] = _membership_dummy(acc, org.upper(), partner, year)
            if variant == "GMP":
                cell["gnipc_exporter"] = reporter_ind.get("gnipc_usd", {}).get(year)
                cell["gnipc_importer"] = partner_ind.get("gnipc_usd", {}).get(year)
            if variant == "CTP":
                inflation = partner_ind.get("inflation_rate", {}).get(year)
                cell["ifl"] = 1.0 + inflation if inflation is not None else None
                for code in CTP_COUNTRY_DUMMIES:
                    cell[code.lower()] = 1.0 if partner == code else 0.0
                eu_year = acc.get(("EU", partner))
                cell["eu"] = 1.0 if eu_year is not None and year >= eu_year else 0.0

            missing = sorted(name for name, value in cell.items() if value is None)
            if missing:
                if cell["tradevalue"] is not None:
                    _warn(
                        "incomplete_cell",
                        f"{partner} {year} missing={','.join(missing)}",
                    )
                continue
            for name, value in cell.items():
                grids[name][i, j] = float(value)

    mask = {name: ~np.isnan(grid) for name, grid in grids.items()}
    return PanelDataset(entities=entities, times=years, variables=grids, mask=mask)
