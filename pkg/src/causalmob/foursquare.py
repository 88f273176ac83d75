"""Reader for public check-in TSV dumps (plain or gzipped).

Row layout, tab-separated:
    user_id  venue_id  category_id  category_name  lat  lon  tz_offset_min  utc_time

``utc_time`` looks like ``Tue Apr 03 18:00:09 +0000 2012``. The stored
timestamp is shifted by the row's timezone offset so that hour-of-day
arithmetic on it yields the user's local hour.
"""

from __future__ import annotations

import gzip
import logging
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from .dataset import CheckinRecord

log = logging.getLogger(__name__)

TIME_FORMAT = "%a %b %d %H:%M:%S %z %Y"
MALFORMED_LIMIT = 0.10


class DataFormatError(ValueError):
    pass


@dataclass
class ParseStats:
    total_rows: int = 0
    parsed: int = 0
    malformed: int = 0


def _open_text(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8", errors="replace")
    return open(path, "rt", encoding="utf-8", errors="replace")


def _parse_row(line):
    fields = line.rstrip("\n").rstrip("\r").split("\t")
    if len(fields) != 8:
        raise ValueError(f"expected 8 fields, got {len(fields)}")
    user, venue, _cat_id, cat_name, lat_s, lon_s, offset_s, time_s = fields
    lat, lon = float(lat_s), float(lon_s)
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        raise ValueError(f"coordinates out of range: {lat}, {lon}")
    offset_min = int(offset_s)
    utc = datetime.strptime(time_s.strip(), TIME_FORMAT)
    local_ts = int(utc.timestamp()) + offset_min * 60
    return CheckinRecord(
        user_raw=user,
        venue_raw=venue,
        category=cat_name,
        lat=lat,
        lon=lon,
        timestamp=local_ts,
    )


def parse_checkins(path, fmt="foursquare-tsv", stats=None):
    """Yield one :class:`CheckinRecord` per valid row.

    Malformed rows are counted and skipped; if more than 10% of a
    non-empty file fails to parse, a :class:`DataFormatError` is raised
    once the stream is exhausted.
    """
    if fmt != "foursquare-tsv":
        raise DataFormatError(f"unknown input format {fmt!r}")
    if stats is None:
        stats = ParseStats()
    with _open_text(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            stats.total_rows += 1
            try:
                rec = _parse_row(line)
            except (ValueError, OverflowError):
                stats.malformed += 1
                continue
            stats.parsed += 1
            yield rec
    if stats.total_rows == 0:
        log.warning("no rows found in %s", path)
    elif stats.malformed / stats.total_rows > MALFORMED_LIMIT:
        raise DataFormatError(
            f"{stats.malformed} of {stats.total_rows} rows malformed in {path}"
        )
    elif stats.malformed:
        log.info("skipped %d malformed rows out of %d", stats.malformed, stats.total_rows)


def read_checkins(path, fmt="foursquare-tsv"):
    """Eager variant returning ``(records, stats)``."""
    stats = ParseStats()
    records = list(parse_checkins(path, fmt=fmt, stats=stats))
    return records, stats
