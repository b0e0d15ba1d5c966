"""Geo-tagged message corpus: parsing, geography summaries and filtering.

A corpus file holds one JSON object per line::

    {"id": "42", "created_at": "2017-08-30T12:00:00-05:00", "text": "...",
     "point": [lon, lat]}

with either ``point`` or ``bbox`` (``[min_lon, min_lat, max_lon, max_lat]``).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from typing import NamedTuple, Sequence

from .errors import ContractError
from .text import preprocess

log = logging.getLogger(__name__)

DISPERSION_FLOOR = 1e-3


class Point(NamedTuple):
    lon: float
    lat: float


class BBox(NamedTuple):
    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def is_valid(self) -> bool:
        return self.min_lon <= self.max_lon and self.min_lat <= self.max_lat

    def contains(self, lon, lat) -> bool:
        return self.min_lon <= lon <= self.max_lon and self.min_lat <= lat <= self.max_lat


@dataclass(frozen=True)
class RawMessage:
    id: str
    timestamp: datetime
    text: str
    geography: Point | BBox


@dataclass(frozen=True)
class GeoMessage:
    """A message reduced to spatial index, dispersion, day and tokens."""

    s: tuple[float, float]
    d: float
    t: int
    tokens: tuple[str, ...]


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 instant that carries an explicit UTC offset."""
    if not isinstance(value, str):
        raise ValueError("timestamp must be a string")
    if value.endswith(("Z", "z")):
        value = value[:-1] + "+00:00"
    ts = datetime.fromisoformat(value)
    if ts.tzinfo is None or ts.utcoffset() is None:
        raise ValueError(f"timestamp {value!r} has no UTC offset")
    return ts.astimezone(timezone.utc)


def _coords(value, n):
    if not isinstance(value, list) or len(value) != n:
        raise ValueError(f"expected a list of {n} numbers")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValueError(f"coordinate {v!r} is not a finite number")
        out.append(float(v))
    return out


def parse_record(obj) -> RawMessage:
    """Build a :class:`RawMessage` from one decoded JSON object."""
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    ident, text = obj.get("id"), obj.get("text")
    if not isinstance(ident, str) or not isinstance(text, str):
        raise ValueError("'id' and 'text' must be strings")
    ts = parse_timestamp(obj.get("created_at"))
    has_point, has_bbox = "point" in obj, "bbox" in obj
    if has_point == has_bbox:
        raise ValueError("exactly one of 'point' or 'bbox' is required")
    if has_point:
        geo = Point(*_coords(obj["point"], 2))
    else:
        geo = BBox(*_coords(obj["bbox"], 4))
        if not geo.is_valid():
            raise ValueError(f"inverted bounding box {list(geo)}")
    return RawMessage(ident, ts, text, geo)


def parse_corpus(path) -> tuple[list[RawMessage], int]:
    """Read a line-delimited JSON corpus.

    Malformed lines are logged and skipped. Returns the messages in file
    order together with the number of skipped lines.
    """
    messages, skipped = [], 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                messages.append(parse_record(json.loads(line)))
            except (ValueError, TypeError) as exc:
                skipped += 1
                log.warning("%s:%d: skipped malformed record (%s)", path, lineno, exc)
    return messages, skipped


def format_record(msg: RawMessage) -> str:
    """Serialize a message as one corpus line (inverse of :func:`parse_record`)."""
    obj = {"id": msg.id, "created_at": msg.timestamp.isoformat(), "text": msg.text}
    if isinstance(msg.geography, BBox):
        obj["bbox"] = list(msg.geography)
    else:
        obj["point"] = list(msg.geography)
    return json.dumps(obj, ensure_ascii=False)


def dispersion_from_geography(g) -> float:
    """Spatial spread in degrees: ``sqrt(half_width * half_height)``, floored at 1e-3."""
    if isinstance(g, BBox):
        half_w = (g.max_lon - g.min_lon) / 2
        half_h = (g.max_lat - g.min_lat) / 2
        return max(math.sqrt(half_w * half_h), DISPERSION_FLOOR)
    return DISPERSION_FLOOR


def spatial_index(g) -> tuple[float, float]:
    if isinstance(g, BBox):
        return ((g.min_lon + g.max_lon) / 2, (g.min_lat + g.max_lat) / 2)
    return (g.lon, g.lat)


def _as_date(epoch) -> date:
    if isinstance(epoch, datetime):
        return epoch.astimezone(timezone.utc).date() if epoch.tzinfo else epoch.date()
    if isinstance(epoch, str):
        return date.fromisoformat(epoch)
    return epoch


def day_index(ts: datetime, epoch) -> int:
    """Whole UTC days between ``epoch`` midnight and ``ts``."""
    if ts.tzinfo is None:
        raise ContractError("timestamp must be timezone-aware")
    start = datetime.combine(_as_date(epoch), datetime.min.time(), tzinfo=timezone.utc)
    elapsed = ts - start
    if elapsed < timedelta(0):
        raise ValueError(f"timestamp {ts.isoformat()} precedes epoch {start.date()}")
    return elapsed.days


def filter_corpus(msgs: Sequence[RawMessage], bounds: BBox, days: range, epoch, max_dispersion=None) -> list[RawMessage]:
    """Keep messages located inside ``bounds`` (edges included) on a day in ``days``.

    ``max_dispersion`` optionally drops messages whose geography is too
    coarse to localize; ``None`` keeps everything.
    """
    if not bounds.is_valid():
        raise ContractError(f"invalid bounds {list(bounds)}")
    start = datetime.combine(_as_date(epoch), datetime.min.time(), tzinfo=timezone.utc)
    kept = []
    for m in msgs:
        if m.timestamp < start:
            continue
        if not bounds.contains(*spatial_index(m.geography)):
            continue
        if day_index(m.timestamp, epoch) not in days:
            continue
        if max_dispersion is not None and dispersion_from_geography(m.geography) > max_dispersion:
            continue
        kept.append(m)
    return kept


def to_geo_message(msg: RawMessage, epoch) -> GeoMessage:
    return GeoMessage(
        s=spatial_index(msg.geography),
        d=dispersion_from_geography(msg.geography),
        t=day_index(msg.timestamp, epoch),
        tokens=tuple(preprocess(msg.text)),
    )
