"""Breadth-first street-view metadata crawling and the on-disk catalog.

The panorama platform sits behind a small provider interface so tests and
fixtures never touch a network. Crawl bookkeeping (frontier, visited set,
catalog order) is owned by one thread; metadata fetches are pipelined
through a bounded pool and consumed strictly in FIFO order, which keeps the
result independent of provider latency.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .errors import (
    DatumMismatchError,
    EmptyCrawlError,
    MalformedResponseError,
    PanoNotFoundError,
    ParseError,
    SchemaVersionError,
    TransientIOError,
)
from .geodesy import Datum, GeoPoint, convert_datum

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Politeness defaults for network-backed providers. Local fixture providers
# advertise a zero interval.
DEFAULT_MAX_IN_FLIGHT = 4
DEFAULT_MIN_INTERVAL_S = 0.1


@dataclass
class PanoramaMeta:
    pano_id: str
    position: GeoPoint
    datum: Datum
    capture_time: str | None = None
    heading_deg: float | None = None
    links: list[str] = field(default_factory=list)

    def __post_init__(self):
        # ingest rule: drop self-links and duplicates, keep stored order
        seen = set()
        cleaned = []
        for link in self.links:
            if link == self.pano_id or link in seen:
                continue
            seen.add(link)
            cleaned.append(link)
        self.links = cleaned


@dataclass(frozen=True)
class Region:
    min_lng: float
    min_lat: float
    max_lng: float
    max_lat: float
    datum: Datum = Datum.WGS84

    def __post_init__(self):
        if not (self.min_lng < self.max_lng and self.min_lat < self.max_lat):
            raise ValueError("region bbox must have min < max on both axes")

    def contains(self, p: GeoPoint) -> bool:
        return self.min_lng <= p.lng <= self.max_lng and self.min_lat <= p.lat <= self.max_lat


@dataclass
class Catalog:
    """Crawled records in BFS discovery order plus crawl provenance.

    Fields marked compare=False are in-memory provenance that the fixed file
    schema does not persist (kept so reruns stay byte-identical on disk).
    """

    records: list[PanoramaMeta]
    datum: Datum
    seeds: list[str]
    region: Region
    boundary_ids: list[str] = field(default_factory=list, compare=False)
    skipped: list[tuple[str, str]] = field(default_factory=list, compare=False)
    provider_name: str | None = field(default=None, compare=False)
    crawl_time: str | None = field(default=None, compare=False)
    original_datum: Datum | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class CrawlLimits:
    max_nodes: int
    max_depth: int
    max_retries: int = 2
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT
    min_interval_s: float | None = None  # None: use the provider's preference

    def __post_init__(self):
        if self.max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


class Provider(Protocol):
    name: str
    datum: Datum
    min_interval_s: float

    def fetch_metadata(self, pano_id: str) -> PanoramaMeta: ...


class FixtureProvider:
    """Serves panorama metadata from a directory of <pano_id>.json files."""

    def __init__(self, root: str | Path, datum: Datum = Datum.BD09):
        self.root = Path(root)
        self.datum = datum
        self.name = f"fixture:{self.root}"
        self.min_interval_s = 0.0

    def fetch_metadata(self, pano_id: str) -> PanoramaMeta:
        if not pano_id:
            raise MalformedResponseError("empty pano_id")
        path = self.root / f"{pano_id}.json"
        if not path.is_file():
            raise PanoNotFoundError(f"panorama {pano_id!r} not in fixture {self.root}")
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise MalformedResponseError(f"unreadable fixture record {path}: {e}") from e
        return _record_from_json(obj, self.datum, expect_id=pano_id)


def _record_from_json(obj: dict, datum: Datum, expect_id: str | None = None) -> PanoramaMeta:
    try:
        pano_id = str(obj["pano_id"])
        lng = float(obj["lng"])
        lat = float(obj["lat"])
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedResponseError(f"bad panorama record: {e}") from e
    if not pano_id:
        raise MalformedResponseError("panorama record with empty pano_id")
    if expect_id is not None and pano_id != expect_id:
        raise MalformedResponseError(f"record id {pano_id!r} does not match file {expect_id!r}")
    heading = obj.get("heading_deg")
    capture = obj.get("capture_time")
    links = obj.get("links", [])
    if not isinstance(links, list):
        raise MalformedResponseError("links must be a list")
    return PanoramaMeta(
        pano_id=pano_id,
        position=GeoPoint(lng, lat),
        datum=datum,
        capture_time=None if capture is None else str(capture),
        heading_deg=None if heading is None else float(heading),
        links=[str(l) for l in links],
    )


class _PacedFetcher:
    """Bounded-concurrency fetch pipeline honoring a minimum request interval."""

    def __init__(self, provider: Provider, limits: CrawlLimits):
        self._provider = provider
        self._limits = limits
        interval = limits.min_interval_s
        self._interval = provider.min_interval_s if interval is None else interval
        self._lock = threading.Lock()
        self._last_issue = 0.0
        self._pool = ThreadPoolExecutor(max_workers=limits.max_in_flight)
        self._futures: dict[str, Future] = {}

    def _fetch_with_retry(self, pano_id: str) -> PanoramaMeta:
        attempts = self._limits.max_retries + 1
        for attempt in range(attempts):
            if self._interval > 0:
                with self._lock:
                    wait = self._last_issue + self._interval - time.monotonic()
                    if wait > 0:
                        time.sleep(wait)
                    self._last_issue = time.monotonic()
            try:
                return self._provider.fetch_metadata(pano_id)
            except TransientIOError:
                if attempt == attempts - 1:
                    raise
        raise AssertionError("unreachable")

    def submit(self, pano_id: str) -> None:
        if pano_id not in self._futures:
            self._futures[pano_id] = self._pool.submit(self._fetch_with_retry, pano_id)

    def result(self, pano_id: str) -> PanoramaMeta:
        return self._futures.pop(pano_id).result()

    def close(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)


def crawl(seeds: list[str], region: Region, provider: Provider, limits: CrawlLimits) -> Catalog:
    """Classic BFS over the panorama link graph, gated by region membership.

    Out-of-region nodes are kept as boundary ids but never stored or
    expanded; transient provider failures are retried then skipped.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    fetcher = _PacedFetcher(provider, limits)
    records: list[PanoramaMeta] = []
    boundary: list[str] = []
    skipped: list[tuple[str, str]] = []
    enqueued: set[str] = set()
    queue: deque[tuple[str, int]] = deque()
    for seed in seeds:
        if seed not in enqueued:
            enqueued.add(seed)
            queue.append((seed, 0))
    seeds_found = 0
    seeds_pending = set(s for s, d in queue)
    try:
        while queue and len(records) < limits.max_nodes:
            for pano_id, _ in list(queue)[: limits.max_in_flight]:
                fetcher.submit(pano_id)
            pano_id, depth = queue.popleft()
            is_seed = pano_id in seeds_pending
            seeds_pending.discard(pano_id)
            try:
                meta = fetcher.result(pano_id)
            except PanoNotFoundError:
                log.debug("panorama %s not found", pano_id)
                continue
            except TransientIOError as e:
                skipped.append((pano_id, str(e)))
                log.warning("skipping %s after retries: %s", pano_id, e)
                continue
            except MalformedResponseError as e:
                skipped.append((pano_id, str(e)))
                log.warning("skipping %s (malformed): %s", pano_id, e)
                continue
            if is_seed:
                seeds_found += 1
            pos = convert_datum(meta.position, provider.datum, region.datum)
            if not region.contains(pos):
                boundary.append(pano_id)
                continue
            records.append(meta)
            if depth < limits.max_depth:
                for link in meta.links:
                    if link not in enqueued:
                        enqueued.add(link)
                        queue.append((link, depth + 1))
    finally:
        fetcher.close()
    if seeds_found == 0:
        raise EmptyCrawlError(f"none of the seeds {seeds} could be fetched")
    return Catalog(
        records=records,
        datum=provider.datum,
        seeds=list(seeds),
        region=region,
        boundary_ids=boundary,
        skipped=skipped,
        provider_name=provider.name,
        crawl_time=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    )


def catalog_save(catalog: Catalog, path: str | Path) -> None:
    path = Path(path)
    for rec in catalog.records:
        if rec.datum != catalog.datum:
            raise DatumMismatchError(
                f"record {rec.pano_id} tagged {rec.datum.value}, catalog is {catalog.datum.value}"
            )
    header = {
        "schema_version": SCHEMA_VERSION,
        "datum": catalog.datum.value,
        "seeds": catalog.seeds,
        "region": [
            catalog.region.min_lng,
            catalog.region.min_lat,
            catalog.region.max_lng,
            catalog.region.max_lat,
        ],
    }
    lines = [json.dumps(header, sort_keys=True)]
    for rec in catalog.records:
        lines.append(
            json.dumps(
                {
                    "pano_id": rec.pano_id,
                    "lng": rec.position.lng,
                    "lat": rec.position.lat,
                    "capture_time": rec.capture_time,
                    "heading_deg": rec.heading_deg,
                    "links": rec.links,
                },
                sort_keys=True,
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def catalog_load(path: str | Path) -> Catalog:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"empty catalog file {path}", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid catalog header: {e}", line=1) from e
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported catalog schema_version {header.get('schema_version')!r}"
        )
    try:
        datum = Datum(header["datum"])
        seeds = [str(s) for s in header["seeds"]]
        bbox = [float(v) for v in header["region"]]
    except (KeyError, ValueError, TypeError) as e:
        raise ParseError(f"invalid catalog header: {e}", line=1) from e
    region = Region(bbox[0], bbox[1], bbox[2], bbox[3], datum=datum)
    records = []
    seen = set()
    for idx, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid record: {e}", line=idx) from e
        try:
            rec = _record_from_json(obj, datum)
        except MalformedResponseError as e:
            raise ParseError(str(e), line=idx) from e
        if rec.pano_id in seen:
            raise ParseError(f"duplicate pano_id {rec.pano_id!r}", line=idx)
        seen.add(rec.pano_id)
        records.append(rec)
    return Catalog(records=records, datum=datum, seeds=seeds, region=region)


def catalog_to_wgs84(catalog: Catalog) -> Catalog:
    """Convert every stored position to WGS-84, noting the source datum."""
    for rec in catalog.records:
        if rec.datum != catalog.datum:
            raise DatumMismatchError(
                f"record {rec.pano_id} tagged {rec.datum.value}, catalog is {catalog.datum.value}"
            )
    if catalog.datum == Datum.WGS84:
        out_records = list(catalog.records)
        region = catalog.region
    else:
        out_records = [
            PanoramaMeta(
                pano_id=rec.pano_id,
                position=convert_datum(rec.position, catalog.datum, Datum.WGS84),
                datum=Datum.WGS84,
                capture_time=rec.capture_time,
                heading_deg=rec.heading_deg,
                links=list(rec.links),
            )
            for rec in catalog.records
        ]
        lo = convert_datum(GeoPoint(catalog.region.min_lng, catalog.region.min_lat), catalog.datum, Datum.WGS84)
        hi = convert_datum(GeoPoint(catalog.region.max_lng, catalog.region.max_lat), catalog.datum, Datum.WGS84)
        region = Region(lo.lng, lo.lat, hi.lng, hi.lat, datum=Datum.WGS84)
    return Catalog(
        records=out_records,
        datum=Datum.WGS84,
        seeds=list(catalog.seeds),
        region=region,
        original_datum=catalog.datum,
    )
