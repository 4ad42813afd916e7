"""Pipeline orchestration: one subcommand per stage plus `all`.

Every stage reads its declared inputs, writes its outputs atomically
(temp file + rename) and records artifact hashes in the run manifest, so
re-running a stage over identical inputs is byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from .basemap import build_graph, parse_osm
from .errors import ConfigError, IOFailure, LaneforgeError, UsageError
from .geodesy import Datum
from .laneio import evaluate_detections, read_annotations, read_detections
from .matching import (
    DEFAULT_JUNCTION_SPLIT_M,
    DEFAULT_MATCH_RADIUS_M,
    DEFAULT_TRACK_BEARING_DEG,
    DEFAULT_TRACK_GAP_M,
    MatchResult,
    ObservationTrack,
    TrackPoint,
    build_tracks,
    match_tracks,
    read_matches,
    split_tracks_at_junctions,
    write_matches,
)
from .netgen import (
    DEFAULT_LANE_WIDTH_M,
    build_network,
    export_geojson,
    export_sim_xml,
    fuse_lane_counts,
    read_network,
    write_network,
)
from .geodesy import GeoPoint
from .svcrawl import (
    Catalog,
    CrawlLimits,
    FixtureProvider,
    Region,
    catalog_load,
    catalog_save,
    catalog_to_wgs84,
    crawl,
)

log = logging.getLogger("laneforge")

STAGES = ("crawl", "transform", "tracks", "match", "fuse", "build", "export", "eval")

ARTIFACTS = {
    "catalog": "catalog.ndjson",
    "catalog_wgs84": "catalog_wgs84.ndjson",
    "tracks": "tracks.ndjson",
    "matches": "matches.ndjson",
    "fused": "fused.ndjson",
    "network": "network.json",
    "geojson": "network.geojson",
    "sim_xml": "network.xml",
    "metrics": "metrics.json",
}


@dataclass
class PipelineParams:
    max_nodes: int = 100000
    max_depth: int = 100000
    max_retries: int = 2
    max_in_flight: int = 4
    radius_m: float = DEFAULT_MATCH_RADIUS_M
    lane_width_m: float = DEFAULT_LANE_WIDTH_M
    tau: float = 0.02
    track_gap_m: float = DEFAULT_TRACK_GAP_M
    track_bearing_deg: float = DEFAULT_TRACK_BEARING_DEG
    junction_split_m: float = DEFAULT_JUNCTION_SPLIT_M
    no_overlap_penalty: float = 10.0

    def validate(self) -> None:
        if self.max_nodes < 1:
            raise ConfigError("params.max_nodes must be >= 1")
        if self.max_depth < 0:
            raise ConfigError("params.max_depth must be >= 0")
        if self.max_retries < 0:
            raise ConfigError("params.max_retries must be >= 0")
        for name in ("radius_m", "lane_width_m", "tau", "track_gap_m", "junction_split_m"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"params.{name} must be > 0")
        if not 0 < self.track_bearing_deg <= 180:
            raise ConfigError("params.track_bearing_deg must be in (0, 180]")


@dataclass
class PipelineConfig:
    out_dir: Path
    seeds: list[str] = field(default_factory=list)
    region: tuple[float, float, float, float] | None = None
    datum: Datum = Datum.BD09
    provider: str | None = None
    osm: Path | None = None
    detections: Path | None = None
    annotations: Path | None = None
    params: PipelineParams = field(default_factory=PipelineParams)

    def artifact(self, name: str) -> Path:
        return self.out_dir / ARTIFACTS[name]


def load_config(path: Path) -> PipelineConfig:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise IOFailure(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    base = path.parent

    def _path(key):
        return (base / raw[key]).resolve() if raw.get(key) else None

    params_raw = raw.get("params", {})
    known = {f.name for f in fields(PipelineParams)}
    unknown = set(params_raw) - known
    if unknown:
        raise ConfigError(f"unknown params {sorted(unknown)} in config")
    params = PipelineParams(**params_raw)
    provider = raw.get("provider")
    if provider and provider.startswith("fixture:"):
        fixture_dir = Path(provider.split(":", 1)[1])
        if not fixture_dir.is_absolute():
            fixture_dir = (base / fixture_dir).resolve()
        provider = f"fixture:{fixture_dir}"
    try:
        datum = Datum(raw.get("datum", "bd09"))
    except ValueError as e:
        raise ConfigError(f"unknown datum {raw.get('datum')!r}") from e
    region = raw.get("region")
    if region is not None:
        if len(region) != 4:
            raise ConfigError("region must be [min_lng, min_lat, max_lng, max_lat]")
        region = tuple(float(v) for v in region)
    return PipelineConfig(
        out_dir=(base / raw.get("out_dir", "out")).resolve(),
        seeds=[str(s) for s in raw.get("seeds", [])],
        region=region,
        datum=datum,
        provider=provider,
        osm=_path("osm"),
        detections=_path("detections"),
        annotations=_path("annotations"),
        params=params,
    )


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _update_manifest(cfg: PipelineConfig, names: list[str]) -> None:
    manifest_path = cfg.out_dir / "manifest.json"
    manifest = {}
    if manifest_path.is_file():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            manifest = {}
    for name in names:
        p = cfg.artifact(name)
        manifest[ARTIFACTS[name]] = hashlib.sha256(p.read_bytes()).hexdigest()
    _atomic_write(
        manifest_path,
        (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"),
    )


def _require_file(path: Path | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"config is missing the {what} path")
    if not path.is_file():
        raise IOFailure(f"{what} file not found: {path}")
    return path


def _make_provider(cfg: PipelineConfig):
    if not cfg.provider:
        raise ConfigError("config is missing the provider spec")
    if cfg.provider.startswith("fixture:"):
        root = Path(cfg.provider.split(":", 1)[1]).resolve()
        if not root.is_dir():
            raise IOFailure(f"fixture provider directory not found: {root}")
        return FixtureProvider(root, datum=cfg.datum)
    raise ConfigError(f"unknown provider spec {cfg.provider!r} (supported: fixture:<dir>)")


def _write_text_artifact(cfg: PipelineConfig, name: str, producer) -> None:
    tmp_target = cfg.artifact(name)
    with tempfile.TemporaryDirectory(dir=cfg.out_dir) as td:
        scratch = Path(td) / ARTIFACTS[name]
        producer(scratch)
        _atomic_write(tmp_target, scratch.read_bytes())


# --- stages -------------------------------------------------------------------

def stage_crawl(cfg: PipelineConfig) -> None:
    if not cfg.seeds:
        raise ConfigError("config has no seeds")
    if cfg.region is None:
        raise ConfigError("config has no region")
    provider = _make_provider(cfg)
    region = Region(*cfg.region, datum=cfg.datum)
    limits = CrawlLimits(
        max_nodes=cfg.params.max_nodes,
        max_depth=cfg.params.max_depth,
        max_retries=cfg.params.max_retries,
        max_in_flight=cfg.params.max_in_flight,
    )
    catalog = crawl(cfg.seeds, region, provider, limits)
    log.info("crawl: %d records, %d boundary, %d skipped", len(catalog), len(catalog.boundary_ids), len(catalog.skipped))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _write_text_artifact(cfg, "catalog", lambda p: catalog_save(catalog, p))
    _update_manifest(cfg, ["catalog"])


def stage_transform(cfg: PipelineConfig) -> None:
    catalog = catalog_load(_require_file(cfg.artifact("catalog"), "catalog"))
    converted = catalog_to_wgs84(catalog)
    _write_text_artifact(cfg, "catalog_wgs84", lambda p: catalog_save(converted, p))
    _update_manifest(cfg, ["catalog_wgs84"])


def _write_tracks(tracks: list[ObservationTrack], path: Path) -> None:
    lines = [json.dumps({"kind": "tracks", "schema_version": 1}, sort_keys=True)]
    for t in tracks:
        lines.append(
            json.dumps(
                {
                    "track_id": t.track_id,
                    "points": [
                        {
                            "pano_id": p.pano_id,
                            "lng": p.position.lng,
                            "lat": p.position.lat,
                            "lane_count": p.lane_count,
                        }
                        for p in t.points
                    ],
                },
                sort_keys=True,
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_tracks(path: Path) -> list[ObservationTrack]:
    from .errors import ParseError, SchemaVersionError

    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"empty tracks file {path}", line=1)
    header = json.loads(lines[0])
    if header.get("kind") != "tracks":
        raise ParseError("not a tracks file", line=1)
    if header.get("schema_version") != 1:
        raise SchemaVersionError("unsupported tracks schema_version")
    out = []
    for idx, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            out.append(
                ObservationTrack(
                    track_id=str(obj["track_id"]),
                    points=[
                        TrackPoint(
                            pano_id=str(p["pano_id"]),
                            position=GeoPoint(float(p["lng"]), float(p["lat"])),
                            lane_count=None if p["lane_count"] is None else int(p["lane_count"]),
                        )
                        for p in obj["points"]
                    ],
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ParseError(f"bad track record: {e}", line=idx) from e
    return out


def _load_graph(cfg: PipelineConfig):
    osm_path = _require_file(cfg.osm, "osm")
    return build_graph(parse_osm(osm_path.read_bytes()))


def stage_tracks(cfg: PipelineConfig) -> None:
    catalog = catalog_load(_require_file(cfg.artifact("catalog_wgs84"), "catalog_wgs84"))
    detections = read_detections(_require_file(cfg.detections, "detections"))
    graph = _load_graph(cfg)
    tracks = build_tracks(
        catalog,
        detections,
        gap_m=cfg.params.track_gap_m,
        bearing_change_deg=cfg.params.track_bearing_deg,
    )
    tracks = split_tracks_at_junctions(tracks, graph, cfg.params.junction_split_m)
    log.info("tracks: %d", len(tracks))
    _write_text_artifact(cfg, "tracks", lambda p: _write_tracks(tracks, p))
    _update_manifest(cfg, ["tracks"])


def stage_match(cfg: PipelineConfig) -> None:
    tracks = _read_tracks(_require_file(cfg.artifact("tracks"), "tracks"))
    graph = _load_graph(cfg)
    results = match_tracks(tracks, graph, cfg.params.radius_m)
    accepted = sum(1 for r in results if r.accepted)
    log.info("match: %d/%d accepted", accepted, len(results))
    _write_text_artifact(cfg, "matches", lambda p: write_matches(results, p))
    _update_manifest(cfg, ["matches"])


def stage_fuse(cfg: PipelineConfig) -> None:
    tracks = _read_tracks(_require_file(cfg.artifact("tracks"), "tracks"))
    matches = read_matches(_require_file(cfg.artifact("matches"), "matches"))
    graph = _load_graph(cfg)
    fused = fuse_lane_counts([m for m in matches if m.accepted], tracks, graph)

    def _write(p: Path):
        lines = [json.dumps({"kind": "fused_counts", "schema_version": 1}, sort_keys=True)]
        for edge_id in sorted(fused):
            count, source = fused[edge_id]
            lines.append(json.dumps({"edge_id": edge_id, "lane_count": count, "source": source}, sort_keys=True))
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")

    _write_text_artifact(cfg, "fused", _write)
    _update_manifest(cfg, ["fused"])


def read_fused(path: Path) -> dict[str, tuple[int, str]]:
    from .errors import ParseError

    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or json.loads(lines[0]).get("kind") != "fused_counts":
        raise ParseError(f"not a fused counts file: {path}", line=1)
    out = {}
    for idx, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            out[str(obj["edge_id"])] = (int(obj["lane_count"]), str(obj["source"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ParseError(f"bad fused record: {e}", line=idx) from e
    return out


def stage_build(cfg: PipelineConfig) -> None:
    fused = read_fused(_require_file(cfg.artifact("fused"), "fused"))
    graph = _load_graph(cfg)
    net = build_network(graph, fused, cfg.params.lane_width_m)
    log.info("build: %d directed edges, %d turns", len(net.edges), len(net.turns))
    _write_text_artifact(cfg, "network", lambda p: write_network(net, p))
    _update_manifest(cfg, ["network"])


def stage_export(cfg: PipelineConfig) -> None:
    net = read_network(_require_file(cfg.artifact("network"), "network"))
    _atomic_write(cfg.artifact("geojson"), export_geojson(net))
    _atomic_write(cfg.artifact("sim_xml"), export_sim_xml(net))
    _update_manifest(cfg, ["geojson", "sim_xml"])


def stage_eval(cfg: PipelineConfig) -> None:
    preds = read_detections(_require_file(cfg.detections, "detections"))
    gts = read_annotations(_require_file(cfg.annotations, "annotations"))
    metrics = evaluate_detections(preds, gts, cfg.params.tau)
    payload = {
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "lane_count_accuracy": metrics.lane_count_accuracy,
        "negative_accuracy": metrics.negative_accuracy,
    }
    _atomic_write(
        cfg.artifact("metrics"),
        (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8"),
    )
    _update_manifest(cfg, ["metrics"])


STAGE_FUNCS = {
    "crawl": stage_crawl,
    "transform": stage_transform,
    "tracks": stage_tracks,
    "match": stage_match,
    "fuse": stage_fuse,
    "build": stage_build,
    "export": stage_export,
    "eval": stage_eval,
}


def run_stage(stage: str, cfg: PipelineConfig) -> None:
    if stage == "all":
        for name in STAGES:
            if name == "eval" and cfg.annotations is None:
                log.info("eval: skipped (no annotations configured)")
                continue
            run_stage(name, cfg)
        return
    cfg.params.validate()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    STAGE_FUNCS[stage](cfg)


# --- argument handling ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 for usage problems, not argparse's 2
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="laneforge", description="Lane-level road network synthesis pipeline")
    parser.add_argument("--version", action="store_true", help="print version and exit")
    sub = parser.add_subparsers(dest="stage")
    for name in STAGES + ("all",):
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", type=Path, help="pipeline config JSON")
        p.add_argument("--seeds", type=str, help="comma-separated seed pano ids")
        p.add_argument("--region", type=str, help="min_lng,min_lat,max_lng,max_lat")
        p.add_argument("--datum", type=str, choices=[d.value for d in Datum])
        p.add_argument("--provider", type=str, help="provider spec, e.g. fixture:<dir>")
        p.add_argument("--osm", type=Path)
        p.add_argument("--detections", type=Path)
        p.add_argument("--annotations", type=Path)
        p.add_argument("--out", type=Path, help="output/run directory")
        p.add_argument("--max-nodes", type=int)
        p.add_argument("--max-depth", type=int)
        p.add_argument("--radius-m", type=float)
        p.add_argument("--lane-width-m", type=float)
        p.add_argument("--tau", type=float)
    return parser


def _apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    if args.seeds:
        cfg.seeds = [s for s in args.seeds.split(",") if s]
    if args.region:
        parts = args.region.split(",")
        if len(parts) != 4:
            raise UsageError("--region needs min_lng,min_lat,max_lng,max_lat")
        cfg.region = tuple(float(v) for v in parts)
    if args.datum:
        cfg.datum = Datum(args.datum)
    if args.provider:
        cfg.provider = args.provider
    if args.osm:
        cfg.osm = args.osm.resolve()
    if args.detections:
        cfg.detections = args.detections.resolve()
    if args.annotations:
        cfg.annotations = args.annotations.resolve()
    if args.out:
        cfg.out_dir = args.out.resolve()
    for flag, name in (
        ("max_nodes", "max_nodes"),
        ("max_depth", "max_depth"),
        ("radius_m", "radius_m"),
        ("lane_width_m", "lane_width_m"),
        ("tau", "tau"),
    ):
        val = getattr(args, flag)
        if val is not None:
            setattr(cfg.params, name, val)
    return cfg


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s %(levelname)s %(message)s", stream=sys.stderr)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.version:
            print(f"laneforge {__version__}")
            return 0
        if not args.stage:
            raise UsageError(f"a stage subcommand is required\n{parser.format_usage()}")
        if args.config:
            if not args.config.is_file():
                raise IOFailure(f"config file not found: {args.config}")
            cfg = load_config(args.config)
        else:
            if not args.out:
                raise UsageError(f"--config or --out is required\n{parser.format_usage()}")
            cfg = PipelineConfig(out_dir=args.out.resolve())
        cfg = _apply_overrides(cfg, args)
        run_stage(args.stage, cfg)
        return 0
    except LaneforgeError as e:
        sys.stderr.write(
            json.dumps(
                {"error": type(e).__name__, "message": str(e), "exit_code": e.exit_code},
                sort_keys=True,
            )
            + "\n"
        )
        return e.exit_code
    except FileNotFoundError as e:
        sys.stderr.write(json.dumps({"error": "IOFailure", "message": str(e), "exit_code": 3}) + "\n")
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
