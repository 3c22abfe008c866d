"""Command-line entry point: ``floorcount <subcommand> [options]``.

Every subcommand reads its inputs from flags or from the ``[paths]`` section
of an INI config (``--config``); flags win. Relative paths in a config are
resolved against the config file's directory. Outputs go to ``--out``
(default: current directory) and are written atomically.

Exit status: 0 success, 1 usage or configuration error, 2 data error.
"""
import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import evaluation, footprints, ingestion, matching, model, planner, quality, stats
from .errors import (ConfigError, DataError, EmptyPlan, FloorcountError, InvalidSummary, InvalidValue,
                     MalformedDocument, NonFiniteLoss)

log = logging.getLogger("floorcount")

SUBCOMMANDS = ("ingest", "match", "filter", "plan", "stats", "train", "infer", "eval")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class Config:
    """INI configuration plus flag overrides, with dotted-path error reporting."""

    def __init__(self, path=None):
        self.ini = configparser.ConfigParser()
        self.base = Path.cwd()
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError("--config", f"config file not found: {path}")
            try:
                self.ini.read(p, encoding="utf-8")
            except configparser.Error as exc:
                raise ConfigError("--config", f"cannot parse {path}: {exc}") from None
            self.base = p.resolve().parent

    def get(self, section, key, override=None, cast=str, default=None, required=False):
        field = f"{section}.{key}"
        if override is not None:
            return override
        if self.ini.has_option(section, key):
            raw = self.ini.get(section, key)
            try:
                return cast(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(field, f"bad value {raw!r}: {exc}") from None
        if required:
            raise ConfigError(field, "required but not set (use the flag or the config file)")
        return default

    def path(self, key, override=None, required=True):
        field = f"paths.{key}"
        if override is not None:
            p = Path(override)
        elif self.ini.has_option("paths", key):
            p = self.base / self.ini.get("paths", key)
        elif required:
            raise ConfigError(field, "required but not set (use the flag or the config file)")
        else:
            return None
        if not p.is_file():
            raise ConfigError(field, f"file not found: {p}")
        return p


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _floats(v):
    return tuple(float(x) for x in str(v).split(","))


def _ints(v):
    return tuple(int(x) for x in str(v).split(",") if x.strip())


def write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    log.info("wrote %s", path)


def _read(path):
    return Path(path).read_text(encoding="utf-8")


def _fan_out(func, items, jobs, initializer=None, initargs=()):
    if jobs <= 1 or len(items) < 2:
        if initializer:
            initializer(*initargs)
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs, initializer=initializer, initargs=initargs) as pool:
        return list(pool.map(func, items, chunksize=max(1, len(items) // (4 * jobs))))


# ---------------------------------------------------------------- ingest

def cmd_ingest(args, cfg):
    text = _read(cfg.path("metadata", args.metadata))
    metas, issues = ingestion.parse_metadata(text)
    fcfg = ingestion.FilterConfig(
        min_quality=cfg.get("ingest", "min_quality", args.min_quality, float, 0.5),
        night_hours=cfg.get("ingest", "night_hours", None, _ints, (21, 6)),
        exclude_panoramas=cfg.get("ingest", "exclude_panoramas", None, _bool, True),
        bounding_box=cfg.get("ingest", "bounding_box", None, _floats, ingestion.MUNICH_BBOX),
        timezone=cfg.get("ingest", "timezone", None, str, "Europe/Berlin"),
    )
    kept, rejected = ingestion.filter_metadata(metas, fcfg)
    out = Path(args.out)
    write_atomic(out / "kept.json", ingestion.dump_metadata(kept))
    write_atomic(out / "rejections.csv", ingestion.rejection_log_csv(rejected))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "image_id", "kind", "detail"])
    for it in issues:
        w.writerow([it.index, it.image_id or "", it.kind, it.detail])
    write_atomic(out / "parse_issues.csv", buf.getvalue())
    if kept:
        write_atomic(out / "images.gpx", ingestion.export_gpx(kept))
    log.info("ingest: %d parsed, %d kept, %d rejected, %d skipped", len(metas), len(kept), len(rejected), len(issues))


# ---------------------------------------------------------------- match

_WORKER = {}


def _match_init(store_text, metas, knobs):
    _WORKER["store"] = footprints.load_footprints(store_text)
    _WORKER["metas"] = metas
    _WORKER["knobs"] = knobs


def _match_one(crop):
    store, metas, k = _WORKER["store"], _WORKER["metas"], _WORKER["knobs"]
    meta = metas.get(crop.image_id)
    if meta is None:
        return (crop.image_id, crop.crop_index, "", 0.0, 0, "unknown image")
    try:
        cam = matching.camera_for(meta, k["hfov_deg"])
        res = matching.match_crop(crop, cam, store, k["buffer_m"], k["eps_deg"], k["max_range_m"])
    except DataError as exc:
        return (crop.image_id, crop.crop_index, "", 0.0, 0, str(exc))
    return (crop.image_id, crop.crop_index, res.footprint_id or "", res.confidence, res.rays_cast, "")


def _read_crops(text):
    try:
        rows = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"crops are not valid JSON: {exc}") from exc
    if not isinstance(rows, list):
        raise MalformedDocument("crops document must be a JSON array")
    crops = []
    for r in rows:
        try:
            crops.append(matching.CropBox(str(r["image_id"]), float(r["x_min"]), float(r["x_max"]),
                                          int(r.get("crop_index", 0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"bad crop record {r!r}: {exc}") from None
    return crops


def cmd_match(args, cfg):
    store_text = _read(cfg.path("footprints", args.footprints))
    metas, _ = ingestion.parse_metadata(_read(cfg.path("metadata", args.metadata)))
    crops = _read_crops(_read(cfg.path("crops", args.crops)))
    knobs = {
        "hfov_deg": cfg.get("matcher", "hfov_deg", args.hfov_deg, float, None),
        "buffer_m": cfg.get("matcher", "buffer_m", args.buffer_m, float, matching.DEFAULT_BUFFER_M),
        "eps_deg": cfg.get("matcher", "eps_deg", args.eps_deg, float, matching.DEFAULT_EPS_DEG),
        "max_range_m": cfg.get("matcher", "max_range_m", args.max_range_m, float, matching.DEFAULT_MAX_RANGE_M),
    }
    for key in ("buffer_m", "eps_deg", "max_range_m"):
        if not knobs[key] > 0:
            raise ConfigError(f"matcher.{key}", "must be > 0")
    # validate the store up front so errors surface before forking
    footprints.load_footprints(store_text)
    by_id = {m.image_id: m for m in metas}
    rows = _fan_out(_match_one, crops, args.jobs, _match_init, (store_text, by_id, knobs))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "crop_index", "footprint_id", "confidence", "rays_cast", "note"])
    for image_id, idx, fid, conf, rays, note in rows:
        w.writerow([image_id, idx, fid, f"{conf:.6f}", rays, note])
    write_atomic(Path(args.out) / "matches.csv", buf.getvalue())


# ---------------------------------------------------------------- filter

def _filter_one(item):
    key, summary, t = item
    try:
        return key, quality.evaluate_filters(summary, t), ""
    except DataError as exc:
        return key, None, str(exc)


def cmd_filter(args, cfg):
    items = quality.read_summaries(_read(cfg.path("summaries", args.summaries)))
    t = quality.Thresholds(
        min_building=cfg.get("filter", "min_building", args.min_building, float, 0.20),
        max_vegetation=cfg.get("filter", "max_vegetation", args.max_vegetation, float, 0.70),
        top_building=cfg.get("filter", "top_building", None, float, 0.5),
        top_vegetation=cfg.get("filter", "top_vegetation", None, float, 0.5),
    )
    results = _fan_out(_filter_one, [(k, s, t) for k, s in items], args.jobs)
    bad = [(k, err) for k, d, err in results if d is None]
    if bad:
        raise InvalidSummary(f"{len(bad)} invalid summaries, first {bad[0][0]}: {bad[0][1]}")
    write_atomic(Path(args.out) / "decisions.csv", quality.decision_log_csv([(k, d) for k, d, _ in results]))


# ---------------------------------------------------------------- plan

def cmd_plan(args, cfg):
    store = footprints.load_footprints(_read(cfg.path("footprints", args.footprints)))
    try:
        quota = json.loads(_read(cfg.path("quota", args.quota)))
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"quota is not valid JSON: {exc}") from exc
    seed = args.seed if args.seed is not None else cfg.get("run", "seed", None, int, 0)
    closed = args.closed or cfg.get("plan", "closed", None, _bool, False)
    photos = cfg.get("plan", "photos_per_building", None, int, 3)
    selected, shortfalls = planner.select_targets(store, quota, seed)
    out = Path(args.out)
    write_atomic(out / "shortfall.csv", planner.shortfall_csv(shortfalls, quota))
    if not selected:
        raise EmptyPlan("no buildings selected for the given quota")
    plan = planner.build_plan(selected, photos, closed)
    gpx, legs = planner.export_route(plan)
    write_atomic(out / "route.gpx", gpx)
    write_atomic(out / "legs.csv", legs)
    log.info("plan: %d stops, %.1f m", len(plan.stops), plan.total_distance_m)


# ---------------------------------------------------------------- stats

def _assemble_records(matches_text, decisions_text, store, source):
    keep = {}
    for r in csv.DictReader(io.StringIO(decisions_text)):
        keep[(r["image_id"], int(r["crop_index"]))] = r["decision"] == "keep"
    records = []
    for r in csv.DictReader(io.StringIO(matches_text)):
        key = (r["image_id"], int(r["crop_index"]))
        fid = r["footprint_id"]
        if not fid or not keep.get(key, False) or fid not in store:
            continue
        fp = store[fid]
        if fp.floor_count is None:
            continue
        records.append(stats.DatasetRecord(f"{key[0]}#{key[1]}", fid, fp.floor_count, source, fp.height_m))
    return records


def cmd_stats(args, cfg):
    out = Path(args.out)
    fp_path = cfg.path("footprints", args.footprints, required=False)
    store = footprints.load_footprints(_read(fp_path)) if fp_path else None
    rec_path = cfg.path("records", args.records, required=False)
    if rec_path is not None:
        records = stats.read_records_csv(_read(rec_path))
    else:
        if args.matches is None or args.decisions is None or store is None:
            raise ConfigError("paths.records", "give --records, or --matches with --decisions and --footprints")
        records = _assemble_records(_read(args.matches), _read(args.decisions), store, args.source)
        write_atomic(out / "records.csv", _records_csv(records))
    write_atomic(out / "histogram.csv", stats.histogram_csv(stats.floor_histogram(records)))
    if store is not None:
        text, skipped = stats.height_floor_export(store)
        write_atomic(out / "height_floor.csv", text)
        log.info("stats: %d footprints skipped for missing floor count or height", skipped)


def _records_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "footprint_id", "floor_count", "source", "height_m"])
    for r in records:
        w.writerow([r.image_id, r.footprint_id, r.floor_count, r.source, "" if r.height_m is None else r.height_m])
    return buf.getvalue()


# ---------------------------------------------------------------- train / infer / eval

def _model_config(args, cfg, feature_dim):
    seed = args.seed if args.seed is not None else cfg.get("run", "seed", None, int, 0)
    try:
        return model.ModelConfig(
            variant=cfg.get("train", "variant", args.variant, str, "hyb+httc"),
            cuts=cfg.get("train", "cuts", None, _ints, None),
            mtl_roof=cfg.get("train", "mtl_roof", True if args.mtl_roof else None, _bool, False),
            feature_dim=feature_dim,
            hidden=cfg.get("train", "hidden", None, _ints, (64,)),
            lr=cfg.get("train", "lr", args.lr, float, 1e-3),
            epochs=cfg.get("train", "epochs", args.epochs, int, 100),
            batch_size=cfg.get("train", "batch_size", None, int, 64),
            seed=seed,
            readout=cfg.get("train", "readout", None, str, "floor"),
        )
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from None
    except DataError as exc:
        raise ConfigError("train", str(exc)) from None


def cmd_train(args, cfg):
    ds, labelled = model.read_dataset_csv(_read(cfg.path("dataset", args.dataset)))
    if not labelled:
        raise MalformedDocument("training data needs a 'label' or 'floors' column")
    mcfg = _model_config(args, cfg, ds.X.shape[1])
    tr, va, te = model.split_dataset(ds, mcfg.seed)
    result = model.train(mcfg, tr, va)
    out = Path(args.out)
    write_atomic(out / "model.json", result.model.to_json())
    write_atomic(out / "epoch_log.csv", model.epoch_log_csv(result.log))
    if len(te):
        pred, _ = result.model.predict(te.X)
        rep = evaluation.evaluate(pred, te.y)
        doc = {"best_epoch": result.best_epoch, "test": rep.to_dict(),
               "split": {"train": len(tr), "val": len(va), "test": len(te)}}
        write_atomic(out / "test_report.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_infer(args, cfg):
    net = model.FloorNet.from_json(_read(cfg.path("model", args.model)))
    ds, labelled = model.read_dataset_csv(_read(cfg.path("features", args.features)))
    if ds.X.shape[1] != net.config.feature_dim:
        raise InvalidValue("features", ds.X.shape[1], f"model expects {net.config.feature_dim}")
    pred, F = net.predict(ds.X)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "pred", "floors", "F"] + (["gt"] if labelled else []))
    for i in range(len(pred)):
        w.writerow([i, int(pred[i]), int(pred[i]) + 1, f"{F[i]:.6f}"] + ([int(ds.y[i])] if labelled else []))
    write_atomic(Path(args.out) / "predictions.csv", buf.getvalue())


def cmd_eval(args, cfg):
    text = _read(cfg.path("pairs", args.pairs))
    reader = csv.DictReader(io.StringIO(text))
    # accept infer output (pred + gt) as well as a bare pred,gt file
    if reader.fieldnames and "pred" in reader.fieldnames and "gt" in reader.fieldnames:
        preds, gts = evaluation.read_pairs_csv(text)
    else:
        raise MalformedDocument("paired CSV needs 'pred' and 'gt' columns")
    rep = evaluation.evaluate(preds, gts)
    out = Path(args.out)
    write_atomic(out / "report.json", rep.to_json())
    write_atomic(out / "confusion.csv", rep.confusion_csv())


COMMANDS = {
    "ingest": cmd_ingest, "match": cmd_match, "filter": cmd_filter, "plan": cmd_plan,
    "stats": cmd_stats, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="overrides run.seed everywhere")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for match/filter")
    common.add_argument("--log-level", default="INFO")

    p = _Parser(prog="floorcount", description="Floor-count dataset and model toolkit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="parse and filter image metadata")
    s.add_argument("--metadata")
    s.add_argument("--min-quality", type=float)

    s = sub.add_parser("match", parents=[common], help="match crops to footprints")
    s.add_argument("--footprints")
    s.add_argument("--metadata")
    s.add_argument("--crops")
    s.add_argument("--hfov-deg", type=float)
    s.add_argument("--buffer-m", type=float)
    s.add_argument("--eps-deg", type=float)
    s.add_argument("--max-range-m", type=float)

    s = sub.add_parser("filter", parents=[common], help="quality-filter crops from segmentation summaries")
    s.add_argument("--summaries")
    s.add_argument("--min-building", type=float)
    s.add_argument("--max-vegetation", type=float)

    s = sub.add_parser("plan", parents=[common], help="select targets and plan a capture route")
    s.add_argument("--footprints")
    s.add_argument("--quota")
    s.add_argument("--closed", action="store_true")

    s = sub.add_parser("stats", parents=[common], help="floor histogram and height/floor export")
    s.add_argument("--records")
    s.add_argument("--footprints")
    s.add_argument("--matches")
    s.add_argument("--decisions")
    s.add_argument("--source", default="mapillary", choices=stats.SOURCES)

    s = sub.add_parser("train", parents=[common], help="train a floor head on feature vectors")
    s.add_argument("--dataset")
    s.add_argument("--variant")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--mtl-roof", action="store_true")

    s = sub.add_parser("infer", parents=[common], help="predict floor classes with a trained model")
    s.add_argument("--model")
    s.add_argument("--features")

    s = sub.add_parser("eval", parents=[common], help="metrics from paired predictions")
    s.add_argument("--pairs")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"floorcount: {exc}", file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = Config(args.config)
        if args.jobs < 1:
            raise ConfigError("--jobs", "must be >= 1")
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 1
    except NonFiniteLoss as exc:
        log.error("training aborted at epoch %d: non-finite loss", exc.epoch)
        return 2
    except (DataError, FloorcountError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
