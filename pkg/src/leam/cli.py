"""Batch command line: map, correlate, compare, occlude, stats (and synth).

Every subcommand writes into ``--out`` (a directory). Outputs are sorted by
key and written by a single process, so ``--jobs N`` only changes speed.
Exit status: 0 success, 1 total failure, 2 partial failure (see
``errors.log`` in the output directory).
"""
import argparse
import csv
import io
import json
import logging
import math
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from itertools import combinations
from pathlib import Path

import numpy as np

from . import __version__
from .archive import (MapRecord, load_upsampled, map_relpath, pair_id, read_index, to_gray,
                      to_warm, write_index, write_map)
from .desknet import normalize_pixels, prepare
from .errors import LeamError
from .imageio import read_rgb, write_pgm, write_png
from .manifest import load_manifest, load_model, resolve_seed
from .maps import generate_maps, normalize_map, upsample
from .mapsim import DEFAULT_EMD_GRID, alignment_transforms, apply_transform, load_landmarks
from .occlusion import MODES, OUTCOME_COLUMNS, Pair, occlusion_sweep
from .regions import CLASS_NAMES, aggregate_reports, correlate, load_mask, select_by_value_threshold, \
    select_top_percent
from .stats import (DIFFERENT_IDENTITY, SAME_IDENTITY, coefficient_of_variation, group_by, group_value,
                    mann_whitney_u, pairwise_bc_emd_table, summarize)

log = logging.getLogger("leam")

EXIT_OK, EXIT_FAILURE, EXIT_PARTIAL = 0, 1, 2
SOURCES_NAME = "sources.json"
DEFAULT_PERCENTS = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0)


# -- output helpers ------------------------------------------------------------

def fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def write_json(path, doc):
    Path(path).write_bytes((json.dumps(doc, indent=1, sort_keys=True) + "\n").encode("utf-8"))


def finish(out, errors, attempted, failed):
    """Write the error log (if any) and pick the exit status."""
    log_path = Path(out) / "errors.log"
    if errors:
        log_path.write_bytes(("\n".join(errors) + "\n").encode("utf-8"))
        for line in errors:
            log.error(line)
    elif log_path.exists():
        log_path.unlink()
    if attempted and failed >= attempted:
        return EXIT_FAILURE
    return EXIT_PARTIAL if errors else EXIT_OK


def run_info(out, command, seed, **params):
    write_json(Path(out) / "run.json", {"command": command, "version": __version__, "seed": seed,
                                        "params": params})


def parse_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def parse_floats(text):
    return [float(t) for t in parse_list(text)]


def parse_seeds(text):
    """``"0-99"``, ``"1,2,5"`` or a mix of both."""
    seeds = []
    for token in parse_list(text):
        if "-" in token:
            lo, hi = token.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(token))
    return seeds


def _pmap(func, jobs, n_jobs):
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(func, jobs))
    return [func(j) for j in jobs]


def _load_image(path):
    return normalize_pixels(read_rgb(path))


def _select_models(manifest, names):
    wanted = parse_list(names) if names else sorted(manifest.models)
    if not wanted:
        raise LeamError("the manifest lists no models")
    missing = [n for n in wanted if n not in manifest.models]
    if missing:
        raise LeamError(f"unknown model(s) {missing}; manifest has {sorted(manifest.models)}")
    return {n: load_model(manifest.models[n], n, manifest.root) for n in wanted}


# -- map -------------------------------------------------------------------------

def _map_cell(job):
    net, layers, anchor, positive = job
    try:
        pair, maps = generate_maps(net, prepare(net, anchor), prepare(net, positive), target=anchor.shape[1:],
                                   layers=layers)
    except (LeamError, ValueError) as exc:
        return None, None, str(exc)
    return pair.cosine, [(m.layer, m.raw) for m in maps], None


def _sources(manifest):
    return {"manifest": str(manifest.root), "entries": {
        e.name: {"identity": e.identity, "image": str(e.image), "mask": e.mask and str(e.mask),
                 "landmarks": e.landmarks and str(e.landmarks), "attributes": e.attributes,
                 "reference": e.reference} for e in manifest.entries()}}


def stored_upsampled(raw, shape):
    """The map exactly as :func:`load_upsampled` will reconstruct it."""
    return upsample(normalize_map(np.asarray(raw, dtype="<f4").astype(np.float64)), shape)


def cmd_map(args):
    manifest = load_manifest(args.manifest)
    seed = resolve_seed(args.seed, manifest)
    models = _select_models(manifest, args.model)
    layers = tuple(parse_list(args.layers)) if args.layers else manifest.layers
    for name, net in models.items():
        unknown = set(layers) - set(net.tagged)
        if unknown:
            raise LeamError(f"model {name} has no tagged layer(s) {sorted(unknown)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    errors = []
    images = {}
    for entry in manifest.entries():
        try:
            images[entry.name] = _load_image(entry.image)
        except (OSError, LeamError, ValueError) as exc:
            errors.append(f"image {entry.name}: unreadable {entry.image}: {exc}")
    cells = []
    for model_name in sorted(models):
        for a, p in manifest.ordered_pairs():
            cells.append((model_name, a, p))
    jobs = []
    runnable = []
    for model_name, a, p in cells:
        if a.name in images and p.name in images:
            runnable.append((model_name, a, p))
            jobs.append((models[model_name], list(layers), images[a.name], images[p.name]))
        else:
            errors.append(f"pair {pair_id(a.identity, a.name, p.name)} ({model_name}): missing image")
    results = _pmap(_map_cell, jobs, args.jobs)
    records = []
    failed = len(cells) - len(runnable)
    for (model_name, a, p), (cosine, maps, err) in zip(runnable, results):
        pid = pair_id(a.identity, a.name, p.name)
        if err is not None:
            errors.append(f"pair {pid} ({model_name}): {err}")
            failed += 1
            continue
        H, W = images[a.name].shape[1:]
        for layer, raw in maps:
            rel = map_relpath(model_name, layer, a.identity, a.name, p.name)
            write_map(out / rel, raw)
            rec = MapRecord(pid, model_name, layer, rel, a.identity, a.name, p.name, H, W, fmt(cosine),
                            fmt(1.0 - cosine), seed)
            records.append(rec)
            if args.render:
                heat = stored_upsampled(raw, (H, W))
                stem = out / "heatmaps" / Path(rel).with_suffix("")
                stem.parent.mkdir(parents=True, exist_ok=True)
                write_pgm(stem.with_suffix(".pgm"), to_gray(heat))
                write_png(stem.with_suffix(".png"), to_warm(heat))
    write_index(out, records)
    write_json(out / SOURCES_NAME, _sources(manifest))
    run_info(out, "map", seed, models=sorted(models), layers=list(layers), render=bool(args.render))
    log.info("wrote %d maps to %s", len(records), out)
    return finish(out, errors, len(cells), failed)


# -- correlate ---------------------------------------------------------------------

CORRELATION_COLUMNS = ("scope", "model", "layer", "pair_id", "identity", "class", "pixels", "absolute_percent",
                       "relative_percent", "selected", "total", "maps", "selection", "parameter", "seed", "status")


def _archive_sources(archive, manifest_path=None):
    if manifest_path:
        return _sources(load_manifest(manifest_path))["entries"]
    path = Path(archive) / SOURCES_NAME
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))["entries"]
    return {}


def _mask_path(name, sources, masks_dir):
    if masks_dir:
        for suffix in (".pgm", ".png"):
            candidate = Path(masks_dir) / f"{name}{suffix}"
            if candidate.exists():
                return candidate
        return None
    entry = sources.get(name) or {}
    return entry.get("mask") and Path(entry["mask"])


def _report_rows(scope, model, layer, pid, identity, report, selection, parameter, seed, status):
    for cls, px, ab, rel in report.rows():
        yield (scope, model, layer, pid, identity, cls, px, ab, rel, report.selected, report.total,
               report.count, selection, parameter, seed, status)


def cmd_correlate(args):
    archive = Path(args.archive)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = read_index(archive)
    sources = _archive_sources(archive, args.manifest)
    seed = resolve_seed(args.seed)
    if args.threshold is not None:
        mode, parameter = "threshold", float(args.threshold)
    else:
        mode, parameter = "top-percent", float(args.top_percent)
    errors = []
    rows = []
    per_group = defaultdict(list)
    per_identity = defaultdict(list)
    masks = {}
    failed = 0
    for rec in sorted(records, key=lambda r: (r.model, r.layer, r.pair_id)):
        try:
            if rec.anchor not in masks:
                path = _mask_path(rec.anchor, sources, args.masks)
                if path is None:
                    raise LeamError(f"no mask for image {rec.anchor}")
                masks[rec.anchor] = load_mask(path)
            heat = load_upsampled(archive, rec)
            if mode == "threshold":
                selection = select_by_value_threshold(heat, parameter, rec.layer)
            else:
                selection = select_top_percent(heat, parameter, rec.layer)
            report = correlate(selection, masks[rec.anchor], {"pair_id": rec.pair_id})
        except (OSError, LeamError, ValueError) as exc:
            failed += 1
            errors.append(f"map {rec.model}/{rec.layer}/{rec.pair_id}: {exc}")
            rows.append(("map", rec.model, rec.layer, rec.pair_id, rec.identity, "", None, None, None, None, None,
                         None, mode, parameter, rec.seed, f"error: {exc}"))
            continue
        status = "empty" if report.empty else ("scarce" if selection.scarce else "ok")
        rows.extend(_report_rows("map", rec.model, rec.layer, rec.pair_id, rec.identity, report, mode, parameter,
                                 rec.seed, status))
        if not report.empty:
            per_group[(rec.model, rec.layer)].append(report)
            per_identity[(rec.model, rec.layer, rec.identity)].append(report)
    identity_tables = {}
    for (model, layer), reports in sorted(per_group.items()):
        rows.extend(_report_rows("model-layer", model, layer, "*", "", aggregate_reports(reports), mode, parameter,
                                 seed, "ok"))
    for (model, layer, ident), reports in sorted(per_identity.items()):
        agg = aggregate_reports(reports)
        identity_tables[(model, layer, ident)] = agg
        rows.extend(_report_rows("identity", model, layer, f"{ident}:*", ident, agg, mode, parameter, seed, "ok"))
    write_csv(out / "correlation.csv", CORRELATION_COLUMNS, rows)
    idents = sorted({k[2] for k in identity_tables})
    table = []
    for model, layer in sorted({k[:2] for k in identity_tables}):
        for c, cls in enumerate(CLASS_NAMES):
            cells = [identity_tables[(model, layer, i)].relative[c] if (model, layer, i) in identity_tables else None
                     for i in idents]
            table.append([model, layer, cls] + cells)
    write_csv(out / "identity_table.csv", ["model", "layer", "class"] + idents, table)
    run_info(out, "correlate", seed, selection=mode, parameter=parameter)
    return finish(out, errors, len(records), failed)


# -- compare -----------------------------------------------------------------------

def _image_maps(archive, records):
    """Mean upsampled map per (model, layer, identity, anchor image)."""
    acc = {}
    for rec in sorted(records, key=lambda r: (r.model, r.layer, r.pair_id)):
        key = (rec.model, rec.layer, rec.identity, rec.anchor)
        heat = load_upsampled(archive, rec)
        if key in acc:
            acc[key][0] += heat
            acc[key][1] += 1
        else:
            acc[key] = [heat.copy(), 1]
    return {k: total / n for k, (total, n) in acc.items()}


def _alignment(records, sources, skipped):
    """Per-image transforms, or None for images that cannot be aligned."""
    shapes = {r.anchor: (r.height, r.width) for r in records}
    by_identity = defaultdict(list)
    for r in records:
        if r.anchor not in by_identity[r.identity]:
            by_identity[r.identity].append(r.anchor)
    transforms = {}
    for ident in sorted(by_identity):
        names = sorted(by_identity[ident])
        refs = [n for n in names if (sources.get(n) or {}).get("reference")]
        if len(refs) != 1:
            skipped.append((ident, "", f"needs exactly one reference image, found {len(refs)}"))
            continue
        marks = {}
        for n in names:
            path = (sources.get(n) or {}).get("landmarks")
            try:
                if not path:
                    raise LeamError("no landmarks file")
                H, W = shapes[n]
                marks[n] = load_landmarks(path, width=W, height=H)
            except (OSError, LeamError, ValueError) as exc:
                skipped.append((ident, n, f"landmarks: {exc}"))
        if refs[0] not in marks:
            skipped.append((ident, refs[0], "reference image has no usable landmarks"))
            continue
        try:
            found = alignment_transforms(marks, refs[0])
        except (LeamError, ValueError) as exc:
            skipped.append((ident, "", f"alignment failed: {exc}"))
            continue
        transforms.update(found)
    return transforms


def cmd_compare(args):
    archive = Path(args.archive)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = read_index(archive)
    sources = _archive_sources(archive, args.manifest)
    seed = resolve_seed(args.seed)
    skipped = []
    errors = []
    try:
        maps = _image_maps(archive, records)
    except (OSError, LeamError) as exc:
        errors.append(f"archive: {exc}")
        maps = {}
    transforms = _alignment(records, sources, skipped) if args.align else None
    groups = defaultdict(list)
    degenerate = 0
    for (model, layer, ident, name), heat in sorted(maps.items(), key=lambda kv: kv[0]):
        if transforms is not None:
            if name not in transforms:
                continue
            heat = np.maximum(apply_transform(heat, transforms[name]), 0.0)
        total = float(heat.sum())
        if total > 0.0:
            dist = heat / total
        else:
            degenerate += 1
            dist = np.full(heat.shape, 1.0 / heat.size)
        groups[(ident, layer, model)].append(dist)
    if degenerate:
        log.warning("%d all-zero maps replaced by the uniform distribution", degenerate)
    rows = []
    with_emd = args.emd_grid > 0
    for kind in (SAME_IDENTITY, DIFFERENT_IDENTITY):
        rows.extend(pairwise_bc_emd_table(groups, kind, emd_grid=max(args.emd_grid, 2), sample=args.sample,
                                          seed=seed, with_emd=with_emd, jobs=args.jobs))
    header = ("kind", "layer", "model", "pairs", "mean_bc", "mean_emd", "emd_grid", "sample_size", "seed",
              "aligned", "degenerate_maps")
    write_csv(out / "compare.csv", header,
              [(r.kind, r.layer, r.model, r.pairs, r.mean_bc, r.mean_emd, r.emd_grid if with_emd else 0,
                r.sample_size, r.seed, bool(args.align), degenerate) for r in rows])
    model_names = sorted({r.model for r in rows})
    for kind in (SAME_IDENTITY, DIFFERENT_IDENTITY):
        for metric in ("bc", "emd"):
            if metric == "emd" and not with_emd:
                continue
            cells = {(r.layer, r.model): getattr(r, f"mean_{metric}") for r in rows if r.kind == kind}
            layers = sorted({layer for layer, _ in cells})
            write_csv(out / f"{metric}_{kind}.csv", ["layer"] + model_names,
                      [[layer] + [cells.get((layer, m)) for m in model_names] for layer in layers])
    write_csv(out / "skipped.csv", ("identity", "image", "reason"), skipped)
    run_info(out, "compare", seed, align=bool(args.align), emd_grid=args.emd_grid, sample=args.sample)
    status = finish(out, errors, 1 if errors else 0, len(errors))
    return EXIT_PARTIAL if status == EXIT_OK and skipped else status


# -- occlude -----------------------------------------------------------------------

ATTRIBUTE_COLUMNS = ("identity", "anchor", "positive", "gender", "ethnicity", "age_anchor", "age_positive")
GROUP_KEYS = ("gender", "ethnicity", "age-difference")


def _outcome_record(o, entries):
    ident, anchor, positive = o.pair_id.split(":", 1)[0], *o.pair_id.split(":", 1)[1].split(">", 1)
    attrs_a = entries[anchor].attributes if anchor in entries else {}
    attrs_p = entries[positive].attributes if positive in entries else {}
    extra = (ident, anchor, positive, attrs_a.get("gender"), attrs_a.get("ethnicity"), attrs_a.get("age"),
             attrs_p.get("age"))
    return [getattr(o, c) for c in OUTCOME_COLUMNS] + list(extra)


def cmd_occlude(args):
    manifest = load_manifest(args.manifest)
    seed = resolve_seed(args.seed, manifest)
    models = _select_models(manifest, args.models)
    listed = set(models)
    source = args.transfer_from
    if source and source not in models:
        if source not in manifest.models:
            raise LeamError(f"unknown transfer model {source!r}")
        models[source] = load_model(manifest.models[source], source, manifest.root)
    percents = parse_floats(args.percents)
    modes = parse_list(args.modes)
    seeds = parse_seeds(args.seeds) if args.seeds else [seed]
    layer = args.layer or manifest.layers[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    errors = []
    images = {}
    for entry in manifest.entries():
        try:
            images[entry.name] = _load_image(entry.image)
        except (OSError, LeamError, ValueError) as exc:
            errors.append(f"image {entry.name}: unreadable {entry.image}: {exc}")
    pairs = [Pair(pair_id(a.identity, a.name, p.name), a.identity, images[a.name], images[p.name])
             for a, p in manifest.ordered_pairs() if a.name in images and p.name in images]
    if not pairs:
        errors.append("no usable image pairs")
        return finish(out, errors, 1, 1)
    outcomes = occlusion_sweep(models, pairs, percents, modes, seeds, layer=layer,
                               transfer_from=args.transfer_from, jobs=args.jobs)
    # a transfer source outside --models only provides masks
    outcomes = [o for o in outcomes if o.model in listed]
    entries = manifest.by_name()
    records = [_outcome_record(o, entries) for o in outcomes]
    header = list(OUTCOME_COLUMNS) + list(ATTRIBUTE_COLUMNS)
    write_csv(out / "outcomes.csv", header, records)
    failed = 0
    for o in outcomes:
        if o.status.startswith("error"):
            failed += 1
            errors.append(f"cell {o.model}/{o.pair_id}/{o.mode}/{o.percent:g}/{o.seed}: {o.status}")

    def mean_rows(keyfunc):
        acc = defaultdict(list)
        for o in outcomes:
            if math.isfinite(o.drop):
                acc[keyfunc(o)].append(o.drop)
        return acc

    by_cell = mean_rows(lambda o: (o.percent, modes.index(o.mode)))
    write_csv(out / "summary.csv", ("percent", "mode", "mean_drop", "count"),
              [(p, modes[m], float(np.mean(v)), len(v)) for (p, m), v in sorted(by_cell.items())])
    by_model = mean_rows(lambda o: (o.model, o.percent, modes.index(o.mode)))
    write_csv(out / "summary_by_model.csv", ("model", "percent", "mode", "mean_drop", "count"),
              [(mo, p, modes[m], float(np.mean(v)), len(v)) for (mo, p, m), v in sorted(by_model.items())])
    dicts = [dict(zip(header, r)) for r in records]
    group_rows = []
    for key in GROUP_KEYS:
        grouped = group_by(dicts, key, "drop", within=("mode", "percent"))
        for g in sorted(grouped.groups, key=lambda g: (modes.index(g.stratum[0]), g.stratum[1], g.group)):
            group_rows.append((key, g.stratum[0], g.stratum[1], g.group, g.count, g.mean))
    write_csv(out / "groups.csv", ("key", "mode", "percent", "group", "count", "mean_drop"), group_rows)
    run_info(out, "occlude", seed, models=sorted(listed), percents=percents, modes=modes, seeds=seeds,
             layer=layer, transfer_from=args.transfer_from)
    return finish(out, errors, len(outcomes), failed)


# -- stats -------------------------------------------------------------------------

def _read_rows(paths):
    rows = []
    columns = []
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for name in reader.fieldnames or ():
                if name not in columns:
                    columns.append(name)
            rows.extend(reader)
    return rows, columns


def _column(columns, name):
    for c in columns:
        if c.strip().lower() == name:
            return c
    return None


def _cv_table(rows, columns):
    label = columns[0]
    std_c, mean_c = _column(columns, "std"), _column(columns, "mean")
    min_c, max_c = _column(columns, "min"), _column(columns, "max")
    out, skipped = [], 0
    for row in rows:
        try:
            std, mean = float(row[std_c]), float(row[mean_c])
        except (TypeError, ValueError):
            skipped += 1
            continue
        lo = row.get(min_c) if min_c else None
        hi = row.get(max_c) if max_c else None
        out.append((row[label], std, mean, float(lo) if lo not in (None, "") else None,
                    float(hi) if hi not in (None, "") else None, coefficient_of_variation(std, mean)))
    return (label, "Std", "Mean", "Min", "Max", "CV"), out, skipped


def _join_attributes(rows, manifest_path):
    entries = load_manifest(manifest_path).by_name()
    for row in rows:
        pid = row.get("pair_id") or ""
        if ":" not in pid or ">" not in pid:
            continue
        anchor, positive = pid.split(":", 1)[1].split(">", 1)
        a = entries[anchor].attributes if anchor in entries else {}
        p = entries[positive].attributes if positive in entries else {}
        row.setdefault("identity", pid.split(":", 1)[0])
        for key in ("gender", "ethnicity"):
            if not row.get(key) and key in a:
                row[key] = a[key]
        if not row.get("age_anchor") and "age" in a:
            row["age_anchor"] = a["age"]
        if not row.get("age_positive") and "age" in p:
            row["age_positive"] = p["age"]


def _parse_value(row, column):
    """(value, malformed) with non-finite values returned as nan."""
    raw = row.get(column)
    if raw is None or raw == "":
        return float("nan"), raw is None
    try:
        return float(raw), False
    except ValueError:
        return float("nan"), True


def cmd_stats(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = resolve_seed(args.seed)
    errors = []
    try:
        rows, columns = _read_rows(args.inputs)
    except (OSError, csv.Error, UnicodeDecodeError) as exc:
        errors.append(f"input: {exc}")
        return finish(out, errors, 1, 1)
    if not columns:
        errors.append("inputs have no header row")
        return finish(out, errors, 1, 1)
    outputs = []
    if _column(columns, "std") and _column(columns, "mean"):
        header, table, skipped = _cv_table(rows, columns)
        write_csv(out / "cv_table.csv", header, table)
        outputs.append("cv_table.csv")
        if skipped:
            errors.append(f"table: {skipped} malformed row(s) skipped")
        run_info(out, "stats", seed, outputs=outputs)
        return finish(out, errors, len(rows), len(rows) - len(table))
    if args.manifest:
        _join_attributes(rows, args.manifest)
    value = args.value or ("drop" if "drop" in columns else "relative_percent")
    if "scope" in columns:
        rows = [r for r in rows if r.get("scope") == "map"]
    malformed = 0
    clean = []
    for row in rows:
        v, bad = _parse_value(row, value)
        malformed += bad
        if not bad:
            clean.append(dict(row, **{value: v}))
    if malformed:
        errors.append(f"{malformed} malformed row(s) skipped (column {value!r})")
    within = tuple(parse_list(args.within)) if args.within else ()
    if args.group_by:
        group_rows, test_rows = [], []
        for key in parse_list(args.group_by):
            grouped = group_by(clean, key, value, within)
            for g in grouped.groups:
                group_rows.append((key, *g.stratum, g.group, g.count, g.mean))
            if args.test == "mann-whitney":
                test_rows.extend(_mw_tests(clean, key, value, within, grouped, args.alternative))
        write_csv(out / "groups.csv", ("key",) + within + ("group", "count", f"mean_{value}"), group_rows)
        outputs.append("groups.csv")
        if args.test == "mann-whitney":
            write_csv(out / "tests.csv", ("key",) + within + ("group_x", "group_y", "n_x", "n_y", "u", "p",
                                                              "method", "alternative"), test_rows)
            outputs.append("tests.csv")
    else:
        if args.by:
            by = tuple(parse_list(args.by))
        elif "class" in columns:
            by = ("model", "layer", "identity", "class")
        else:
            by = tuple(c for c in ("model", "mode", "percent") if c in columns)
        series = defaultdict(list)
        for row in clean:
            if math.isfinite(row[value]):
                series[tuple(row.get(b, "") for b in by)].append(row[value])
        summary = []
        for key in sorted(series, key=_sort_key):
            s = summarize(series[key])
            summary.append((*key, s.n, s.std, s.mean, s.min, s.max, s.cv))
        write_csv(out / "summary.csv", by + ("n", "std", "mean", "min", "max", "cv"), summary)
        outputs.append("summary.csv")
    run_info(out, "stats", seed, value=value, group_by=args.group_by, within=list(within), test=args.test,
             outputs=outputs)
    return finish(out, errors, len(rows), malformed if rows else 0)


def _sort_key(key):
    out = []
    for part in key:
        try:
            out.append((0, float(part), ""))
        except (TypeError, ValueError):
            out.append((1, 0.0, str(part)))
    return tuple(out)


def _mw_tests(records, key, value, within, grouped, alternative):
    values = defaultdict(list)
    for rec in records:
        g = group_value(rec, key)
        v = rec[value]
        if g is None or not math.isfinite(v):
            continue
        values[(tuple(rec.get(w) for w in within), g)].append(v)
    strata = sorted({s for s, _ in values}, key=lambda s: tuple(str(x) for x in s))
    rows = []
    for stratum in strata:
        names = sorted(g for s, g in values if s == stratum)
        for gx, gy in combinations(names, 2):
            x, y = values[(stratum, gx)], values[(stratum, gy)]
            res = mann_whitney_u(x, y, alternative=alternative)
            rows.append((key, *stratum, gx, gy, len(x), len(y), res.u, f"{res.p:.6e}", res.method, alternative))
    return rows


# -- synth -------------------------------------------------------------------------

def cmd_synth(args):
    from .synth import write_dataset

    seed = resolve_seed(args.seed)
    path = write_dataset(args.out, identities=args.identities, images_per_identity=args.images,
                         size=args.size, seed=seed, model_seeds=tuple(int(s) for s in parse_list(args.model_seeds)))
    log.info("wrote %s", path)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="leam", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="defaults to $LEAM_SEED, then the manifest seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("map", help="activation maps for every ordered same-identity pair")
    p.add_argument("manifest")
    p.add_argument("--model", help="comma-separated model names (default: all)")
    p.add_argument("--layers", help="comma-separated tagged layers (default: manifest layers)")
    p.add_argument("--render", action="store_true", help="also write PGM and warm-colour PNG heatmaps")
    common(p)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("correlate", help="per-class pixel reports of selected map pixels")
    p.add_argument("archive")
    sel = p.add_mutually_exclusive_group(required=True)
    sel.add_argument("--threshold", type=float)
    sel.add_argument("--top-percent", type=float)
    p.add_argument("--manifest", help="mask locations (default: the archive's sources.json)")
    p.add_argument("--masks", help="directory of <image>.pgm/.png masks")
    common(p)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("compare", help="BC/EMD tables for same and different identities")
    p.add_argument("archive")
    p.add_argument("--align", action="store_true")
    p.add_argument("--emd-grid", type=int, default=DEFAULT_EMD_GRID, help="EMD grid side; 0 disables EMD")
    p.add_argument("--sample", type=int, default=10, help="counterpart identities per identity")
    p.add_argument("--manifest")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("occlude", help="similarity drop under guided and random black-pixel occlusion")
    p.add_argument("manifest")
    p.add_argument("--models", help="comma-separated model names (default: all)")
    p.add_argument("--percents", default=",".join(f"{p:g}" for p in DEFAULT_PERCENTS))
    p.add_argument("--modes", default="leam,random", help=f"comma-separated subset of {','.join(MODES)}")
    p.add_argument("--seeds", help="e.g. 0-99 or 1,2,3 (default: the run seed)")
    p.add_argument("--transfer-from", help="take guided masks from this model for all models")
    p.add_argument("--layer", help="layer whose maps guide the masks (default: first manifest layer)")
    common(p)
    p.set_defaults(func=cmd_occlude)

    p = sub.add_parser("stats", help="summaries, grouped means and Mann-Whitney tests over CSV outputs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--group-by", help="comma-separated keys, e.g. gender,ethnicity,age-difference")
    p.add_argument("--within", help="comma-separated stratification columns, e.g. mode,percent")
    p.add_argument("--by", help="summary key columns when not grouping")
    p.add_argument("--value", help="value column (default: drop or relative_percent)")
    p.add_argument("--test", choices=("mann-whitney",))
    p.add_argument("--alternative", default="two-sided", choices=("two-sided", "greater", "less"))
    p.add_argument("--manifest", help="join demographic attributes by pair_id")
    common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="write a small procedural dataset with manifest")
    p.add_argument("--identities", type=int, default=15)
    p.add_argument("--images", type=int, default=2)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--model-seeds", default="7")
    common(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        log.error("--jobs must be at least 1")
        return EXIT_FAILURE
    try:
        return args.func(args)
    except (OSError, LeamError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
