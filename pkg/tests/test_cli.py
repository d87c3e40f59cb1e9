import csv
import json
import shutil

import numpy as np
import pytest

from leam import cli
from leam.archive import read_index
from leam.cli import main
from leam.imageio import read_gray, read_rgb


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _manifest_copy(small_dataset, tmp_path, edit):
    root = tmp_path / "data"
    shutil.copytree(small_dataset.parent, root)
    doc = json.loads((root / "manifest.json").read_text())
    edit(doc, root)
    (root / "manifest.json").write_text(json.dumps(doc))
    return root / "manifest.json"


def test_map_cardinality(small_archive):
    records = read_index(small_archive)
    assert len(records) == 4 * 2 * 3
    assert {r.layer for r in records} == {"conv1", "conv2", "conv3"}
    assert len({r.pair_id for r in records}) == 8
    assert all((small_archive / r.path).exists() for r in records)
    assert json.loads((small_archive / "run.json").read_text())["command"] == "map"
    assert not (small_archive / "errors.log").exists()


def test_map_layers_and_render(small_dataset, tmp_path):
    out = tmp_path / "out"
    assert main(["map", str(small_dataset), "--out", str(out), "--model", "desknet8", "--layers", "conv2",
                 "--render"]) == 0
    records = read_index(out)
    assert len(records) == 8 and {r.model for r in records} == {"desknet8"}
    stem = out / "heatmaps" / records[0].path.replace(".leam", "")
    assert read_gray(stem.with_suffix(".pgm")).shape == (64, 64)
    assert read_rgb(stem.with_suffix(".png")).shape == (64, 64, 3)


def test_render_all_zero_map_is_cold(small_dataset, tmp_path, monkeypatch):
    from leam.maps import EmbeddingPair, LayerActivationMap

    def zero_maps(net, anchor, positive, target=None, layers=None):
        z = np.zeros((64, 64))
        return EmbeddingPair(np.ones(2), np.ones(2), 1.0, 0.0), [LayerActivationMap("conv1", z, z, z)]

    monkeypatch.setattr(cli, "generate_maps", zero_maps)
    out = tmp_path / "out"
    assert main(["map", str(small_dataset), "--out", str(out), "--layers", "conv1", "--render",
                 "--model", "desknet7"]) == 0
    rec = read_index(out)[0]
    stem = out / "heatmaps" / rec.path.replace(".leam", "")
    assert not read_gray(stem.with_suffix(".pgm")).any()
    assert not read_rgb(stem.with_suffix(".png")).any()


def test_map_partial_and_total_failure(small_dataset, tmp_path):
    def drop_one(doc, root):
        (root / "images" / "id000_00.png").unlink()

    manifest = _manifest_copy(small_dataset, tmp_path, drop_one)
    out = tmp_path / "partial"
    assert main(["map", str(manifest), "--out", str(out), "--model", "desknet7", "--layers", "conv1"]) == 2
    assert "id000_00" in (out / "errors.log").read_text()
    assert len(read_index(out)) == 6
    assert main(["map", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")]) == 1
    assert main(["map", str(manifest), "--out", str(tmp_path / "y"), "--model", "missing"]) == 1
    assert main(["map", str(manifest), "--out", str(tmp_path / "z"), "--layers", "dense"]) == 1


def test_correlate(small_archive, tmp_path):
    out = tmp_path / "c"
    assert main(["correlate", str(small_archive), "--out", str(out), "--threshold", "0.01"]) == 0
    rows = _rows(out / "correlation.csv")
    maps = [r for r in rows if r["scope"] == "map"]
    assert len(maps) == 24 * 19
    assert {r["scope"] for r in rows} == {"map", "model-layer", "identity"}
    for pid in {r["pair_id"] for r in maps}:
        sub = [r for r in maps if r["pair_id"] == pid and r["layer"] == "conv1"]
        assert abs(sum(float(r["relative_percent"]) for r in sub) - 100) <= 0.01 or sub[0]["status"] == "empty"
    table = _rows(out / "identity_table.csv")
    assert len(table) == 3 * 19 and list(table[0])[3:] == ["id000", "id001", "id002", "id003"]


def test_top_percent_100_equals_threshold_0(small_archive, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["correlate", str(small_archive), "--out", str(a), "--top-percent", "100"]) == 0
    assert main(["correlate", str(small_archive), "--out", str(b), "--threshold", "0"]) == 0
    strip = lambda rows: [{k: v for k, v in r.items() if k not in ("selection", "parameter", "status")} for r in rows]
    assert strip(_rows(a / "correlation.csv")) == strip(_rows(b / "correlation.csv"))


def test_correlate_empty_archive(tmp_path):
    (tmp_path / "empty").mkdir()
    out = tmp_path / "c"
    assert main(["correlate", str(tmp_path / "empty"), "--out", str(out), "--threshold", "0.5"]) == 0
    lines = (out / "correlation.csv").read_text().splitlines()
    assert lines == [",".join(cli.CORRELATION_COLUMNS)]


def test_correlate_missing_masks(small_archive, tmp_path):
    (tmp_path / "masks").mkdir()
    out = tmp_path / "c"
    assert main(["correlate", str(small_archive), "--out", str(out), "--threshold", "0.5",
                 "--masks", str(tmp_path / "masks")]) == 1
    assert all(r["status"].startswith("error") for r in _rows(out / "correlation.csv"))


def test_compare(small_archive, tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", str(small_archive), "--out", str(out), "--emd-grid", "8", "--sample", "2"]) == 0
    rows = _rows(out / "compare.csv")
    assert [(r["kind"], r["layer"]) for r in rows] == [(k, l) for k in ("same-identity", "different-identity")
                                                       for l in ("conv1", "conv2", "conv3")]
    for r in rows:
        assert 0 < float(r["mean_bc"]) <= 1 and float(r["mean_emd"]) >= 0
    assert rows[0]["pairs"] == "4" and rows[3]["sample_size"] == "2"
    wide = _rows(out / "bc_same-identity.csv")
    assert [r["layer"] for r in wide] == ["conv1", "conv2", "conv3"] and list(wide[0]) == ["layer", "desknet7"]
    assert main(["compare", str(small_archive), "--out", str(tmp_path / "noemd"), "--emd-grid", "0"]) == 0
    assert not (tmp_path / "noemd" / "emd_same-identity.csv").exists()


def test_compare_identical_duplicates(small_dataset, tmp_path):
    def duplicate(doc, root):
        first = doc["identities"]["id000"][0]
        doc["identities"] = {"id000": [first, dict(first, name="copy", reference=False)]}

    manifest = _manifest_copy(small_dataset, tmp_path, duplicate)
    archive = tmp_path / "arch"
    assert main(["map", str(manifest), "--out", str(archive), "--model", "desknet7"]) == 0
    out = tmp_path / "cmp"
    assert main(["compare", str(archive), "--out", str(out), "--emd-grid", "8"]) == 0
    same = [r for r in _rows(out / "compare.csv") if r["kind"] == "same-identity"]
    assert len(same) == 3
    assert all(float(r["mean_bc"]) == 1.0 and float(r["mean_emd"]) == 0.0 for r in same)


def test_compare_align_with_identity_transforms(small_dataset, tmp_path):
    marks = {"left-eye-outer": [16, 24], "left-eye-inner": [26, 24], "right-eye-inner": [38, 24],
             "right-eye-outer": [48, 24], "nose-tip": [32, 36], "mouth-left": [24, 46], "mouth-right": [40, 46],
             "width": 64, "height": 64}

    def flatten(doc, root):
        for path in (root / "landmarks").glob("*.json"):
            path.write_text(json.dumps(marks))

    manifest = _manifest_copy(small_dataset, tmp_path, flatten)
    archive = tmp_path / "arch"
    assert main(["map", str(manifest), "--out", str(archive), "--model", "desknet7", "--layers", "conv1"]) == 0
    plain, aligned = tmp_path / "plain", tmp_path / "aligned"
    assert main(["compare", str(archive), "--out", str(plain), "--emd-grid", "8", "--sample", "2"]) == 0
    assert main(["compare", str(archive), "--out", str(aligned), "--emd-grid", "8", "--sample", "2",
                 "--align"]) == 0
    for p, a in zip(_rows(plain / "compare.csv"), _rows(aligned / "compare.csv")):
        assert a["aligned"] == "true" and p["aligned"] == "false"
        assert float(a["mean_bc"]) == pytest.approx(float(p["mean_bc"]), abs=1e-5)
        assert float(a["mean_emd"]) == pytest.approx(float(p["mean_emd"]), rel=1e-5)


def test_compare_align_missing_landmarks(small_dataset, tmp_path):
    def drop(doc, root):
        (root / "landmarks" / "id001_01.json").unlink()

    manifest = _manifest_copy(small_dataset, tmp_path, drop)
    archive = tmp_path / "arch"
    assert main(["map", str(manifest), "--out", str(archive), "--model", "desknet7", "--layers", "conv1"]) == 0
    out = tmp_path / "cmp"
    assert main(["compare", str(archive), "--out", str(out), "--emd-grid", "4", "--align"]) == 2
    skipped = _rows(out / "skipped.csv")
    assert [(r["identity"], r["image"]) for r in skipped] == [("id001", "id001_01")]


def test_occlude(small_dataset, tmp_path):
    out = tmp_path / "occ"
    assert main(["occlude", str(small_dataset), "--out", str(out), "--models", "desknet7", "--percents", "1",
                 "--modes", "leam,random", "--seeds", "0-2"]) == 0
    summary = _rows(out / "summary.csv")
    assert [(r["percent"], r["mode"]) for r in summary] == [("1", "leam"), ("1", "random")]
    assert all(r["count"] == "24" for r in summary)
    outcomes = _rows(out / "outcomes.csv")
    assert len(outcomes) == 8 * 2 * 3 and all(r["gender"] for r in outcomes)
    assert {r["key"] for r in _rows(out / "groups.csv")} == {"gender", "ethnicity", "age-difference"}


def test_occlude_transfer(small_dataset, tmp_path):
    out = tmp_path / "occ"
    assert main(["occlude", str(small_dataset), "--out", str(out), "--models", "desknet8", "--percents", "5",
                 "--modes", "leam", "--transfer-from", "desknet7"]) == 0
    outcomes = _rows(out / "outcomes.csv")
    assert {r["model"] for r in outcomes} == {"desknet8"} and {r["source_model"] for r in outcomes} == {"desknet7"}
    assert main(["occlude", str(small_dataset), "--out", str(out), "--transfer-from", "nobody"]) == 1


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def test_stats_cv_table(tmp_path):
    src = _write_csv(tmp_path / "t.csv", ["Class", "Std", "Mean", "Min", "Max"],
                     [["face", "5.75", "56.70", "45.1", "70.2"], ["nose", "2.0", "10.0", "", ""]])
    out = tmp_path / "s"
    assert main(["stats", str(src), "--out", str(out)]) == 0
    rows = _rows(out / "cv_table.csv")
    assert rows[0]["CV"] == "10.1411" and round(float(rows[0]["CV"]), 2) == 10.14 and rows[1]["CV"] == "20"
    bad = _write_csv(tmp_path / "b.csv", ["Class", "Std", "Mean"], [["face", "x", "1"], ["nose", "1", "2"]])
    assert main(["stats", str(bad), "--out", str(tmp_path / "b")]) == 2


def test_stats_groups_and_tests(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.normal(size=50)
    rows = [["p", "leam", "1", "M", f"{v:.6g}"] for v in values] + \
           [["p", "leam", "1", "F", f"{v:.6g}"] for v in values]
    src = _write_csv(tmp_path / "o.csv", ["pair_id", "mode", "percent", "gender", "drop"], rows)
    out = tmp_path / "s"
    assert main(["stats", str(src), "--out", str(out), "--group-by", "gender", "--test", "mann-whitney"]) == 0
    assert [r["group"] for r in _rows(out / "groups.csv")] == ["F", "M"]
    test = _rows(out / "tests.csv")
    assert len(test) == 1 and float(test[0]["p"]) >= 0.99 and "e" in test[0]["p"]
    one = _write_csv(tmp_path / "one.csv", ["gender", "drop"], [["F", "0.1"], ["F", "0.3"]])
    assert main(["stats", str(one), "--out", str(tmp_path / "one"), "--group-by", "gender"]) == 0
    groups = _rows(tmp_path / "one" / "groups.csv")
    assert len(groups) == 1 and float(groups[0]["mean_drop"]) == pytest.approx(0.2)


def test_stats_summary_of_outcomes(small_dataset, tmp_path):
    occ = tmp_path / "occ"
    assert main(["occlude", str(small_dataset), "--out", str(occ), "--models", "desknet7", "--percents", "1,5",
                 "--modes", "random", "--seeds", "0,1"]) == 0
    out = tmp_path / "s"
    assert main(["stats", str(occ / "outcomes.csv"), "--out", str(out)]) == 0
    rows = _rows(out / "summary.csv")
    assert [(r["model"], r["mode"], r["percent"], r["n"]) for r in rows] == [
        ("desknet7", "random", "1", "16"), ("desknet7", "random", "5", "16")]
    assert main(["stats", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "m")]) == 1


def test_synth_and_bad_jobs(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "d"), "--identities", "2", "--seed", "1"]) == 0
    doc = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert sorted(doc["identities"]) == ["id000", "id001"]
    assert main(["map", str(tmp_path / "d" / "manifest.json"), "--out", str(tmp_path / "o"), "--jobs", "0"]) == 1
