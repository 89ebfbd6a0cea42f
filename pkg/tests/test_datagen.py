import json

import numpy as np
import pytest

from polysnake import datagen, geometry
from polysnake.annotations import AnnotationParseError, PolygonRecord, load_annotations, write_records


@pytest.mark.parametrize("seed", [0, 7, 123])
def test_generation_is_deterministic(seed):
    a = datagen.generate_shape(seed, "blob")
    b = datagen.generate_shape(seed, "blob")
    assert np.array_equal(a.image, b.image)
    assert all(np.array_equal(x.polygon, y.polygon) for x, y in zip(a.instances, b.instances))


def test_star_vertex_count():
    for seed in range(30):
        s = datagen.generate_shape(seed, "star")
        for inst, spikes in zip(s.instances, s.spikes):
            assert len(inst.polygon) == 2 * spikes
        if 5 in s.spikes:
            return
    pytest.fail("no 5-spike star in 30 seeds")


def test_scene_contract():
    for seed in range(40):
        kind = datagen.kind_for_seed(seed, datagen.KINDS)
        s = datagen.generate_shape(seed, kind)
        assert 1 <= len(s.instances) <= 4
        assert s.image.shape == (96, 96, 3) and s.image.dtype == np.float32
        np.testing.assert_array_equal(np.round(s.image * 255) / 255, s.image)
        for inst in s.instances:
            assert inst.class_id == datagen.KINDS.index(kind)
            area = geometry.signed_area(inst.polygon)
            assert area > 0
            assert abs(inst.mask.sum() - area) <= 0.02 * area
            assert 0 <= inst.center[0] < 96 and 0 <= inst.center[1] < 96
        for i, a in enumerate(s.instances):
            for b in s.instances[i + 1:]:
                assert geometry.mask_iou(a.mask, b.mask) <= 0.3


def test_small_canvas_rejected():
    with pytest.raises(ValueError):
        datagen.generate_shape(0, "ellipse", 32, 32)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        datagen.generate_shape(0, "hexagon")


def disk_sample(cx=40.0, cy=40.0, r=14.0):
    t = np.linspace(0, 2 * np.pi, 96, endpoint=False)
    poly = np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=1)
    inst = datagen.Instance(0, poly, geometry.centroid(poly), geometry.rasterize(poly, 96, 96))
    return datagen.InstanceSample(np.zeros((96, 96, 3), np.float32), [inst], 0, "ellipse")


def test_gt_disk_peak_at_center_cell():
    pk = datagen.build_ground_truth(disk_sample(), 32, 4, 4)
    h = pk.heatmap[:, :, 0]
    assert np.unravel_index(h.argmax(), h.shape) == (10, 10)
    assert h.max() == 1.0
    assert pk.contours.shape == (1, 32, 2)
    assert set(np.unique(pk.boundary)) <= {0.0, 1.0} and pk.boundary.sum() > 0


def test_gt_peak_is_one_at_every_center():
    for seed in range(12):
        s = datagen.generate_shape(seed, datagen.kind_for_seed(seed, datagen.KINDS))
        pk = datagen.build_ground_truth(s, 64, 4, 4)
        for (cx, cy), c in zip(pk.centers, pk.classes):
            assert pk.heatmap[cy, cx, c] == 1.0
        assert pk.heatmap.max() <= 1.0
        for c in pk.contours:
            np.testing.assert_array_equal(geometry.canonicalize(c)[0], c[0])


def test_gt_skips_degenerate(caplog):
    s = disk_sample()
    flat = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    s.instances.append(datagen.Instance(1, flat, flat.mean(0), np.zeros((96, 96), bool)))
    pk = datagen.build_ground_truth(s, 16, 4, 4)
    assert len(pk.classes) == 1
    assert "skipped" in caplog.text


def test_parse_range_and_disjoint():
    assert datagen.parse_range("3..7") == range(3, 7)
    with pytest.raises(ValueError):
        datagen.parse_range("7..3")
    with pytest.raises(ValueError):
        datagen.parse_range("abc")
    with pytest.raises(ValueError, match="overlap"):
        datagen.check_disjoint({"train": range(0, 10), "val": range(5, 12)})
    datagen.check_disjoint({"train": range(0, 10), "val": range(10, 12)})


def test_dataset_roundtrip_and_bytes(tmp_path):
    splits = {"train": range(0, 6), "val": range(50, 53)}
    datagen.write_dataset(tmp_path / "a", splits)
    datagen.write_dataset(tmp_path / "b", splits)
    for rel in ["manifest.json", "annotations.jsonl", "images/000002.png"]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(m["samples"]) == 9
    val = datagen.load_dataset(tmp_path / "a", "val")
    ref = [datagen.generate_shape(s, datagen.kind_for_seed(s, datagen.KINDS)) for s in range(50, 53)]
    for got, want in zip(val, ref):
        np.testing.assert_array_equal(got.image, want.image)
        for gi, wi in zip(got.instances, want.instances):
            np.testing.assert_array_equal(gi.polygon, wi.polygon)
            np.testing.assert_array_equal(gi.mask, wi.mask)


def test_annotation_roundtrip(tmp_path, rng):
    recs = [PolygonRecord("000001", 2, rng.normal(size=(7, 2)) * 30, 0.25),
            PolygonRecord("000002", 0, rng.normal(size=(3, 2)))]
    write_records(tmp_path / "a.jsonl", recs)
    back = load_annotations(tmp_path / "a.jsonl")
    for r, b in zip(recs, back):
        assert (r.image, r.class_id, r.score) == (b.image, b.class_id, b.score)
        np.testing.assert_array_equal(r.polygon, b.polygon)


def test_annotation_empty_file(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert load_annotations(tmp_path / "e.jsonl") == []


def test_annotation_odd_count_names_line(tmp_path):
    good = json.dumps({"image": "a", "class": 0, "polygon": [0, 0, 1, 0, 1, 1]})
    bad = json.dumps({"image": "a", "class": 0, "polygon": [0, 0, 1, 0, 1]})
    (tmp_path / "b.jsonl").write_text(good + "\n\n" + bad + "\n")
    with pytest.raises(AnnotationParseError, match="line 3"):
        load_annotations(tmp_path / "b.jsonl")


def test_annotation_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_annotations(tmp_path / "nope.jsonl")
