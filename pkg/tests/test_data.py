import json
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_force_mask
from semgrasp.data import (
    CROPS,
    ROTATIONS,
    CornellParseError,
    CornellReport,
    DatasetManifest,
    ObjectAnnotation,
    SceneSample,
    SchemaError,
    augment,
    augmentation_grid,
    build_rgd,
    load_scene_json,
    parse_cornell,
    rasterize_mask,
    read_positive_rects,
    save_scene_json,
    synth_scene,
)
from semgrasp.geometry import GraspRect, angle_distance, is_match, jaccard

FIXTURE = Path(__file__).parent / "fixtures" / "cornell"
# hand count of the fixture's cpos files: 12, 8, 16, 4 and 20 vertex lines
FIXTURE_RECTS = {"pcd0100": 3, "pcd0101": 2, "pcd0102": 4, "pcd0103": 1, "pcd0104": 5}


def _lines(path):
    return [ln for ln in path.read_text().splitlines() if ln.strip()]


# -- Cornell ----------------------------------------------------------------


def test_parse_cornell_fixture():
    report = CornellReport()
    samples = parse_cornell(FIXTURE, report)
    assert [s.source_id for s in samples] == sorted(FIXTURE_RECTS)
    for s in samples:
        assert len(s.objects) == 1
        assert len(s.objects[0].grasps) == FIXTURE_RECTS[s.source_id]
    n_lines = sum(len(_lines(p)) for p in FIXTURE.glob("*cpos.txt"))
    assert report.n_grasps == n_lines // 4 == sum(FIXTURE_RECTS.values())
    assert report.nan_lines_skipped == 0
    assert report.approximate_masks == ["pcd0103"]


def test_fixture_grasp_centers_inside_contours():
    for s in parse_cornell(FIXTURE):
        obj = s.objects[0]
        for g in obj.grasps:
            assert obj.contains(g.x, g.y)


def test_eight_line_file_gives_two_rects(tmp_path):
    p = tmp_path / "pcd0001cpos.txt"
    p.write_text("0 0\n4 0\n4 2\n0 2\n10 10\n14 10\n14 12\n10 12\n")
    rects = read_positive_rects(p)
    assert len(rects) == 2
    assert rects[0].as_dict() == pytest.approx({"x": 2, "y": 1, "theta": 0, "w": 4, "h": 2})


def test_nan_groups_skipped_and_counted(tmp_path):
    p = tmp_path / "pcd0001cpos.txt"
    p.write_text("0 0\n4 0\n4 2\n0 2\nNaN NaN\n14 10\nNaN NaN\n10 12\n")
    report = CornellReport()
    rects = read_positive_rects(p, report)
    assert len(rects) == 1
    assert report.nan_lines_skipped == 2


@pytest.mark.parametrize("content, where", [("0 0\n4 0\n4 x\n0 2\n", ":3"), ("0 0\n4 0 1\n4 2\n0 2\n", ":2")])
def test_malformed_line_names_file_and_line(tmp_path, content, where):
    p = tmp_path / "pcd0001cpos.txt"
    p.write_text(content)
    with pytest.raises(CornellParseError, match=f"pcd0001cpos.txt{where}"):
        read_positive_rects(p)


def test_missing_annotation_is_reported(tmp_path):
    from PIL import Image

    Image.fromarray(np.zeros((480, 640, 3), np.uint8)).save(tmp_path / "pcd0009r.png")
    report = CornellReport()
    assert parse_cornell(tmp_path, report) == []
    assert report.missing_annotations == ["pcd0009"]


# -- scene JSON -------------------------------------------------------------


def _minimal_doc():
    return {
        "image": "img.png",
        "channels": "rgb",
        "objects": [
            {
                "category_id": 0,
                "category_name": "cup",
                "mask": [[10, 10], [40, 10], [40, 40], [10, 40]],
                "grasps": [{"x": 25, "y": 25, "theta": 0, "w": 10, "h": 5}],
            }
        ],
    }


def _write(tmp_path, doc):
    from PIL import Image

    Image.fromarray(np.zeros((64, 64, 3), np.uint8)).save(tmp_path / "img.png")
    p = tmp_path / "scene.json"
    p.write_text(json.dumps(doc))
    return p


def test_load_minimal_scene(tmp_path):
    s = load_scene_json(_write(tmp_path, _minimal_doc()))
    assert len(s.objects) == 1
    assert s.objects[0].grasps[0] == GraspRect(25, 25, 0, 10, 5)
    assert s.image.shape == (64, 64, 3)


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda d: d.pop("channels"), "channels"),
        (lambda d: d.update(channels="bgr"), "channels"),
        (lambda d: d["objects"][0]["grasps"][0].pop("w"), "grasps[0].w"),
        (lambda d: d["objects"][0]["grasps"][0].update(h=-1), "grasps[0].h"),
        (lambda d: d["objects"][0]["grasps"][0].update(theta=90), "grasps[0].theta"),
        (lambda d: d["objects"][0].update(category_id="a"), "category_id"),
        (lambda d: d["objects"][0].update(grasps=[]), "grasps"),
        (lambda d: d["objects"][0].update(mask=[[0, 0], [10, 10], [10, 0], [0, 10]]), "mask"),
        (lambda d: d["objects"][0]["grasps"][0].update(x=100), "grasps[0]"),
    ],
)
def test_schema_errors_name_the_field(tmp_path, mutate, field):
    doc = _minimal_doc()
    mutate(doc)
    with pytest.raises(SchemaError, match=field.replace("[", r"\[").replace("]", r"\]")):
        load_scene_json(_write(tmp_path, doc))


def test_synth_scene_json_round_trip(tmp_path):
    s = synth_scene(5, 3)
    path = save_scene_json(s, tmp_path / "s5.json")
    back = load_scene_json(path)
    np.testing.assert_array_equal(back.image, s.image)
    np.testing.assert_array_equal(back.depth, s.depth)
    assert back.source_id == s.source_id
    for a, b in zip(s.objects, back.objects):
        assert (a.category_id, a.category_name) == (b.category_id, b.category_name)
        np.testing.assert_allclose(a.mask, b.mask, atol=1e-9)
        for ga, gb in zip(a.grasps, b.grasps):
            np.testing.assert_allclose(ga.as_array(), gb.as_array(), atol=1e-9)
    # saving the loaded sample again produces identical JSON
    path2 = save_scene_json(back, tmp_path / "again" / "s5.json")
    assert json.loads(path.read_text()) == json.loads(path2.read_text())


def test_manifest_rejects_overlapping_splits(tmp_path):
    with pytest.raises(SchemaError):
        DatasetManifest(tmp_path, {0: "a"}, {"train": ["x.json"], "test": ["x.json"]})
    with pytest.raises(SchemaError):
        DatasetManifest(tmp_path, {0: "a", 2: "b"}, {})


# -- rasterization -----------------------------------------------------------


def test_rasterize_square():
    m = rasterize_mask([(10, 10), (20, 10), (20, 20), (10, 20)], 32, 32)
    oracle = brute_force_mask([(10, 10), (20, 10), (20, 20), (10, 20)], 32, 32)
    assert m.sum() == 100
    # the two only disagree on boundary pixels
    assert abs(int(m.sum()) - int(oracle.sum())) <= 4 * 11


def test_rasterize_empty_and_full():
    assert rasterize_mask([], 8, 8).sum() == 0
    assert rasterize_mask([(0, 0), (8, 0), (8, 8), (0, 8)], 8, 8).all()
    assert rasterize_mask([(-0.5, -0.5), (7.5, -0.5), (7.5, 7.5), (-0.5, 7.5)], 8, 8).all()


def test_rasterize_agrees_with_point_in_polygon_off_boundary():
    rng = np.random.default_rng(1)
    s = synth_scene(11, 3)
    for obj in s.objects:
        m = rasterize_mask(obj.mask, 480, 480).astype(bool)
        oracle = brute_force_mask(obj.mask, 480, 480)
        diff = m != oracle
        assert diff.sum() <= 0.01 * oracle.sum()


# -- RGD ---------------------------------------------------------------------


def test_build_rgd():
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, size=(4, 256, 3), dtype=np.uint8)
    flat = build_rgd(rgb, np.full((4, 256), 7.0))
    assert (flat[..., 2] == 0).all()
    ramp = build_rgd(rgb, np.tile(np.arange(256.0) * 3 + 10, (4, 1)))
    np.testing.assert_array_equal(ramp[0, :, 2], np.arange(256))
    np.testing.assert_array_equal(ramp[..., :2], rgb[..., :2])


def test_build_rgd_rejects_misaligned():
    with pytest.raises(ValueError):
        build_rgd(np.zeros((4, 4, 3), np.uint8), np.zeros((4, 5)))


# -- augmentation --------------------------------------------------------------


def test_augmentation_grid():
    grid = augmentation_grid()
    assert len(grid) == 54
    assert ROTATIONS == tuple(range(0, 341, 20))
    assert set(c for c, _ in grid) == set(CROPS)


def test_augment_identity():
    s = synth_scene(3, 2)
    out = augment(s, "center", 0)
    np.testing.assert_array_equal(out.image, s.image)
    for a, b in zip(s.objects, out.objects):
        assert a.grasps == b.grasps
        np.testing.assert_array_equal(a.mask, b.mask)


def test_augment_rotation_180():
    s = synth_scene(4, 3)
    out = augment(s, "center", 180)
    np.testing.assert_array_equal(out.image, s.image[::-1, ::-1])
    for a, b in zip(s.objects, out.objects):
        for ga, gb in zip(a.grasps, b.grasps):
            assert gb.x == pytest.approx(479 - ga.x, abs=1e-9)
            assert gb.y == pytest.approx(479 - ga.y, abs=1e-9)
            assert angle_distance(gb.theta, ga.theta) < 1e-9


def test_augment_rejects_small_image():
    s = SceneSample(np.zeros((400, 640, 3), np.uint8), [])
    with pytest.raises(ValueError):
        augment(s, "center", 0)


def test_augment_crops_cornell_fixture():
    s = parse_cornell(FIXTURE)[0]
    for crop, x0 in (("left", 0), ("center", 80), ("right", 160)):
        out = augment(s, crop, 0)
        assert out.image.shape == (480, 480, 3)
        np.testing.assert_array_equal(out.image, s.image[:, x0 : x0 + 480])
        kept = [g for g in s.objects[0].grasps if 0 <= g.x - x0 <= 479]
        assert len(out.objects[0].grasps) == len(kept)


def test_augment_drops_grasps_leaving_frame():
    # corners sit ~326 px from the center; a 40 degree turn pushes them out
    g_in = GraspRect(240, 240, 0, 20, 10)
    g_corner = GraspRect(470, 470, 0, 10, 5)
    obj = ObjectAnnotation(0, "a", [(200, 200), (479, 200), (479, 479), (200, 479)], [g_in, g_corner])
    lonely = ObjectAnnotation(1, "b", [(460, 0), (479, 0), (479, 20), (460, 20)], [GraspRect(470, 10, 0, 5, 5)])
    s = SceneSample(np.zeros((480, 480, 3), np.uint8), [obj, lonely])
    for rot in (40, 320):
        out = augment(s, "center", rot)
        assert len(out.objects) == 1
        assert len(out.objects[0].grasps) == 1


@pytest.mark.parametrize("seed", range(4))
def test_augment_preserves_geometry(seed):
    rng = np.random.default_rng(seed)
    s = synth_scene(100 + seed, 3)
    grasps = [g for o in s.objects for g in o.grasps]
    for crop, rot in [augmentation_grid()[k] for k in rng.choice(54, 6, replace=False)]:
        out = augment(s, crop, rot)
        # grasps keep their order, so compare pairwise when none were dropped
        out_grasps = [g for o in out.objects for g in o.grasps]
        if len(out_grasps) != len(grasps):
            continue
        for i in range(len(grasps)):
            for j in range(len(grasps)):
                assert jaccard(out_grasps[i], out_grasps[j]) == pytest.approx(jaccard(grasps[i], grasps[j]), abs=1e-6)
                assert angle_distance(out_grasps[i].theta, out_grasps[j].theta) == pytest.approx(
                    angle_distance(grasps[i].theta, grasps[j].theta), abs=1e-6
                )
                assert is_match(out_grasps[i], out_grasps[j]) == is_match(grasps[i], grasps[j])


@pytest.mark.parametrize("crop, rot", [(c, r) for c in CROPS for r in ROTATIONS])
def test_augment_keeps_centers_inside_masks(crop, rot):
    s = synth_scene(77, 3)
    out = augment(s, crop, rot)
    for o in out.objects:
        for g in o.grasps:
            assert o.contains(g.x, g.y)


# -- synthetic scenes ----------------------------------------------------------


def test_synth_deterministic():
    a, b = synth_scene(42, 4), synth_scene(42, 4)
    np.testing.assert_array_equal(a.image, b.image)
    assert [o.grasps for o in a.objects] == [o.grasps for o in b.objects]
    assert not np.array_equal(a.image, synth_scene(43, 4).image)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("n", [1, 3, 5])
def test_synth_invariants(seed, n):
    s = synth_scene(seed, n, clutter=seed % 2 == 0)
    assert s.image.shape == (480, 480, 3) and s.image.dtype == np.uint8
    assert len(s.objects) == n
    masks = s.object_masks()
    assert (np.sum(masks, axis=0) <= 1).all()
    for o, m in zip(s.objects, masks):
        assert len(o.grasps) >= 1
        for g in o.grasps:
            assert is_match(g, g)
            assert o.contains(g.x, g.y)
            assert m[int(round(g.y)), int(round(g.x))]


@pytest.mark.parametrize("n", [0, 6])
def test_synth_rejects_object_count(n):
    with pytest.raises(ValueError):
        synth_scene(0, n)
