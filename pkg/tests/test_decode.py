import numpy as np

from mvfuse.fusion.decode import decode_map, trace_skeleton
from mvfuse.geom import DEFAULT_SPEC, BevRaster, MapElement
from mvfuse.metrics import chamfer_distance
from mvfuse.geom import Pose2, clip_to_range, transform_element
from mvfuse.scene import ScenarioConfig, generate_scene, rasterize_elements


def test_empty_raster():
    assert decode_map(BevRaster(DEFAULT_SPEC, np.zeros(DEFAULT_SPEC.shape + (3,)))) == []


def test_straight_divider_round_trip():
    gt = MapElement("divider", [[1.0, -10.0], [1.0, 10.0]])
    out = decode_map(rasterize_elements([gt]))
    assert len(out) == 1 and out[0].cls == "divider"
    assert chamfer_distance(out[0], gt) <= DEFAULT_SPEC.resolution
    assert out[0].confidence == 1.0


def test_two_parallel_dividers():
    gts = [MapElement("divider", [[0.0, -10.0], [0.0, 10.0]]),
           MapElement("divider", [[3.0, -10.0], [3.0, 10.0]])]
    out = decode_map(rasterize_elements(gts))
    assert [e.cls for e in out] == ["divider", "divider"]


def test_small_components_dropped():
    data = np.zeros(DEFAULT_SPEC.shape + (3,))
    data[10, 10:12, 0] = 1.0
    assert decode_map(BevRaster(DEFAULT_SPEC, data)) == []


def test_scene_round_trip_within_two_cells():
    s = generate_scene(ScenarioConfig(occluders_min=0, occluders_max=0), 3)
    _, pose = s.ego_frame()
    gts = clip_to_range([transform_element(g, Pose2(0, 0, 0), pose) for g in s.gt_elements])
    preds = decode_map(rasterize_elements(gts))
    for g in gts:
        if g.length < 3.0:
            continue
        same = [p for p in preds if p.cls == g.cls]
        assert min(chamfer_distance(p, g) for p in same) <= 2 * DEFAULT_SPEC.resolution


def test_trace_skeleton_line_and_loop():
    line = [(0, i) for i in range(6)]
    assert trace_skeleton(line) in (line, line[::-1])
    loop = [(0, 0), (0, 1), (0, 2), (1, 2), (2, 2), (2, 1), (2, 0), (1, 0)]
    path = trace_skeleton(loop)
    assert path[0] == path[-1] and set(path) == set(loop)


def test_spur_pruned():
    main = [(5, c) for c in range(12)]
    spur = [(4, 6), (3, 6)]
    path = trace_skeleton(main + spur)
    assert path[0] in ((5, 0), (5, 11)) and len(path) == 12
