import re

from icurb.formats import gt_as_graph
from icurb.metrics import evaluate
from icurb.plotting import render_metrics, render_overlay, render_training
from icurb.synth import make_scene


def test_overlay_svg_elements(tmp_path):
    sc = make_scene(2)
    g = gt_as_graph(sc.gt)
    g.candidates = [(10.0, 10.0, 0.9)]
    p = tmp_path / "o.svg"
    render_overlay(p, sc.seg_soft, sc.gt, g, title="scene 2")
    svg = p.read_text()
    for inst in sc.gt.instances:
        assert f'id="gt-curb-{inst.id}"' in svg
    for gid in ("pred-edges", "pred-vertices", "candidates"):
        assert f'id="{gid}"' in svg
    assert "scene 2" in svg


def test_overlay_byte_stable(tmp_path):
    sc = make_scene(4)
    g = gt_as_graph(sc.gt)
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    render_overlay(a, sc.seg_soft, sc.gt, g)
    render_overlay(b, sc.seg_soft, sc.gt, g)
    assert a.read_bytes() == b.read_bytes()
    assert not re.search(rb"<dc:date>", a.read_bytes())


def test_overlay_without_graph_or_background(tmp_path):
    sc = make_scene(1)
    render_overlay(tmp_path / "gt.svg", None, sc.gt)
    svg = (tmp_path / "gt.svg").read_text()
    assert 'id="gt-curb-0"' in svg and "pred-edges" not in svg


def test_metric_and_training_figures(tmp_path):
    sc = make_scene(3)
    rep = evaluate(gt_as_graph(sc.gt), sc.gt)
    render_metrics(tmp_path / "m.svg", rep)
    assert 'id="metric-f1"' in (tmp_path / "m.svg").read_text()
    recs = [
        {"phase": "restricted", "coord_l1": 0.3, "stop_bce": 0.5},
        {"phase": "free1", "coord_l1": 0.2, "stop_bce": 0.4},
        {"phase": "eval", "image": 0, "f1_2": 0.1, "cc": 0.9},
        {"phase": "eval", "image": 50, "f1_2": 0.5, "cc": 0.95},
    ]
    render_training(tmp_path / "t.png", recs)
    assert (tmp_path / "t.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    render_training(tmp_path / "t.svg", recs)
    svg = (tmp_path / "t.svg").read_text()
    assert 'id="eval-f1"' in svg and 'id="loss-coord"' in svg
