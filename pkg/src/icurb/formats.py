"""On-disk formats: ICRB1 rasters, PGM previews, graph documents and scene manifests."""

from __future__ import annotations

import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from .env import CurbGraph
from .synth import GroundTruth, SceneBundle

MAGIC = b"ICRB1"
_HEADER = struct.Struct("<III")


class FormatError(ValueError):
    """Malformed file content. ``offset`` is the byte offset of the problem, if known."""

    def __init__(self, msg: str, offset=None):
        super().__init__(msg if offset is None else f"{msg} (at byte offset {offset})")
        self.offset = offset


# -- rasters ---------------------------------------------------------------


def raster_bytes(r: np.ndarray) -> bytes:
    r = np.asarray(r)
    if r.ndim == 2:
        r = r[None]
    if r.ndim != 3:
        raise ValueError(f"raster must be (H, W) or (C, H, W), got shape {r.shape}")
    c, h, w = r.shape
    return MAGIC + _HEADER.pack(h, w, c) + np.ascontiguousarray(r, dtype="<f4").tobytes()


def raster_from_bytes(buf: bytes) -> np.ndarray:
    """Parse an ICRB1 buffer into a (C, H, W) float32 array."""
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        bad = next((i for i, (a, b) in enumerate(zip(buf, MAGIC)) if a != b), min(len(buf), len(MAGIC)))
        raise FormatError("bad magic, expected ICRB1", bad)
    off = len(MAGIC)
    if len(buf) < off + _HEADER.size:
        raise FormatError("truncated header", len(buf))
    h, w, c = _HEADER.unpack_from(buf, off)
    off += _HEADER.size
    need = off + 4 * h * w * c
    if len(buf) < need:
        raise FormatError(f"truncated data: expected {need} bytes, got {len(buf)}", len(buf))
    if len(buf) > need:
        raise FormatError(f"trailing bytes after {h}x{w}x{c} raster", need)
    return np.frombuffer(buf, dtype="<f4", count=h * w * c, offset=off).reshape(c, h, w).astype(np.float32)


def write_raster(path, r: np.ndarray) -> None:
    Path(path).write_bytes(raster_bytes(r))


def read_raster(path) -> np.ndarray:
    return raster_from_bytes(Path(path).read_bytes())


def pgm_bytes(channel: np.ndarray) -> bytes:
    a = np.asarray(channel, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("PGM export takes a single channel")
    v = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)
    return f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode() + v.tobytes()


def write_pgm(path, channel: np.ndarray) -> None:
    Path(path).write_bytes(pgm_bytes(channel))


# -- graphs ----------------------------------------------------------------


def _num(x: float) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("non-finite number")
    return x  # json writes shortest round-trip repr, i.e. 17 significant digits max


def _check_point(p, what: str):
    if len(p) != 2:
        raise FormatError(f"{what}: expected [row, col], got {p!r}")
    try:
        return [_num(p[0]), _num(p[1])]
    except (TypeError, ValueError):
        raise FormatError(f"{what}: non-finite or non-numeric coordinate {p!r}") from None


def gt_to_doc(gt: GroundTruth) -> dict:
    return {
        "height": gt.height,
        "width": gt.width,
        "instances": [[_check_point(p, f"instance {i} vertex {k}") for k, p in enumerate(inst.raw)]
                      for i, inst in enumerate(gt.instances)],
    }


def gt_from_doc(doc: dict) -> GroundTruth:
    try:
        insts = doc["instances"]
        h, w = int(doc["height"]), int(doc["width"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"ground-truth document missing field: {exc}") from None
    polys = []
    for i, inst in enumerate(insts):
        pts = [_check_point(p, f"instance {i} vertex {k}") for k, p in enumerate(inst)]
        if not pts:
            raise FormatError(f"instance {i} has no vertices")
        polys.append(pts)
    return GroundTruth.from_polylines(polys, h, w)


def graph_to_doc(g: CurbGraph) -> dict:
    verts = []
    for vid, p, stop in g.vertices:
        r, c = _check_point(p, f"vertex {vid}")
        verts.append([int(vid), r, c, bool(stop)])
    doc = {
        "vertices": verts,
        "edges": [[int(a), int(b)] for a, b in g.edges],
        "instances": [[int(v) for v in ch] for ch in g.instances],
    }
    _validate_graph_doc(doc)
    if g.candidates:
        doc["candidates"] = [[_num(r), _num(c), _num(s)] for r, c, s in g.candidates]
    return doc


def _validate_graph_doc(doc: dict) -> None:
    for key in ("vertices", "edges", "instances"):
        if not isinstance(doc.get(key), list):
            raise FormatError(f"graph document: '{key}' must be a list")
    ids = set()
    for v in doc["vertices"]:
        if not (isinstance(v, list) and len(v) == 4):
            raise FormatError(f"vertex entry {v!r}: expected [id, row, col, stop]")
        _check_point(v[1:3], f"vertex {v[0]}")
        if v[0] in ids:
            raise FormatError(f"duplicate vertex id {v[0]}")
        ids.add(v[0])
    for e in doc["edges"]:
        if not (isinstance(e, list) and len(e) == 2):
            raise FormatError(f"edge entry {e!r}: expected [id, id]")
        for v in e:
            if v not in ids:
                raise FormatError(f"edge {e} references missing vertex id {v}")
    for i, ch in enumerate(doc["instances"]):
        for v in ch:
            if v not in ids:
                raise FormatError(f"instance {i} references missing vertex id {v}")


def graph_from_doc(doc: dict) -> CurbGraph:
    if not isinstance(doc, dict):
        raise FormatError("graph document must be an object")
    _validate_graph_doc(doc)
    g = CurbGraph()
    g.vertices = [(int(v[0]), (float(v[1]), float(v[2])), bool(v[3])) for v in doc["vertices"]]
    g.edges = [(int(a), int(b)) for a, b in doc["edges"]]
    g.instances = [[int(v) for v in ch] for ch in doc["instances"]]
    g.candidates = [tuple(float(x) for x in c) for c in doc.get("candidates", [])]
    return g


def _dump(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")


def _load(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc.msg}", exc.pos) from None


def write_graph(path, g: CurbGraph) -> None:
    _dump(path, graph_to_doc(g))


def read_graph(path) -> CurbGraph:
    return graph_from_doc(_load(path))


def write_gt(path, gt: GroundTruth) -> None:
    _dump(path, gt_to_doc(gt))


def read_gt(path) -> GroundTruth:
    doc = _load(path)
    if isinstance(doc, dict) and "vertices" in doc:
        raise FormatError(f"{path}: this is a prediction graph, not a ground-truth file")
    return gt_from_doc(doc)


def read_pred_or_gt(path):
    """Either document kind, as a CurbGraph or GroundTruth respectively."""
    doc = _load(path)
    if isinstance(doc, dict) and "vertices" in doc:
        return graph_from_doc(doc)
    return gt_from_doc(doc)


def gt_as_graph(gt: GroundTruth) -> CurbGraph:
    g = CurbGraph()
    for inst in gt.instances:
        ids = [g.add_vertex(p) for p in inst.raw]
        g.edges.extend(zip(ids[:-1], ids[1:]))
        g.set_stop(ids[-1])
        g.instances.append(ids)
    return g


# -- scenes ----------------------------------------------------------------
# A scene is a manifest (JSON) next to one ICRB1 raster holding the feature
# channels followed by the segmentation and heatmap channels.


def write_scene(directory, name: str, sc: SceneBundle, seed=None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stack = np.concatenate([sc.features, sc.seg_soft[None], sc.heatmap[None]]).astype(np.float32)
    write_raster(directory / f"{name}.icrb", stack)
    write_gt(directory / f"{name}.gt.json", sc.gt)
    man = {
        "raster": f"{name}.icrb",
        "gt": f"{name}.gt.json",
        "feature_channels": int(sc.features.shape[0]),
        "seed": seed,
    }
    path = directory / f"{name}.json"
    _dump(path, man)
    return path


def read_scene(path) -> SceneBundle:
    path = Path(path)
    man = _load(path)
    try:
        stack = read_raster(path.parent / man["raster"])
        gt = read_gt(path.parent / man["gt"])
        nf = int(man["feature_channels"])
    except KeyError as exc:
        raise FormatError(f"{path}: manifest missing field {exc}") from None
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if stack.shape[0] != nf + 2:
        raise FormatError(f"{path}: raster has {stack.shape[0]} channels, manifest implies {nf + 2}")
    if stack.shape[1:] != (gt.height, gt.width):
        raise FormatError(f"{path}: raster is {stack.shape[1:]}, ground truth is {(gt.height, gt.width)}")
    return SceneBundle(stack[:nf].copy(), stack[nf].copy(), stack[nf + 1].copy(), gt)


def list_scenes(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise FormatError(f"{d}: not a directory")
    out = sorted(p for p in d.glob("*.json") if not p.name.endswith(".gt.json") and p.name != "config.json")
    return out


def atomic_write_bytes(path, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
