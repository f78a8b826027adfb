"""On-disk formats: trajectory, track, ground-truth and report files, PPM frames.

Structured files are UTF-8 JSON.  Floats are written with 17 significant
digits so every finite float64 reads back bit for bit.
"""
from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import ContractError, SplatTrackError
from .evaluation import GroundTruthTrack
from .geom import Camera, GaussianTrajectory
from .track import Query, Track, TrackerConfig

FORMAT_VERSION = 1


class FormatError(SplatTrackError, ValueError):
    """A file could not be parsed or does not match its schema."""


# -- JSON with fixed float formatting ---------------------------------------


def _float_text(x: float) -> str:
    if not math.isfinite(x):
        raise ContractError(f"cannot serialize non-finite value {x!r}")
    text = "%.17g" % x
    if "." not in text and "e" not in text and "n" not in text:
        text += ".0"
    return text


def _encode(obj, out: list, indent: int, level: int) -> None:
    if isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_float_text(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif obj is None:
        out.append("null")
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        pad = "\n" + " " * (indent * (level + 1)) if indent else ""
        out.append("{")
        for i, (key, val) in enumerate(obj.items()):
            out.append(pad + json.dumps(str(key)) + ": ")
            _encode(val, out, indent, level + 1)
            if i < len(obj) - 1:
                out.append(",")
        out.append(("\n" + " " * (indent * level) if indent else "") + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = list(obj)
        # numeric leaves stay on one line
        flat = all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in items)
        if flat or not indent:
            out.append("[")
            for i, v in enumerate(items):
                if i:
                    out.append(", ")
                _encode(v, out, indent, level + 1)
            out.append("]")
            return
        pad = "\n" + " " * (indent * (level + 1))
        out.append("[")
        for i, v in enumerate(items):
            out.append(pad)
            _encode(v, out, indent, level + 1)
            if i < len(items) - 1:
                out.append(",")
        out.append("\n" + " " * (indent * level) + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 1) -> str:
    out: list[str] = []
    _encode(obj, out, indent, 0)
    return "".join(out) + "\n"


def loads(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}") from exc


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def read_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path} is not UTF-8 text") from exc
    return loads(text)


def _vec(value, size, what):
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (size,):
        raise FormatError(f"{what} must have {size} numbers")
    return arr


# -- trajectory -------------------------------------------------------------


def trajectory_to_dict(traj: GaussianTrajectory, camera: Camera) -> dict:
    return {
        "version": FORMAT_VERSION,
        "width": camera.width,
        "height": camera.height,
        "k": traj.k,
        "n": traj.n,
        "camera": {
            "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
            "rot": camera.rot.ravel().tolist(), "trans": camera.trans.tolist(),
        },
        "gaussians": [
            {"mu": traj.mu[i].tolist(), "s": traj.s[i].tolist(), "phi": traj.phi[i].tolist(),
             "r": traj.r[i].tolist(), "o": float(traj.o[i])}
            for i in range(traj.n)
        ],
        "deltas": [
            [{"dmu": traj.dmu[t, i].tolist(), "dr": traj.dr[t, i].tolist()}
             for i in range(traj.n)]
            for t in range(traj.k - 1)
        ],
    }


def trajectory_from_dict(d: dict) -> tuple[GaussianTrajectory, Camera]:
    try:
        k, n = int(d["k"]), int(d["n"])
        cam = d["camera"]
        camera = Camera(
            fx=float(cam["fx"]), fy=float(cam["fy"]), cx=float(cam["cx"]), cy=float(cam["cy"]),
            width=int(d["width"]), height=int(d["height"]),
            rot=_vec(cam["rot"], 9, "camera.rot").reshape(3, 3),
            trans=_vec(cam["trans"], 3, "camera.trans"),
        )
        gs = d["gaussians"]
        if len(gs) != n:
            raise FormatError(f"expected {n} gaussians, found {len(gs)}")
        rows = d["deltas"]
        if len(rows) != k - 1 or any(len(row) != n for row in rows):
            raise FormatError(f"deltas must be {k - 1} rows of {n} records")
        dmu = np.array([[_vec(r["dmu"], 3, "dmu") for r in row] for row in rows]).reshape(k - 1, n, 3)
        dr = np.array([[_vec(r["dr"], 3, "dr") for r in row] for row in rows]).reshape(k - 1, n, 3)
        traj = GaussianTrajectory(
            mu=[_vec(g["mu"], 3, "mu") for g in gs],
            s=[_vec(g["s"], 3, "s") for g in gs],
            phi=[_vec(g["phi"], 4, "phi") for g in gs],
            r=[_vec(g["r"], 3, "r") for g in gs],
            o=[float(g["o"]) for g in gs],
            dmu=dmu,
            dr=dr,
        )
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed trajectory file: {exc}") from exc
    return traj, camera


def save_trajectory(path, traj: GaussianTrajectory, camera: Camera) -> None:
    write_text(path, dumps(trajectory_to_dict(traj, camera)))


def load_trajectory(path) -> tuple[GaussianTrajectory, Camera]:
    return trajectory_from_dict(read_json(path))


# -- tracks -----------------------------------------------------------------


def track_config_dict(cfg: TrackerConfig) -> dict:
    return {"top_k": cfg.top_k, "tau_vis": cfg.tau_vis, "beta": cfg.beta,
            "eps": cfg.eps, "normalize_flow": cfg.normalize_flow}


def tracks_to_dict(tracks: list[Track], k: int, cfg: TrackerConfig,
                   gt_index: list[int] | None = None) -> dict:
    queries = []
    for j, tr in enumerate(tracks):
        q = {"t": tr.query.t, "x": float(tr.query.p[0]), "y": float(tr.query.p[1])}
        if gt_index is not None:
            q["gt"] = int(gt_index[j])
        queries.append(q)
    return {
        "version": FORMAT_VERSION,
        "k": k,
        "queries": queries,
        "tracks": [
            [{"x": float(tr.points[t, 0]), "y": float(tr.points[t, 1]),
              "visible": bool(tr.visible[t])} for t in range(k)]
            for tr in tracks
        ],
        "anchors": [tr.anchor_set.tolist() for tr in tracks],
        "config": track_config_dict(cfg),
    }


def tracks_from_dict(d: dict):
    """Returns (tracks, gt_index or None, config dict)."""
    try:
        k = int(d["k"])
        queries, rows = d["queries"], d["tracks"]
        if len(queries) != len(rows):
            raise FormatError("queries and tracks differ in length")
        anchors = d.get("anchors") or [[] for _ in rows]
        tracks = []
        for q, row, anc in zip(queries, rows, anchors):
            if len(row) != k:
                raise FormatError(f"track has {len(row)} records, expected {k}")
            query = Query(int(q["t"]), (float(q["x"]), float(q["y"])))
            if not 0 <= query.t < k:
                raise FormatError(f"query frame {query.t} outside [0, {k})")
            pts = np.array([[float(r["x"]), float(r["y"])] for r in row])
            vis = np.array([bool(r["visible"]) for r in row], dtype=bool)
            tracks.append(Track(pts.reshape(k, 2), vis, np.asarray(anc, dtype=np.int64), query))
        gt_index = [int(q["gt"]) for q in queries] if all("gt" in q for q in queries) and queries else None
        return tracks, gt_index, dict(d.get("config", {}))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed track file: {exc}") from exc


def save_tracks(path, tracks, k, cfg, gt_index=None) -> None:
    write_text(path, dumps(tracks_to_dict(tracks, k, cfg, gt_index)))


def load_tracks(path):
    return tracks_from_dict(read_json(path))


# -- ground truth -----------------------------------------------------------


def _num_or_null(v):
    v = float(v)
    return v if math.isfinite(v) else None


def gt_to_dict(gts: list[GroundTruthTrack], width: int, height: int) -> dict:
    return {
        "version": FORMAT_VERSION,
        "width": width,
        "height": height,
        "k": gts[0].k if gts else 0,
        "tracks": [
            {"points": [[_num_or_null(v) for v in row] for row in g.points],
             "visible": [bool(v) for v in g.visible]}
            for g in gts
        ],
    }


def gt_from_dict(d: dict):
    """Returns (tracks, width, height)."""
    try:
        k = int(d["k"])
        gts = []
        for rec in d["tracks"]:
            # null marks an undefined position at an occluded frame
            pts = np.array([[math.nan if v is None else v for v in row]
                            for row in rec["points"]], dtype=np.float64)
            if pts.shape != (k, 2):
                raise FormatError(f"ground-truth points must be ({k}, 2)")
            if len(rec["visible"]) != k:
                raise FormatError(f"ground-truth visibility must have {k} flags")
            gts.append(GroundTruthTrack(pts, np.array(rec["visible"], dtype=bool)))
        return gts, int(d["width"]), int(d["height"])
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed ground-truth file: {exc}") from exc


def save_gt(path, gts, width, height) -> None:
    write_text(path, dumps(gt_to_dict(gts, width, height)))


def load_gt(path):
    return gt_from_dict(read_json(path))


# -- reports ----------------------------------------------------------------


def report_text(report: dict) -> str:
    lines = []
    for key, val in report.items():
        if isinstance(val, (list, tuple)):
            val = " ".join(_float_text(float(v)) if isinstance(v, float) else str(v) for v in val)
        elif isinstance(val, float):
            val = _float_text(val) if math.isfinite(val) else str(val)
        lines.append(f"{key}: {val}")
    return "\n".join(lines) + "\n"


def _finite_or_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    return obj


def save_report(stem, report: dict) -> tuple[Path, Path]:
    """Write <stem>.txt (key: value lines) and <stem>.json; non-finite values become null."""
    stem = Path(stem)
    txt, js = stem.with_name(stem.name + ".txt"), stem.with_name(stem.name + ".json")
    write_text(txt, report_text(report))
    write_text(js, dumps(_finite_or_none(report)))
    return txt, js


# -- PPM frames -------------------------------------------------------------


def _ppm_token(data: bytes, pos: int):
    while True:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def write_ppm(path, image) -> None:
    """Binary P6, 8 bit; values in [0, 1] map to round(255 v)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError("PPM images must be (H, W, 3)")
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file as float64 in [0, 1] (v / maxval)."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    magic, pos = _ppm_token(data, 0)
    if magic != b"P6":
        raise FormatError(f"{path}: not a binary PPM (P6) file")
    try:
        w, pos = _ppm_token(data, pos)
        h, pos = _ppm_token(data, pos)
        maxval, pos = _ppm_token(data, pos)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PPM header") from exc
    if not (0 < maxval < 256) or w < 1 or h < 1:
        raise FormatError(f"{path}: unsupported PPM header")
    pos += 1
    payload = data[pos:pos + w * h * 3]
    if len(payload) != w * h * 3:
        raise FormatError(f"{path}: truncated PPM payload")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return arr.astype(np.float64) / float(maxval)


def frame_name(t: int) -> str:
    return f"frame_{t:04d}.ppm"


def write_frames(out_dir, video) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, img in enumerate(video):
        p = out_dir / frame_name(t)
        write_ppm(p, img)
        paths.append(p)
    return paths


def read_frames(frames_dir) -> np.ndarray:
    """Load frame_*.ppm files in name order into a (k, H, W, 3) array."""
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir():
        raise FormatError(f"{frames_dir} is not a directory")
    paths = sorted(p for p in frames_dir.iterdir()
                   if p.name.startswith("frame_") and p.suffix == ".ppm")
    if not paths:
        raise FormatError(f"no frame_*.ppm files in {frames_dir}")
    frames = []
    for p in paths:
        img = read_ppm(p)
        if frames and img.shape != frames[0].shape:
            raise FormatError(f"{p}: size {img.shape[1]}x{img.shape[0]} differs from "
                              f"{frames[0].shape[1]}x{frames[0].shape[0]}")
        frames.append(img)
    return np.stack(frames)


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FormatError(f"cannot create {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise FormatError(f"{path} is not writable")
    return path
