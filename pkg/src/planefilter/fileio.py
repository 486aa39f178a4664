"""Text file formats binding the pipeline together: the comma-separated
match list, the JSON result/ground-truth/report documents, and the
PLANEFILTER_THREADS environment knob.

All floats are serialized with Python's shortest round-trip repr, so every
64-bit value survives a write/read cycle exactly.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .metrics import EvalReport, GroundTruth
from .miho import MihoPair
from .mop import FilterResult, MopConfig

MATCH_HEADER = "x1,y1,x2,y2"
RESULT_FORMAT = "planefilter-result-v1"


def thread_limit() -> int:
    """Worker cap from PLANEFILTER_THREADS; 0 or unset means auto."""
    raw = os.environ.get("PLANEFILTER_THREADS", "0")
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"PLANEFILTER_THREADS must be an integer, got {raw!r}") from exc
    if value < 0:
        raise ValueError("PLANEFILTER_THREADS must be non-negative")
    if value == 0:
        return os.cpu_count() or 1
    return value


def read_matches(path) -> np.ndarray:
    """Load a match CSV (header x1,y1,x2,y2, one match per line)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0].replace(" ", "") != MATCH_HEADER:
        raise ValueError(f"{path}: missing '{MATCH_HEADER}' header")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise ValueError(f"{path}: expected 4 fields, got {len(parts)}: {ln!r}")
        try:
            row = [float(p) for p in parts]
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric field in {ln!r}") from exc
        if not all(np.isfinite(row)):
            raise ValueError(f"{path}: non-finite value in {ln!r}")
        rows.append(row)
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def write_matches(path, matches) -> None:
    m = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(MATCH_HEADER + "\n")
        for row in m:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _matrix(mat) -> list:
    return [[float(v) for v in row] for row in np.asarray(mat, dtype=np.float64)]


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON: {exc}") from exc


def result_to_dict(result: FilterResult, matches, cfg: MopConfig, miho: bool,
                   coords=None, scores=None, refined_flags=None) -> dict:
    """Serializable form of a filter (or filter+refine) run.

    ``coords`` overrides the per-match coordinates (after refinement);
    ``scores`` holds per-match correlation peaks or None.
    """
    m = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    coords = m if coords is None else np.asarray(coords, dtype=np.float64)
    kept = set(int(i) for i in result.kept)
    plane_of = {int(mi): int(pl) for mi, pl in zip(result.kept, result.assignment)}
    planes = []
    for p in result.planes:
        if miho:
            planes.append({"h1": _matrix(p.pair.h1), "h2": _matrix(p.pair.h2)})
        else:
            planes.append({"h": _matrix(p.h)})
    records = []
    for i in range(len(m)):
        rec = {
            "index": i,
            "kept": i in kept,
            "plane": plane_of.get(i, -1),
            "x1": float(coords[i, 0]),
            "y1": float(coords[i, 1]),
            "x2": float(coords[i, 2]),
            "y2": float(coords[i, 3]),
            "ncc_score": None if scores is None else scores[i],
        }
        if refined_flags is not None:
            rec["refined"] = bool(refined_flags[i])
        records.append(rec)
    return {
        "format": RESULT_FORMAT,
        "config": {
            "t_l": cfg.t_l,
            "t_h": cfg.t_h,
            "n_min": cfg.n_min,
            "c_f_max": cfg.c_f_max,
            "c_min": cfg.c_min,
            "c_max": cfg.c_max,
            "buffer_size": cfg.buffer_size,
            "seed": cfg.seed,
            "miho": miho,
        },
        "alpha_star": float(result.alpha_star),
        "passthrough": bool(result.passthrough),
        "planes": planes,
        "matches": records,
    }


def read_result(path) -> dict:
    doc = read_json(path)
    if not isinstance(doc, dict) or doc.get("format") != RESULT_FORMAT:
        raise ValueError(f"{path}: not a {RESULT_FORMAT} document")
    for key in ("config", "planes", "matches"):
        if key not in doc:
            raise ValueError(f"{path}: missing '{key}'")
    return doc


def result_matches(doc) -> np.ndarray:
    recs = sorted(doc["matches"], key=lambda r: r["index"])
    return np.array([[r["x1"], r["y1"], r["x2"], r["y2"]] for r in recs],
                    dtype=np.float64).reshape(-1, 4)


def result_kept_matches(doc) -> np.ndarray:
    recs = sorted((r for r in doc["matches"] if r["kept"]), key=lambda r: r["index"])
    return np.array([[r["x1"], r["y1"], r["x2"], r["y2"]] for r in recs],
                    dtype=np.float64).reshape(-1, 4)


def result_planes(doc) -> list:
    """Plane maps from the document: 3x3 arrays, or MihoPair when dual."""
    out = []
    for p in doc["planes"]:
        if "h1" in p:
            out.append(MihoPair(np.array(p["h1"], dtype=np.float64),
                                np.array(p["h2"], dtype=np.float64)))
        else:
            out.append(np.array(p["h"], dtype=np.float64))
    return out


def _shaped(doc, key, shape, path):
    try:
        arr = np.array(doc[key], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: bad or missing '{key}'") from exc
    if arr.shape != shape:
        raise ValueError(f"{path}: '{key}' must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: '{key}' has non-finite entries")
    return arr


def read_gt(path) -> GroundTruth:
    """Ground-truth JSON: either {K1, K2, R, t, scale?} or {H}."""
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: ground truth must be a JSON object")
    if "H" in doc:
        h = _shaped(doc, "H", (3, 3), path)
        try:
            return GroundTruth.homography(h)
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from exc
    needed = {"K1", "K2", "R", "t"}
    if not needed <= set(doc):
        raise ValueError(f"{path}: needs either 'H' or all of {sorted(needed)}")
    k1 = _shaped(doc, "K1", (3, 3), path)
    k2 = _shaped(doc, "K2", (3, 3), path)
    r = _shaped(doc, "R", (3, 3), path)
    t = _shaped(doc, "t", (3,), path)
    scale = doc.get("scale")
    if scale is not None:
        scale = float(scale)
    try:
        return GroundTruth.pose(k1, k2, r, t, scale=scale)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc


def write_gt(path, gt: GroundTruth) -> None:
    if gt.kind == "homography":
        write_json(path, {"H": _matrix(gt.h)})
        return
    doc = {
        "K1": _matrix(gt.k1),
        "K2": _matrix(gt.k2),
        "R": _matrix(gt.r),
        "t": [float(v) for v in gt.t],
    }
    if gt.scale is not None:
        doc["scale"] = float(gt.scale)
    write_json(path, doc)


def write_report(path, report: EvalReport) -> None:
    def clean(v):
        if isinstance(v, float) and not np.isfinite(v):
            return None if np.isnan(v) else ("inf" if v > 0 else "-inf")
        return v

    doc = {k: (clean(v) if not isinstance(v, dict) else v)
           for k, v in report.to_dict().items()}
    write_json(path, doc)
