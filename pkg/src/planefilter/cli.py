"""Command line interface.

Subcommands: ``filter`` (plane-based outlier rejection), ``refine``
(NCC keypoint refinement), ``eval`` (ground-truth scoring) and ``synth``
(fixture generation).  Exit codes: 0 success, 2 parse/content errors,
3 I/O errors, 4 image decode errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import fileio
from .errors import PlanefilterError
from .metrics import GroundTruth, evaluate_pair
from .miho import MihoPair, mop_miho_filter
from .mop import FilterResult, MopConfig, mop_filter
from .ncc import DEFAULT_RADIUS, build_warp_pairs, refine_matches
from .synth import SceneSpec, gen_planar_scene, gen_pose_scene, render_textured_pair, sample_plane

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_IO = 3
EXIT_IMAGE = 4

_BT601 = np.array([0.299, 0.587, 0.114])


class ImageDecodeError(Exception):
    pass


def load_image(path) -> np.ndarray:
    """PNG/PGM image as float64 luminance in [0, 1] (BT.601 for color)."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise ImageDecodeError(f"{path}: unsupported format {im.format}")
            arr = np.asarray(im)
    except (FileNotFoundError, IsADirectoryError, PermissionError,
            UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(f"{path}: cannot decode image: {exc}") from exc
    if arr.dtype == np.uint8:
        img = arr.astype(np.float64) / 255.0
    elif arr.dtype == np.uint16:
        img = arr.astype(np.float64) / 65535.0
    elif arr.dtype == np.int32:
        img = arr.astype(np.float64) / 65535.0
    else:
        img = arr.astype(np.float64)
    if img.ndim == 3:
        img = img[..., :3] @ _BT601
    return img


def save_image(path, img) -> None:
    from PIL import Image

    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def _filter_config(args, miho: bool) -> MopConfig:
    n_min = args.n_min if args.n_min is not None else (8 if miho else 12)
    return MopConfig(t_l=args.tl, n_min=n_min, c_max=args.max_iters, seed=args.seed)


def cmd_filter(args) -> int:
    matches = fileio.read_matches(args.matches)
    cfg = _filter_config(args, args.miho)
    result = mop_miho_filter(matches, cfg) if args.miho else mop_filter(matches, cfg)
    fileio.write_json(args.out, fileio.result_to_dict(result, matches, cfg, args.miho))
    return EXIT_OK


def _pairs_from_result(doc):
    """Per-match warp-pair lists from a filter result document."""
    planes = fileio.result_planes(doc)
    eye = np.eye(3)
    base = (eye, eye)
    cache = {-1: build_warp_pairs(base, base)}
    per_match = []
    for rec in sorted(doc["matches"], key=lambda r: r["index"]):
        plane = rec["plane"] if rec["kept"] else -1
        if plane not in cache:
            p = planes[plane]
            if isinstance(p, MihoPair):
                extended = (p.h1, p.h2)
            else:
                extended = (eye, np.linalg.inv(p))
            cache[plane] = build_warp_pairs(base, extended)
        per_match.append(cache[plane])
    return per_match


def cmd_refine(args) -> int:
    img1 = load_image(args.img1)
    img2 = load_image(args.img2)
    if args.from_result:
        doc = fileio.read_result(args.from_result)
        matches = fileio.result_matches(doc)
        per_match = _pairs_from_result(doc)
    else:
        if not args.matches:
            raise ValueError("refine needs --matches or --from-result")
        matches = fileio.read_matches(args.matches)
        doc = None
        eye = np.eye(3)
        per_match = [build_warp_pairs((eye, eye), (eye, eye))] * len(matches)
    refined = refine_matches(img1, img2, matches, per_match, r=args.radius,
                             workers=fileio.thread_limit())
    coords = matches.copy()
    scores = [None] * len(matches)
    flags = [False] * len(matches)
    for i, rm in enumerate(refined):
        if rm.refined:
            coords[i, :2] = rm.point1
            coords[i, 2:] = rm.point2
            scores[i] = float(rm.score)
            flags[i] = True
    if doc is not None:
        out = dict(doc)
        records = []
        for rec, c, s, fl in zip(sorted(doc["matches"], key=lambda r: r["index"]),
                                 coords, scores, flags):
            rec = dict(rec)
            rec.update(x1=float(c[0]), y1=float(c[1]), x2=float(c[2]), y2=float(c[3]),
                       ncc_score=s, refined=fl)
            records.append(rec)
        out["matches"] = records
        out["config"] = dict(out["config"], radius=args.radius)
        fileio.write_json(args.out, out)
    else:
        cfg = MopConfig(seed=0)
        result = FilterResult(
            kept=np.arange(len(matches)),
            discarded=np.empty(0, dtype=int),
            assignment=np.full(len(matches), -1, dtype=int),
            planes=[],
            passthrough=True,
        )
        docout = fileio.result_to_dict(result, matches, cfg, miho=False,
                                       coords=coords, scores=scores, refined_flags=flags)
        docout["config"]["radius"] = args.radius
        fileio.write_json(args.out, docout)
    return EXIT_OK


def _load_pred(path):
    """Prediction input: a match CSV or a filter result (kept matches)."""
    try:
        doc = fileio.read_result(path)
    except ValueError:
        return fileio.read_matches(path)
    return fileio.result_kept_matches(doc)


def cmd_eval(args) -> int:
    base = fileio.read_matches(args.base)
    pred = _load_pred(args.pred)
    gt = fileio.read_gt(args.gt)
    size = (args.width, args.height) if args.mode == "homography" else None
    report = evaluate_pair(base, pred, gt, args.mode, image_size=size)
    fileio.write_report(args.out, report)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec_doc = fileio.read_json(args.spec)
    spec = SceneSpec.from_dict(spec_doc)
    os.makedirs(args.out_dir, exist_ok=True)
    join = lambda name: os.path.join(args.out_dir, name)
    fileio.write_json(join("spec.json"), spec.to_dict())
    if spec.kind == "textured":
        if spec.homography is not None:
            h = np.array(spec.homography, dtype=np.float64)
        else:
            h = sample_plane(np.random.default_rng(spec.seed + 1), spec.width, spec.height)
        img1, img2, matches = render_textured_pair(h, spec)
        save_image(join("img1.png"), img1)
        save_image(join("img2.png"), img2)
        fileio.write_matches(join("matches.csv"), matches)
        fileio.write_json(join("planes.json"), {"planes": [[[float(v) for v in row] for row in h]]})
        fileio.write_gt(join("gt.json"), GroundTruth.homography(h))
        return EXIT_OK
    scene = gen_pose_scene(spec) if spec.kind == "pose" else gen_planar_scene(spec)
    fileio.write_matches(join("matches.csv"), scene.matches)
    with open(join("labels.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index,label\n")
        for i, lbl in enumerate(scene.labels):
            fh.write(f"{i},{int(lbl)}\n")
    if scene.gt_pose is not None:
        fileio.write_gt(join("gt.json"), scene.gt_pose)
    if scene.gt_planes:
        fileio.write_json(join("planes.json"), {
            "planes": [[[float(v) for v in row] for row in h] for h in scene.gt_planes]
        })
        if len(scene.gt_planes) == 1:
            fileio.write_gt(join("gt.json"), GroundTruth.homography(scene.gt_planes[0]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="planefilter",
                                     description="Plane-based match filtering and refinement")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="filter matches onto overlapping planes")
    p.add_argument("--matches", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--miho", action="store_true", help="use midpoint homography pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--tl", type=float, default=15.0)
    p.add_argument("--n-min", type=int, default=None)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("refine", help="refine keypoints by template matching")
    p.add_argument("--matches")
    p.add_argument("--img1", required=True)
    p.add_argument("--img2", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--from-result", dest="from_result")
    p.add_argument("--radius", type=int, default=DEFAULT_RADIUS)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="score matches against ground truth")
    p.add_argument("--base", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", required=True, choices=("pose", "homography"))
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate ground-truth fixtures")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ImageDecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IMAGE
    except (ValueError, json.JSONDecodeError, PlanefilterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
