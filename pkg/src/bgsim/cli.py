"""Command-line interface: ``bgsim {infer,eval,synth,oracle}``.

Exit codes: 0 success, 1 suite or metric failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .cascade import DEFAULT_NMS_RADIUS, DETECTION_THRESHOLD, assemble_persons
from .heatmap import CMFError, as_stack, load_cmf
from .inference import DEFAULT_SIGMA
from .metrics import SchemaError, UndefinedMetricError, evaluate, load_pose_file, pckh_match
from .skeleton import SkeletonModel, default_model, load_model
from .synth import (CAP_GRID, CAP_JOINTS, CAP_TYPES, SceneSpec, generate_scene, run_oracle_suite,
                    scene_files)

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode("utf-8")


def _load_model(path) -> SkeletonModel:
    if path is None:
        return default_model()
    if not Path(path).is_file():
        raise InputError(f"model file not found: {path}")
    try:
        return load_model(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"invalid model file {path}: {exc}") from exc


# --- infer -------------------------------------------------------------------------

def person_record(model: SkeletonModel, stack: np.ndarray, person) -> dict:
    pose = person.pose
    kps = [[int(x), int(y), int(o), float(stack[j, y, x])]
           for j, ((x, y), o) in enumerate(zip(pose.positions, pose.occlusions))]
    return {"keypoints": kps, "score": pose.score, "agreement": person.agreement,
            "base_points": [{"stage": b.stage, "joint": b.joint, "name": model.names[b.joint],
                             "position": list(b.position), "response": b.response}
                            for b in person.per_stage_base]}


def cmd_infer(args) -> int:
    model = _load_model(args.model)
    if not 0 < args.sigma <= 1:
        raise InputError(f"--sigma must lie in (0, 1], got {args.sigma}")
    images = []
    for path in args.input:
        if not Path(path).is_file():
            raise InputError(f"input file not found: {path}")
        stack = as_stack(load_cmf(path))
        if stack.shape[0] != model.n_joints:
            raise InputError(f"{path}: {stack.shape[0]} maps for a {model.n_joints}-joint model")
        persons = assemble_persons(model, stack, args.sigma, args.max_persons, args.nms_radius,
                                   args.threshold)
        images.append({"id": Path(path).stem,
                       "persons": [person_record(model, stack, p) for p in persons]})
        if args.overlay:
            atomic_write(args.overlay if len(args.input) == 1
                         else Path(args.overlay).with_name(f"{Path(path).stem}.ppm"),
                         render_overlay(model, stack, persons))
    out = _dumps({"images": images})
    if args.output:
        atomic_write(args.output, out)
    if args.json or not args.output:
        sys.stdout.write(out.decode())
    else:
        for im in images:
            print(f"{im['id']}: {len(im['persons'])} person(s)")
    return EXIT_OK


PALETTE = [(230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
           (145, 30, 180), (70, 240, 240), (240, 50, 230)]


def render_overlay(model: SkeletonModel, stack: np.ndarray, persons, scale: int = 8) -> bytes:
    """Binary PPM: maximum over maps in grey, kinetic edges and joints per person in colour."""
    m = stack.max(axis=0)
    lo, hi = float(m.min()), float(m.max())
    grey = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo)
    img = np.repeat(np.repeat((grey * 200).astype(np.uint8), scale, 0), scale, 1)
    img = np.stack([img] * 3, axis=-1)
    height, width = img.shape[:2]

    def dot(x, y, colour, r):
        img[max(0, y - r):min(height, y + r + 1), max(0, x - r):min(width, x + r + 1)] = colour

    for k, person in enumerate(persons):
        colour = PALETTE[k % len(PALETTE)]
        centres = person.pose.positions * scale + scale // 2
        for e in model.kinetic_edges():
            spec = model.edges[e]
            (x0, y0), (x1, y1) = centres[spec.i], centres[spec.j]
            steps = int(max(abs(x1 - x0), abs(y1 - y0), 1))
            for t in np.linspace(0.0, 1.0, steps + 1):
                dot(int(round(x0 + t * (x1 - x0))), int(round(y0 + t * (y1 - y0))), colour, 0)
        for (x, y), o in zip(centres, person.pose.occlusions):
            dot(int(x), int(y), (255, 255, 255) if o == 0 else colour, max(1, scale // 4))
    return f"P6\n{width} {height}\n255\n".encode("ascii") + img.tobytes()


# --- eval --------------------------------------------------------------------------

def cmd_eval(args) -> int:
    model = _load_model(args.model)
    for p in (args.gt, *args.input):
        if not Path(p).is_file():
            raise InputError(f"file not found: {p}")
    try:
        gts = load_pose_file(args.gt, "gt")
        preds: dict[str, list] = {}
        for p in args.input:
            for image_id, persons in load_pose_file(p, "pred"):
                preds.setdefault(image_id, []).extend(persons)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON: {exc}") from exc
    images = [(g, preds.get(image_id, [])) for image_id, g in gts]
    n_kp = {len(p.keypoints) for g, ps in images for p in list(g) + list(ps)}
    if n_kp - {model.n_joints}:
        raise InputError(f"keypoint count {sorted(n_kp)} does not match the "
                         f"{model.n_joints}-joint model")
    try:
        result = evaluate(images, k=model.oks_k)
    except UndefinedMetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = result.to_dict()
    with_heads = [(g, p) for g, p in images if g and all(x.head_size for x in g)]
    if with_heads:
        pck = pckh_match([g for g, _ in with_heads], [p for _, p in with_heads],
                         args.alpha, names=model.names)
        report["pckh"] = {"alpha": args.alpha, **pck.to_dict()}
    if args.json:
        sys.stdout.write(_dumps(report).decode())
        return EXIT_OK
    for t, v in result.ap.items():
        print(f"AP@{t:.2f}  {v:.4f}")
    print(f"mean AP  {result.mean_ap:.4f}")
    print(f"AR       {result.ar:.4f}")
    if result.skipped_images:
        print(f"images without ground truth skipped: {result.skipped_images}")
    if "pckh" in report:
        pk = report["pckh"]
        cols = list(pk["table"]) + ["Total"]
        print(f"PCKh@{args.alpha}: " + "  ".join(
            f"{c} {pk['table'].get(c, pk['total']):.1f}" for c in cols))
    return EXIT_OK


# --- synth -------------------------------------------------------------------------

def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def cmd_synth(args) -> int:
    model = _load_model(args.model)
    out = Path(args.output)
    if out.exists() and not out.is_dir():
        raise InputError(f"output path is not a directory: {out}")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = tempfile.NamedTemporaryFile(dir=out, delete=True)
        probe.close()
    except OSError as exc:
        raise InputError(f"output directory not writable: {out} ({exc})") from exc
    try:
        base = SceneSpec(grid=tuple(args.grid), n_persons=args.n_persons,
                         occlusion_rate=args.occlusion_rate, offset_noise_sigma=args.noise,
                         peak_sigma=args.peak_sigma, seed=0,
                         occluded_per_person=args.occluded_per_person)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    entries, all_gt = [], []
    for k in range(args.scenes):
        spec = SceneSpec(**{**base.to_dict(), "seed": scene_seed(args.seed, k)})
        try:
            scene = generate_scene(spec, model)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        stem = f"scene_{k:04d}"
        cmf, gt = scene_files(scene, stem)
        atomic_write(out / f"{stem}.cmf", cmf)
        atomic_write(out / f"{stem}.gt.json", gt)
        all_gt += json.loads(gt)["images"]
        entries.append({"id": stem, "cmf": f"{stem}.cmf", "gt": f"{stem}.gt.json",
                        "spec": spec.to_dict()})
    atomic_write(out / "ground_truth.json", _dumps({"images": all_gt}))
    manifest = {"seed": args.seed, "scenes": entries, "spec": {**base.to_dict(), "seed": None},
                "model": args.model or "default15", "rng": "numpy PCG64"}
    atomic_write(out / "manifest.json", _dumps(manifest))
    print(f"wrote {args.scenes} scene(s) to {out}")
    return EXIT_OK


# --- oracle ------------------------------------------------------------------------

def cmd_oracle(args) -> int:
    if args.max_joints > CAP_JOINTS or args.max_grid > CAP_GRID or args.max_types > CAP_TYPES:
        raise InputError(f"limits above the brute-force cap: at most {CAP_JOINTS} joints, "
                         f"{CAP_GRID}x{CAP_GRID} grid, {CAP_TYPES} types")
    if args.instances < 1:
        raise InputError("--instances must be >= 1")
    report = run_oracle_suite(args.instances, args.seed, args.max_joints, args.max_grid,
                              args.max_types)
    if args.json:
        sys.stdout.write(_dumps(report.to_dict()).decode())
    else:
        print(f"oracle: {report.instances} instance(s), {report.loopy} loopy, "
              f"{len(report.mismatches)} mismatch(es)")
        for m in report.mismatches:
            print(f"  {m}")
    return EXIT_OK if report.ok else EXIT_FAIL


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bgsim", description="Occlusion-aware multi-person pose "
                                "inference on confidence maps.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--model", help="skeleton model JSON (default: built-in 15-joint model)")
        sp.add_argument("--json", action="store_true", help="machine-readable output")

    sp = sub.add_parser("infer", help="infer poses from CMF confidence maps")
    common(sp)
    sp.add_argument("--input", nargs="+", required=True, help="CMF file(s)")
    sp.add_argument("--output", help="pose JSON path (default: stdout)")
    sp.add_argument("--sigma", type=float, default=DEFAULT_SIGMA,
                    help="fraction of root hypotheses kept")
    sp.add_argument("--nms-radius", type=int, default=DEFAULT_NMS_RADIUS)
    sp.add_argument("--max-persons", type=int, default=10)
    sp.add_argument("--threshold", type=float, default=DETECTION_THRESHOLD)
    sp.add_argument("--overlay", help="write a PPM visualisation here")
    sp.add_argument("--seed", type=int, default=0, help="accepted for symmetry; inference is "
                    "deterministic")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="AP/AR and PCKh of predictions against ground truth")
    common(sp)
    sp.add_argument("--gt", required=True, help="ground-truth JSON")
    sp.add_argument("--input", nargs="+", required=True, help="prediction JSON file(s)")
    sp.add_argument("--alpha", type=float, default=0.5, help="PCKh threshold")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("synth", help="generate synthetic scenes")
    common(sp)
    sp.add_argument("--output", required=True, help="output directory")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--scenes", type=int, default=10)
    sp.add_argument("--grid", type=int, nargs=2, default=(48, 32), metavar=("W", "H"))
    sp.add_argument("--n-persons", type=int, default=1)
    sp.add_argument("--occlusion-rate", type=float, default=0.0)
    sp.add_argument("--occluded-per-person", type=int, default=None)
    sp.add_argument("--noise", type=float, default=0.5, help="offset noise sigma (cells)")
    sp.add_argument("--peak-sigma", type=float, default=1.5)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("oracle", help="DP versus brute-force suite")
    sp.add_argument("--json", action="store_true")
    sp.add_argument("--instances", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-joints", type=int, default=CAP_JOINTS)
    sp.add_argument("--max-grid", type=int, default=CAP_GRID)
    sp.add_argument("--max-types", type=int, default=CAP_TYPES)
    sp.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (InputError, CMFError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
