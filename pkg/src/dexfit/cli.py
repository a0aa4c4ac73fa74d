"""Command line entry point: ``dexfit <command> ...``.

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.
Machine-readable JSON goes to stdout (or ``--out``); logs go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .biomech import filter_body_frame, load_rom, rectify_hand_frame
from .body_model import Camera, skin_vertices
from .errors import NumericalError, ValidationError
from .fitting import FitWeights, Priors, fit_sequence
from .lbfgs import LbfgsSettings
from .metrics import RegionSpec, mpjpe, mpvpe, tr_v2v
from .penetration import default_proxies
from .priors import PriorConfig, load_model, save_model, to_right_frame, train

log = logging.getLogger("dexfit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def thread_count():
    raw = os.environ.get("DEXFIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"DEXFIT_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def map_frames(fn, items):
    """Order-preserving map over frames, parallel up to DEXFIT_THREADS."""
    items = list(items)
    n = thread_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _emit(payload, out=None):
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=1)
    if out:
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


# ------------------------------------------------------------------ commands


def cmd_filter(args):
    tpl = io.template_or_default(args.template)
    rom = load_rom(args.rom)
    idx, poses = io.load_poses(args.poses)
    results = map_frames(lambda p: filter_body_frame(p, rom, None, tpl), poses)
    lines = [json.dumps(r.to_record(i)) for i, r in zip(idx, results)]
    _emit("\n".join(lines), args.out)
    log.info("%d of %d frames accepted", sum(r.accepted for r in results), len(results))


def cmd_rectify(args):
    rom = load_rom(args.rom)
    idx, poses = io.load_poses(args.poses)

    def fix(p):
        q = p.copy()
        q.left_hand_pose = rectify_hand_frame(p.left_hand_pose, rom, "left")
        q.right_hand_pose = rectify_hand_frame(p.right_hand_pose, rom, "right")
        return q

    fixed = map_frames(fix, poses)
    io.save_poses(args.out, fixed, idx)
    for i, p, q in zip(idx, poses, fixed):
        changed = int(np.sum(np.any(p.left_hand_pose != q.left_hand_pose, axis=1))
                      + np.sum(np.any(p.right_hand_pose != q.right_hand_pose, axis=1)))
        sys.stdout.write(json.dumps({"index": i, "changed_joints": changed}) + "\n")


def _training_data(kind, poses):
    if kind == "body":
        return np.stack([p.body_pose for p in poses])
    hands = [to_right_frame(p.left_hand_pose, "left") for p in poses]
    hands += [p.right_hand_pose for p in poses]
    return np.stack(hands)


def cmd_train_prior(args):
    tpl = io.template_or_default(args.template)
    rom = load_rom(args.rom)
    overrides = io.load_json_config(args.config)
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        cfg = PriorConfig.body(**overrides) if args.kind == "body" else PriorConfig.hand(**overrides)
    except TypeError as exc:
        raise ValidationError(f"bad prior config: {exc}") from None
    idx, poses = io.load_poses(args.data)
    data = _training_data(args.kind, poses)
    seq = None
    if args.sequence_length:
        seq = np.arange(len(data)) // args.sequence_length
    result = train(cfg, data, tpl, rom, sequence_ids=seq, log=log.info)
    save_model(result.model, args.out)
    _emit({"model": str(args.out), "steps": result.steps, "final_loss": result.curve[-1]["total"]})


def _fit_weights(path):
    d = io.load_json_config(path)
    lb = d.pop("lbfgs", None)
    try:
        w = FitWeights(**d)
        if lb:
            w.lbfgs = LbfgsSettings(**lb)
    except TypeError as exc:
        raise ValidationError(f"bad weights file: {exc}") from None
    return w


def cmd_fit(args):
    tpl = io.template_or_default(args.template)
    rom = load_rom(args.rom)
    frames = io.load_keypoints(args.keypoints)
    idx, inits = io.load_poses(args.init)
    if len(inits) == 1:
        inits = inits * len(frames)
    camera = io.load_camera(args.camera)
    priors = Priors(load_model(args.body_prior), load_model(args.hand_prior))
    results = fit_sequence(frames, tpl, camera, priors, rom, default_proxies(tpl), _fit_weights(args.weights), inits)
    io.save_fit_results(args.out, results, {"keypoints": str(args.keypoints)})
    failed = [r.index for r in results if r.error]
    _emit({"out": str(args.out), "frames": len(results), "failed": failed,
           "converged": sum(r.converged for r in results)})
    if failed and len(failed) == len(results):
        raise NumericalError("every frame failed to fit")


METRICS = {"tr_v2v": tr_v2v, "mpvpe": mpvpe, "mpjpe": mpjpe}


def cmd_eval(args):
    tpl = io.template_or_default(args.template)
    pi, pred = io.load_poses(args.pred)
    gi, gt = io.load_poses(args.gt)
    common = sorted(set(pi) & set(gi))
    if not common:
        raise ValidationError("prediction and ground truth share no frame indices")
    regions = [RegionSpec.from_template(tpl, r.strip()) for r in args.regions.split(",") if r.strip()]
    if not regions:
        raise ValidationError("no regions given")
    pmap, gmap = dict(zip(pi, pred)), dict(zip(gi, gt))
    fn = METRICS[args.metric]

    def per_frame(i):
        if args.metric == "mpjpe":
            from .body_model import forward_kinematics
            a, b = forward_kinematics(tpl, pmap[i])[0], forward_kinematics(tpl, gmap[i])[0]
        else:
            a, b = skin_vertices(tpl, pmap[i]), skin_vertices(tpl, gmap[i])
        return {r.name: float(fn(a, b, r)) for r in regions}

    rows = map_frames(per_frame, common)
    _emit({
        "schema_version": io.SCHEMA_VERSION,
        "metric": args.metric,
        "units": "mm",
        "translation_removal": "per-region centroid" if args.metric == "tr_v2v" else "none",
        "frames": len(common),
        "regions": {r.name: float(np.mean([row[r.name] for row in rows])) for r in regions},
        "per_frame": [{"index": i, **row} for i, row in zip(common, rows)],
    }, args.out)


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    res = run_suite(args.samples, args.seed)
    worst = max(res.values())
    _emit({"samples": args.samples, "max_relative_error": res, "worst": worst, "passed": worst < args.tol})
    if worst >= args.tol:
        raise NumericalError(f"gradient check failed: worst relative error {worst:.3e}")


def cmd_synth(args):
    from .synth import GeneratorConfig, perturb_pose, synth_sequence

    tpl = io.template_or_default(args.template)
    rom = load_rom(args.rom)
    camera = Camera.default_front()
    cfg = GeneratorConfig(n_frames=args.frames, mode=args.mode, handedness=args.handedness,
                          noise_px=args.noise_px, confidence_min=args.confidence_min, dropout=args.dropout)
    priors = None
    if args.mode == "prior":
        if not (args.body_prior and args.hand_prior):
            raise ValidationError("--mode prior needs --body-prior and --hand-prior")
        priors = (load_model(args.body_prior), load_model(args.hand_prior))
    gt, frames = synth_sequence(tpl, camera, rom, cfg, args.seed, default_proxies(tpl), priors)
    rng = np.random.default_rng(args.seed + 1)
    inits = [perturb_pose(g, rng, args.init_noise, args.init_noise, args.init_noise / 2) for g in gt]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.save_poses(out / "gt.json", gt)
    io.save_poses(out / "init.json", inits)
    io.save_keypoints(out / "keypoints.json", frames)
    io.save_camera(out / "camera.json", camera)
    _emit({"out_dir": str(out), "frames": len(gt), "files": ["gt.json", "init.json", "keypoints.json", "camera.json"]})


# -------------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="dexfit", description="Sign-language hand and body pose fitting toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, rom=True):
        sp.add_argument("--template", help="template JSON (default: built-in toy template)")
        if rom:
            sp.add_argument("--rom", help="range-of-motion JSON (default: bundled table)")

    sp = sub.add_parser("filter", help="accept/reject body frames against ROM and signer space")
    sp.add_argument("--poses", required=True, help="pose file")
    sp.add_argument("--out", help="JSON-lines output (default stdout)")
    common(sp)
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("rectify", help="clamp hand poses into their ROM boxes")
    sp.add_argument("--poses", required=True)
    sp.add_argument("--out", required=True, help="rectified pose file")
    sp.add_argument("--rom")
    sp.set_defaults(func=cmd_rectify)

    sp = sub.add_parser("train-prior", help="train a body or hand VAE prior")
    sp.add_argument("--kind", choices=("body", "hand"), required=True)
    sp.add_argument("--data", required=True, help="pose file with training frames")
    sp.add_argument("--config", help="JSON object of PriorConfig overrides")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--sequence-length", type=int, default=0,
                    help="frames per sequence for the 90/5/5 split (0 = train on everything)")
    sp.add_argument("--out", required=True, help="model file (.npz)")
    common(sp)
    sp.set_defaults(func=cmd_train_prior)

    sp = sub.add_parser("fit", help="fit poses to a keypoint sequence")
    for name in ("keypoints", "init", "camera", "body-prior", "hand-prior", "out"):
        sp.add_argument(f"--{name}", required=True)
    sp.add_argument("--weights", help="JSON object of FitWeights overrides")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("eval", help="compare predicted and ground-truth poses")
    sp.add_argument("--pred", required=True, help="pose or fit-result file")
    sp.add_argument("--gt", required=True, help="pose file")
    sp.add_argument("--regions", default="ubody-f,lhand,rhand")
    sp.add_argument("--metric", choices=sorted(METRICS), default="tr_v2v")
    sp.add_argument("--out")
    common(sp, rom=False)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every autodiff primitive")
    sp.add_argument("--samples", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-5)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("synth", help="write a synthetic keypoint sequence with ground truth")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--frames", type=int, default=30)
    sp.add_argument("--mode", choices=("random_walk", "prior"), default="random_walk")
    sp.add_argument("--handedness", default="two-handed")
    sp.add_argument("--noise-px", type=float, default=0.0)
    sp.add_argument("--confidence-min", type=float, default=1.0)
    sp.add_argument("--dropout", type=float, default=0.0)
    sp.add_argument("--init-noise", type=float, default=0.05, help="radians of noise on the init poses")
    sp.add_argument("--body-prior")
    sp.add_argument("--hand-prior")
    sp.add_argument("--seed", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors exit 1, --help exits 0
        return exc.code if isinstance(exc.code, int) else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        log.error("%s", exc)
        return 1
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
