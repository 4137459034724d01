"""``stereopose`` command-line entry point.

Configuration is layered: parser defaults < ``--config`` file (``key = value``
lines naming long options of the chosen subcommand) < explicit flags.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diffnet import NetConfig, VARIANTS, build_network, read_checkpoint, write_checkpoint
from .errors import CorruptDataset, InvalidConfig, NumericError, StereoPoseError, UsageError
from .estimator import Estimator
from .geometry import DEFAULT_RIG, load_rig, project_right, uvd_to_xyz
from .protocol import (NetworkPredictor, OraclePredictor, TrainConfig, bench_fps, count_macs,
                       eval_frame, eval_track, format_fps, format_macs, jitter_init, train_joint,
                       train_stage_2d, train_stage_3d)
from .roi import CropInit, crop, denormalize, init_from_joints
from .synthdata import (default_skeleton, generate_dataset, generate_sequence, load_backgrounds,
                        read_dataset, read_ppm, read_tracks, write_dataset, write_ppm)

log = logging.getLogger("stereopose")

SEED_ENV = "STEREOPOSE_SEED"
GT_COLOR = (1.0, 0.0, 0.0)
PRED_COLOR = (0.0, 1.0, 0.0)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- config plumbing ---------------------------------------------------------

def parse_config_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or not key:
            raise InvalidConfig(f"{path}:{lineno}: expected 'key = value'")
        values[key.replace("-", "_")] = value
    return values


def sidecar(checkpoint) -> Path:
    return Path(str(checkpoint) + ".cfg")


def resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def net_config(args) -> NetConfig:
    cfg = NetConfig.from_variant(args.variant, net_w=args.net_size, net_h=args.net_size,
                                 base_channels=args.base_channels, num_stacks=args.stacks)
    cfg.validate()
    return cfg


def load_model(checkpoint, mode: str, decoder: str = "argmax") -> Estimator:
    cfg_path = sidecar(checkpoint)
    try:
        cfg = NetConfig.from_text(cfg_path.read_text())
    except OSError as exc:
        raise InvalidConfig(f"missing network config {cfg_path}: {exc}") from exc
    _, net = build_network(cfg, 0)
    store = read_checkpoint(checkpoint)
    fresh, _ = build_network(cfg, 0)
    if store.names() != fresh.names() or any(store[n].shape != fresh[n].shape for n in fresh.names()):
        raise InvalidConfig(f"checkpoint {checkpoint} does not match its network config")
    return Estimator(cfg, store, net, mode=mode, decoder=decoder)


def save_model(est: Estimator, path) -> None:
    write_checkpoint(est.store, path)
    sidecar(path).write_text(est.cfg.to_text())


def load_sequences(directory, samples):
    by_id = {s.sample_id: s for s in samples}
    try:
        return [[by_id[i] for i in ids] for ids in read_tracks(directory)]
    except KeyError as exc:
        raise CorruptDataset(f"tracks.csv refers to a missing sample {exc.args[0]}") from exc


# -- commands ----------------------------------------------------------------

def cmd_synth(args, seed):
    rig = load_rig(args.rig) if args.rig else DEFAULT_RIG
    backgrounds = load_backgrounds(args.backgrounds, rig) if args.backgrounds else None
    samples = generate_dataset(args.count, seed, rig, start_id=args.start_id,
                               threads=args.threads, backgrounds=backgrounds) if args.count else []
    tracks = None
    if args.sequences:
        tracks = []
        next_id = args.start_id + args.count
        for k in range(args.sequences):
            seq = generate_sequence(seed, args.frames, rig, start_id=next_id,
                                    max_translation=args.step_mm, backgrounds=backgrounds)
            samples.extend(seq)
            tracks.append([s.sample_id for s in seq])
            next_id += args.frames
    if not samples:
        raise UsageError("nothing to generate: --count and --sequences are both zero")
    write_dataset(samples, args.out, tracks)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args, seed):
    samples = read_dataset(args.data)
    val = read_dataset(args.val) if args.val else None
    if args.init:
        est = load_model(args.init, args.mode)
    else:
        cfg = net_config(args)
        store, net = build_network(cfg, seed)
        est = Estimator(cfg, store, net, mode=args.mode)
    if args.mode == "direct2d":
        raise UsageError("train --mode must be stereo or mono")
    tc = TrainConfig(batch_size=args.batch_size, epochs=args.epochs, lr=args.lr,
                     lr_factor=args.lr_factor, lr_every=args.lr_every, sigma=args.sigma,
                     sigma_d=args.sigma_d, delta=args.delta, seed=seed, protocol=args.protocol,
                     threads=args.threads)
    stages = {"2d": [("2d", args.epochs)], "3d": [("3d", args.epochs)],
              "joint": [("joint", args.epochs)],
              "both": [("2d", args.epochs), ("3d", args.epochs_3d or args.epochs)]}[args.stage]
    runners = {"2d": train_stage_2d, "3d": train_stage_3d, "joint": train_joint}
    lines = ["stage epoch lr train_loss val_loss"]
    for stage, epochs in stages:
        result = runners[stage](samples, est, tc, val, epochs)
        for h in result.history:
            lr = "-" if h["lr"] is None else f"{h['lr']:.6g}"
            tl = "-" if h["train_loss"] is None else f"{h['train_loss']:.6f}"
            vl = "-" if h["val_loss"] is None else f"{h['val_loss']:.6f}"
            lines.append(f"{stage} {h['epoch']} {lr} {tl} {vl}")
    est.store.unfreeze("h_f/", "h_uv/", "h_D/")
    save_model(est, args.out)
    if args.log:
        Path(args.log).write_text("\n".join(lines) + "\n")
    print(f"saved checkpoint {args.out}")
    return 0


def cmd_eval(args, seed):
    samples = read_dataset(args.data)
    if args.oracle:
        net_w = net_h = args.net_size
        predictor = OraclePredictor(net_w, net_h)
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --checkpoint or --oracle")
        est = load_model(args.checkpoint, args.mode, args.decoder)
        net_w, net_h = est.cfg.net_w, est.cfg.net_h
        predictor = NetworkPredictor(est)
    if args.protocol == "frame":
        report = eval_frame(samples, predictor, net_w, net_h, penalty=args.penalty)
    else:
        sequences = load_sequences(args.data, samples)
        first = None
        if args.perturb_first:
            rng = np.random.default_rng([seed, 0xF1])
            first = lambda init, k: jitter_init(init, rng)   # noqa: E731
        report = eval_track(sequences, predictor, net_w, net_h, penalty=args.penalty,
                            threshold=args.threshold, first_init=first)
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    if args.records:
        Path(args.records).write_text(report.to_records())
    return 0


def _read_gt(path, sample_id):
    rows = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = [p.strip() for p in line.split(",")]
        if not line.strip() or parts[0] == "id":
            continue
        if len(parts) != 5:
            raise CorruptDataset(f"{path} line {lineno}: expected id,j,u,v,d")
        rows.setdefault(int(parts[0]), {})[int(parts[1])] = [float(x) for x in parts[2:]]
    if sample_id is None:
        if len(rows) != 1:
            raise UsageError(f"{path} holds {len(rows)} samples; pick one with --id")
        sample_id = next(iter(rows))
    if sample_id not in rows:
        raise CorruptDataset(f"no annotations for sample {sample_id}", sample_id)
    joints = rows[sample_id]
    return np.array([joints[j] for j in sorted(joints)])


def _parse_box(text) -> CropInit:
    try:
        values = [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"--box expects u0,v0,w0,h0,d0, got {text!r}") from None
    if len(values) != 5:
        raise UsageError(f"--box expects 5 numbers, got {len(values)}")
    try:
        return CropInit(*values)
    except ValueError as exc:
        raise UsageError(f"--box: {exc}") from None


def _infer_one(est, left, right, init):
    cfg = est.cfg
    lc = crop(left, init, cfg.net_w, cfg.net_h)
    rc = crop(right, init.shifted_right_box(), cfg.net_w, cfg.net_h)
    return denormalize(est.predict(lc, rc), init, cfg.net_w, cfg.net_h)


def cmd_infer(args, seed):
    if (args.gt is None) == (args.box is None):
        raise UsageError("infer needs exactly one of --gt or --box")
    rig = load_rig(args.rig) if args.rig else DEFAULT_RIG
    try:
        left, right = read_ppm(args.left), read_ppm(args.right)
    except (OSError, ValueError) as exc:
        raise CorruptDataset(f"cannot read input image: {exc}") from exc
    init = init_from_joints(_read_gt(args.gt, args.id)) if args.gt else _parse_box(args.box)
    est = load_model(args.checkpoint, args.mode, args.decoder)
    pred = _infer_one(est, left, right, init)
    bad = pred[:, 2] <= 0
    xyz = np.full_like(pred, np.nan)
    if (~bad).any():
        xyz[~bad] = uvd_to_xyz(rig, pred[~bad])
    print("j,u,v,d,x,y,z")
    for j, (p, q) in enumerate(zip(pred, xyz)):
        print(f"{j},{p[0]:.6f},{p[1]:.6f},{p[2]:.6f},{q[0]:.6f},{q[1]:.6f},{q[2]:.6f}")
    if bad.any():
        raise NumericError(f"{int(bad.sum())} joints have non-positive predicted disparity")
    return 0


def cmd_bench(args, seed):
    configs = [NetConfig.from_variant(v, net_w=args.net_size, net_h=args.net_size,
                                      base_channels=args.base_channels, num_stacks=args.stacks)
               for v in args.variants]
    for c in configs:
        c.validate()
    sys.stdout.write(format_macs([count_macs(c) for c in configs]))
    sys.stdout.write(format_fps(bench_fps(configs, args.views, args.repetitions, args.burn_in, seed)))
    return 0


def draw_line(image, p, q, color):
    n = int(max(abs(q[0] - p[0]), abs(q[1] - p[1]))) + 1
    us = np.rint(np.linspace(p[0], q[0], n)).astype(int)
    vs = np.rint(np.linspace(p[1], q[1], n)).astype(int)
    ok = (us >= 0) & (us < image.shape[1]) & (vs >= 0) & (vs < image.shape[0])
    image[vs[ok], us[ok]] = color


def draw_dot(image, p, color, radius=2):
    h, w = image.shape[:2]
    cu, cv = int(round(p[0])), int(round(p[1]))
    for dv in range(-radius, radius + 1):
        for du in range(-radius, radius + 1):
            if du * du + dv * dv <= radius * radius and 0 <= cu + du < w and 0 <= cv + dv < h:
                image[cv + dv, cu + du] = color


def draw_pose(image, uv, color):
    parents = default_skeleton().parents
    for k, p in enumerate(parents):
        if p >= 0:
            draw_line(image, uv[p], uv[k], color)
    for point in uv:
        draw_dot(image, point, color)


def cmd_overlay(args, seed):
    samples = {s.sample_id: s for s in read_dataset(args.data)}
    if args.id not in samples:
        raise CorruptDataset(f"no such sample in {args.data}", args.id)
    s = samples[args.id]
    if (args.checkpoint is None) == (args.pred is None):
        raise UsageError("overlay needs exactly one of --checkpoint or --pred")
    if args.pred:
        rows = [line.split(",") for line in Path(args.pred).read_text().splitlines()
                if line.strip() and not line.startswith("j")]
        pred = np.array([[float(r[1]), float(r[2]), float(r[3])] for r in rows])
    else:
        est = load_model(args.checkpoint, args.mode)
        pred = _infer_one(est, s.left, s.right, init_from_joints(s.gt))
    outputs = []
    for view, image in (("l", s.left), ("r", s.right)):
        canvas = np.array(image, dtype=np.float32)
        gt_uv, pr_uv = s.gt[:, :2], pred[:, :2]
        if view == "r":
            gt_uv, pr_uv = project_right(s.rig, s.gt), project_right(s.rig, pred)
        draw_pose(canvas, gt_uv, GT_COLOR)
        draw_pose(canvas, pr_uv, PRED_COLOR)
        path = f"{args.out}_{view}.ppm"
        write_ppm(path, canvas)
        outputs.append(path)
    print("wrote " + " ".join(outputs))
    return 0


def cmd_selfcheck(args, seed):
    from .selfcheck import run_selfcheck
    results = run_selfcheck(seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else NumericError.exit_code


# -- parser --------------------------------------------------------------------

def _add_net_flags(p):
    p.add_argument("--variant", choices=VARIANTS, default="D4S4")
    p.add_argument("--net-size", type=int, default=64, help="square network input size")
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--stacks", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"random seed (falls back to ${SEED_ENV}, then 0)")
    common.add_argument("--threads", type=int, default=1, help="worker cap (default 1)")
    common.add_argument("--config", default=None, help="key = value file of option defaults")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="stereopose", description="3-D hand pose from rectified stereo pairs")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100, help="independent frames")
    p.add_argument("--sequences", type=int, default=0, help="tracking sequences")
    p.add_argument("--frames", type=int, default=20, help="frames per sequence")
    p.add_argument("--step-mm", type=float, default=8.0, help="max wrist step per frame")
    p.add_argument("--start-id", type=int, default=0)
    p.add_argument("--rig", default=None, help="rig.cfg to use instead of the default rig")
    p.add_argument("--backgrounds", default=None,
                   help="directory of NAME_l.ppm / NAME_r.ppm background pairs")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--val", default=None)
    p.add_argument("--out", required=True, help="checkpoint path (config goes to PATH.cfg)")
    p.add_argument("--init", default=None, help="checkpoint to resume from")
    p.add_argument("--stage", choices=("2d", "3d", "both", "joint"), default="both")
    p.add_argument("--protocol", choices=("frame", "track"), default="frame")
    p.add_argument("--mode", choices=("stereo", "mono"), default="stereo")
    _add_net_flags(p)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--epochs-3d", type=int, default=None, help="3-D stage epochs for --stage both")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--lr-factor", type=float, default=0.3)
    p.add_argument("--lr-every", type=int, default=30)
    p.add_argument("--sigma", type=float, default=3.0, help="heatmap target width in cells")
    p.add_argument("--sigma-d", type=float, default=None,
                   help="disparity target width in map cells (default: same width as --sigma)")
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--log", default=None, help="write per-epoch loss records here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a model")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--oracle", action="store_true", help="echo ground truth instead of a model")
    p.add_argument("--net-size", type=int, default=64, help="crop size for --oracle")
    p.add_argument("--protocol", choices=("frame", "track"), default="frame")
    p.add_argument("--mode", choices=("stereo", "mono", "direct2d"), default="stereo")
    p.add_argument("--decoder", choices=("argmax", "soft"), default="argmax")
    p.add_argument("--perturb-first", action="store_true", help="jitter each track's first box")
    p.add_argument("--penalty", type=float, default=1000.0, help="mm charged per invalid joint")
    p.add_argument("--threshold", type=float, default=100.0, help="divergence threshold in mm")
    p.add_argument("--out", default=None, help="also write the text report here")
    p.add_argument("--records", default=None, help="write per-frame records here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", parents=[common], help="estimate the pose in one stereo pair")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gt", default=None, help="annotations file to build the crop from")
    p.add_argument("--id", type=int, default=None, help="sample id within --gt")
    p.add_argument("--box", default=None, help="explicit crop u0,v0,w0,h0,d0")
    p.add_argument("--rig", default=None)
    p.add_argument("--mode", choices=("stereo", "mono", "direct2d"), default="stereo")
    p.add_argument("--decoder", choices=("argmax", "soft"), default="argmax")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", parents=[common], help="timing and MAC counts per variant")
    p.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    p.add_argument("--views", nargs="+", choices=("mono", "stereo"), default=["mono", "stereo"])
    p.add_argument("--repetitions", type=int, default=20)
    p.add_argument("--burn-in", type=int, default=5)
    p.add_argument("--net-size", type=int, default=64)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--stacks", type=int, default=2)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("overlay", parents=[common], help="draw ground truth and prediction")
    p.add_argument("--data", required=True)
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--pred", default=None, help="records written by infer")
    p.add_argument("--mode", choices=("stereo", "mono", "direct2d"), default="stereo")
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX_l.ppm, PREFIX_r.ppm")
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("selfcheck", parents=[common], help="run built-in numeric checks")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = parse_config_file(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in subparser._actions}
        for key in values:
            if key not in known or key in ("help", "config", "func"):
                raise InvalidConfig(f"unknown option {key!r} in {args.config}")
        defaults = {}
        for key, raw in values.items():
            action = known[key]
            try:
                if action.nargs in ("+", "*"):
                    value = [action.type(x) if action.type else x for x in raw.split()]
                elif action.const is True and action.nargs == 0:
                    value = raw.lower() in ("1", "true", "yes", "on")
                else:
                    value = action.type(raw) if action.type else raw
            except ValueError:
                raise InvalidConfig(f"bad value {raw!r} for {key!r} in {args.config}") from None
            choices = action.choices
            for v in value if isinstance(value, list) else [value]:
                if choices is not None and v not in choices:
                    raise InvalidConfig(f"{key} must be one of {list(choices)}, got {v!r}")
            defaults[key] = value
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s", stream=sys.stderr)
        return args.func(args, resolve_seed(args))
    except StereoPoseError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return UsageError.exit_code if isinstance(exc, ValueError) else NumericError.exit_code


if __name__ == "__main__":
    sys.exit(main())
