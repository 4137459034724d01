"""The fourteen acceptance criteria, each reported as one PASS/FAIL line.

Training-based criteria (8, 9, 11) share one synthetic toy set and one
two-stage model; the heavy fixtures are module scoped so the suite trains
each model once.
"""

import time

import numpy as np
import pytest

from stereopose.cli import main
from stereopose.diffnet import (NetConfig, ParamStore, Tensor, build_network, load_checkpoint, ops,
                                save_checkpoint)
from stereopose.diffnet.gradcheck import check_gradients
from stereopose.diffnet.network import VARIANTS
from stereopose.errors import CorruptCheckpoint, IllegalAugmentation
from stereopose.estimator import (Estimator, loss_d, loss_uv, make_heatmap_target,
                                  sample_disparity)
from stereopose.geometry import DEFAULT_RIG, uvd_to_xyz, xyz_to_uvd
from stereopose.protocol import (AugPolicy, NetworkPredictor, OraclePredictor, TrainConfig,
                                 augment, bench_fps, count_macs, eval_frame, eval_track,
                                 format_fps, jitter_init, train_joint, train_stage_2d,
                                 train_stage_3d)
from stereopose.protocol.augment import ROTATE_DEG, SCALE, SHIFT_D, SHIFT_UV
from stereopose.protocol.training import make_batch
from stereopose.roi import CropInit, denormalize, init_from_joints, normalize_labels
from stereopose.synthdata import (generate_dataset, generate_sequence, read_dataset,
                                  write_dataset)

# Toy recipe shared by criteria 8, 9 and 11.
TRAIN_COUNT, VAL_COUNT = 600, 100
SEQUENCES, SEQ_FRAMES = 12, 15
EPOCHS_2D, EPOCHS_3D = 50, 25
STAGE_2D = dict(lr=2e-3, sigma=1.5, lr_every=35)
STAGE_3D = dict(lr=3e-3, sigma=1.5, sigma_d=0.3, lr_every=17)
NET = NetConfig()            # D4S4, 64x64 input, 2 stacks, 16 base channels

TABLE_1 = {
    ("2d", "frame"): (True, False, False, True),
    ("2d", "track"): (True, True, False, True),
    ("3d", "frame"): (False, False, False, True),
    ("3d", "track"): (False, False, True, True),
}


# -- 1-7: numeric identities ---------------------------------------------------

def test_c01_geometry_round_trip(criterion):
    rng = np.random.default_rng(1)
    uvd = np.c_[rng.uniform(0, 320, 10_000), rng.uniform(0, 240, 10_000),
                rng.uniform(1, 200, 10_000)]
    t0 = time.perf_counter()
    back = xyz_to_uvd(DEFAULT_RIG, uvd_to_xyz(DEFAULT_RIG, uvd))
    elapsed = time.perf_counter() - t0
    err = np.abs(back - uvd).max()
    criterion(1, "geometry round trip", err < 1e-9 and elapsed < 1.0,
              f"max abs error {err:.3g}, {elapsed * 1e3:.1f} ms")


def test_c02_crop_normalisation_round_trip(criterion):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10_000):
        w0 = rng.uniform(20, 300)
        init = CropInit(rng.uniform(-50, 300), rng.uniform(-50, 200), w0, w0, rng.uniform(1, 120))
        lab = np.c_[rng.uniform(-16, 80, (21, 2)), rng.uniform(-20, 20, 21)]
        back = normalize_labels(denormalize(lab, init, 64, 64), init, 64, 64)
        worst = max(worst, np.abs(back - lab).max())
    criterion(2, "normalisation round trip", worst < 1e-12, f"max abs error {worst:.3g}")


def _brute_sample(dmap, u, v, stride):
    hd, wd = dmap.shape
    x, y = np.clip(u / stride, 0, wd - 1), np.clip(v / stride, 0, hd - 1)
    total = 0.0
    for m in range(hd):
        for n in range(wd):
            total += dmap[m, n] * max(0.0, 1 - abs(n - x)) * max(0.0, 1 - abs(m - y))
    return total


def test_c03_sparse_sampling_oracle(criterion):
    rng = np.random.default_rng(3)
    worst, clamped = 0.0, 0
    for _ in range(1000):
        stride = int(rng.choice([4, 8]))
        hd, wd = rng.integers(2, 12, 2)
        dmap = rng.standard_normal((hd, wd))
        # most queries fall outside the grid on some axis and must clamp
        u = rng.uniform(-0.5, 1.5) * wd * stride
        v = rng.uniform(-0.5, 1.5) * hd * stride
        clamped += not (0 <= u / stride <= wd - 1 and 0 <= v / stride <= hd - 1)
        got = float(sample_disparity(dmap, np.array([u]), np.array([v]), stride)[0])
        worst = max(worst, abs(got - _brute_sample(dmap, u, v, stride)))
    criterion(3, "sparse disparity sampling oracle", worst < 1e-12 and clamped > 100,
              f"max abs error {worst:.3g}, {clamped} clamped queries")


def test_c04_heatmap_normalisation(criterion):
    rng = np.random.default_rng(4)
    lab = np.c_[rng.uniform(0, 64, (1000, 2)), np.zeros(1000)]
    t = make_heatmap_target(lab, (16, 16), 4, 1.5, normalized=True)
    mass_err = np.abs(t.maps.sum(axis=(-2, -1)) - 1).max()
    # argmax at the nearest cell
    flat = t.maps.reshape(1000, -1).argmax(axis=1)
    near = np.clip(np.c_[np.rint(lab[:, 1] / 4), np.rint(lab[:, 0] / 4)], 0, 15)
    ties = (np.abs(lab[:, :2] / 4 % 1 - 0.5) < 1e-9).any(axis=1)
    argmax_ok = np.all((np.c_[flat // 16, flat % 16] == near).all(axis=1) | ties)
    # cells mirrored about a joint on a cell centre carry equal weight
    sym = make_heatmap_target(np.array([[28.0, 32.0, 0.0]]), (16, 16), 4, 1.5, True).maps[0]
    m0, n0 = 8, 7
    pairs = [((m0 + a, n0 + b), (m0 - a, n0 - b)) for a in range(-3, 4) for b in range(-3, 4)]
    pairs += [((m0 + a, n0 + b), (m0 + b, n0 + a)) for a in range(-3, 4) for b in range(-3, 4)]
    sym_err = max(abs(sym[p] - sym[q]) for p, q in pairs)
    ok = mass_err < 1e-9 and argmax_ok and sym_err == 0
    criterion(4, "heatmap target normalisation", ok,
              f"mass error {mass_err:.3g}, argmax ok {argmax_ok}, symmetry error {sym_err:.3g}")


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < gap, np.where(x < 0, -gap, gap), x)


def test_c05_gradient_suite(criterion):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    t_fix = rng.standard_normal((2, 3, 4, 4))
    w_fix = rng.random((2, 5, 4, 6))
    qx = rng.uniform(0.1, 4.9, (2, 7))
    qy = rng.uniform(0.1, 3.9, (2, 7))
    qx = np.where(np.abs(qx - np.rint(qx)) < 0.02, qx + 0.05, qx)
    qy = np.where(np.abs(qy - np.rint(qy)) < 0.02, qy + 0.05, qy)
    checks = {
        "conv2d": (lambda x, w, b: ops.conv2d(x, w, b, stride=1),
                   [rng.standard_normal((2, 3, 7, 6)), rng.standard_normal((4, 3, 3, 3)),
                    rng.standard_normal(4)]),
        "conv2d_stride2": (lambda x, w, b: ops.conv2d(x, w, b, stride=2),
                           [rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((4, 3, 3, 3)),
                            rng.standard_normal(4)]),
        "relu": (ops.relu, [_away_from_zero(rng, (2, 3, 4, 4))]),
        "add": (ops.add, [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))]),
        "scale": (lambda x: ops.scale(x, -1.7), [rng.standard_normal((3, 4))]),
        "reshape": (lambda x: ops.reshape(x, (4, 6)), [rng.standard_normal((2, 3, 4))]),
        "maxpool2": (ops.maxpool2, [rng.permutation(96).reshape(2, 3, 4, 4) / 7.0]),
        "upsample2": (ops.upsample2_nearest, [rng.standard_normal((2, 3, 3, 4))]),
        "concat": (lambda a, b: ops.concat_channels([a, b]),
                   [rng.standard_normal((2, 2, 3, 3)), rng.standard_normal((2, 4, 3, 3))]),
        "mse": (lambda p: ops.mse(p, t_fix), [rng.standard_normal((2, 3, 4, 4))]),
        "expectation": (lambda d: ops.expectation(d, w_fix), [rng.standard_normal((2, 4, 6))]),
        "huber_mean": (lambda p: ops.huber_mean(p, np.zeros((1, 4)), 1.0),
                       [np.array([[0.3, -0.6, 2.5, -4.0]])]),
        "bilinear_sample": (ops.bilinear_sample, [rng.standard_normal((2, 5, 6)), qx, qy]),
        "total": (lambda a, b: ops.total([a, b]),
                  [rng.standard_normal(()), rng.standard_normal(())]),
    }
    worst = {}
    for name, (fn, inputs) in checks.items():
        worst[name] = check_gradients(fn, inputs, rng).max_rel_error

    store32, net = build_network(NET, 3)
    store = store32.copy(np.float64)
    left, right = rng.random((1, 3, 64, 64)) - 0.5, rng.random((1, 3, 64, 64)) - 0.5
    labels = np.c_[rng.uniform(4, 60, (21, 2)), rng.uniform(-2, 2, 21)][None]
    t_uv = make_heatmap_target(labels, NET.heatmap_shape, 4, 1.5, normalized=False)
    t_d = make_heatmap_target(labels, NET.disparity_shape, 4, 1.5, normalized=True)
    names = store.names()

    def composed(*values):
        p = dict(zip(names, values))
        f_l, f_r = net.h_f(p, Tensor(left)), net.h_f(p, Tensor(right))
        dmap = net.h_D(p, ops.concat_channels([f_l, f_r]))
        return ops.add(loss_uv(net.h_uv(p, f_l), t_uv), loss_d(dmap, labels, t_d))

    picks = sorted(rng.choice(len(names), size=12, replace=False))
    worst["D4S4 L_uv+L_d"] = check_gradients(composed, [store[n].data for n in names], rng,
                                             coords=5, wrt=picks).max_rel_error
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    criterion(5, "gradient suite (float64)", not bad and elapsed < 300,
              f"{len(worst)} checks, worst {max(worst.values()):.3g}, {elapsed:.0f} s"
              + (f", failing {sorted(bad)}" if bad else ""))


def test_c06_loss_identities(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(200):
        lab = np.c_[rng.uniform(0, 64, (21, 2)), rng.uniform(-5, 5, 21)]
        t = make_heatmap_target(lab, (16, 16), 4, rng.uniform(0.3, 3), normalized=True)
        c = rng.uniform(-3, 3)
        got = float(loss_d(Tensor(np.full((16, 16), c)), lab, t).data)
        worst = max(worst, abs(got - ops.huber(lab[:, 2] - c, 1.0).mean()))
    h = ops.huber(np.array([0.5, 2.0]), 1.0)
    ok = worst < 1e-12 and h[0] == 0.125 and h[1] == 1.5
    criterion(6, "loss identities", ok,
              f"constant-map error {worst:.3g}, Huber(0.5)={h[0]:g}, Huber(2)={h[1]:g}")


def test_c07_oracle_decomposition(criterion, toy):
    rep = eval_frame(toy["val"], OraclePredictor(64, 64), 64, 64)
    criterion(7, "oracle through crop/denormalise/back-project", rep.mean_error < 1e-9,
              f"mean error {rep.mean_error:.3g} mm over {rep.frames} frames")


# -- 8, 9, 11: toy training ----------------------------------------------------

@pytest.fixture(scope="module")
def toy():
    t0 = time.perf_counter()
    train = generate_dataset(TRAIN_COUNT, seed=101)
    val = generate_dataset(VAL_COUNT, seed=202, start_id=100_000)
    seqs = [generate_sequence(303, SEQ_FRAMES, start_id=200_000 + 100 * k) for k in range(SEQUENCES)]
    return {"train": train, "val": val, "sequences": seqs, "seconds": time.perf_counter() - t0}


def _median_pose_error(train, val):
    """A constant pose (median normalised labels of the training set) in every val crop."""
    med = np.median(np.stack([normalize_labels(s.gt, init_from_joints(s.gt), 64, 64)
                              for s in train]), axis=0)
    return eval_frame(val, lambda l, r, s, i: np.repeat(med[None], len(l), 0), 64, 64).mean_error


def _pixel_error(est, samples):
    b = make_batch(samples, None, None, NET.net_w, NET.net_h, 0.25)
    pred = est.predict(b.left, b.right)
    return float(np.linalg.norm(pred[..., :2] - b.labels[..., :2], axis=-1).mean())


@pytest.fixture(scope="module")
def two_stage(toy):
    t0 = time.perf_counter()
    store, net = build_network(NET, 0)
    est = Estimator(NET, store, net)
    out = {"untrained": eval_frame(toy["val"], NetworkPredictor(est), 64, 64).mean_error,
           "untrained_px": _pixel_error(est, toy["val"]),
           "median": _median_pose_error(toy["train"], toy["val"])}
    out["r2d"] = train_stage_2d(toy["train"], est, TrainConfig(epochs=EPOCHS_2D, **STAGE_2D),
                                toy["val"])
    out["trunk"] = store.copy()
    out["trained_px"] = _pixel_error(est, toy["val"])
    out["r3d"] = train_stage_3d(toy["train"], est, TrainConfig(epochs=EPOCHS_3D, **STAGE_3D),
                                toy["val"])
    out["trained"] = eval_frame(toy["val"], NetworkPredictor(est), 64, 64).mean_error
    out["seconds"] = time.perf_counter() - t0
    out["store"] = store
    return out


def test_c08_toy_training_frame(criterion, toy, two_stage):
    r = two_stage
    total = toy["seconds"] + r["seconds"]
    ratio = r["untrained"] / r["trained"]
    ok = ratio >= 3 and r["trained"] < r["median"] and total < 1800
    criterion(8, "two-stage toy training (frame)", ok,
              f"untrained {r['untrained']:.2f} mm -> trained {r['trained']:.2f} mm ({ratio:.2f}x), "
              f"median pose {r['median']:.2f} mm, {total / 60:.1f} min incl. data")


def test_c08_stage_sanity(toy, two_stage):
    r = two_stage
    assert r["r2d"].final_val < r["r2d"].initial_val
    assert r["r3d"].final_val < r["r3d"].initial_val
    assert r["untrained_px"] / r["trained_px"] >= 3
    print(f"\n2-D error {r['untrained_px']:.2f} px -> {r['trained_px']:.2f} px")


@pytest.fixture(scope="module")
def track_models(toy, two_stage):
    """Stereo and mono disparity heads trained for tracking on the same 2-D trunk."""
    out = {}
    for mode in ("stereo", "mono"):
        store = two_stage["trunk"].copy()
        _, net = build_network(NET, 0)
        est = Estimator(NET, store, net, mode=mode)
        train_stage_3d(toy["train"], est,
                       TrainConfig(epochs=EPOCHS_3D, protocol="track", **STAGE_3D), toy["val"])
        rng = np.random.default_rng(0)      # same first-frame jitters for both heads
        out[mode] = eval_track(toy["sequences"], NetworkPredictor(est), 64, 64,
                               first_init=lambda init, k: jitter_init(init, rng))
    return out


def test_c09_stereo_beats_mono_track(criterion, track_models):
    st, mo = track_models["stereo"], track_models["mono"]
    ok = st.mean_error < mo.mean_error and mo.diverged >= st.diverged
    criterion(9, "stereo vs mono (track)", ok,
              f"stereo {st.mean_error:.2f} mm / {st.diverged} diverged, "
              f"mono {mo.mean_error:.2f} mm / {mo.diverged} diverged, {st.frames} frames")


def test_c10_augmentation_policy(criterion):
    matrix_ok = all(AugPolicy(*cond).switches == cells for cond, cells in TABLE_1.items())
    try:
        augment(CropInit(0.0, 0.0, 50.0, 50.0, 20.0), AugPolicy("3d", "frame"),
                np.random.default_rng(0), force_rotation=10.0)
        raised = False
    except IllegalAugmentation:
        raised = True
    init = CropInit(100.0, 50.0, 80.0, 80.0, 40.0)
    ranges_ok = True
    for k, (cond, (rot_on, uv_on, d_on, scale_on)) in enumerate(TABLE_1.items()):
        rng = np.random.default_rng(100 + k)
        for _ in range(10_000):
            out, rot = augment(init, AugPolicy(*cond), rng)
            du = (out.u0 + out.w0 / 2 - 140.0) / 80.0
            dv = (out.v0 + out.h0 / 2 - 90.0) / 80.0
            dd = out.d0 / 40.0 - 1
            ds = out.w0 / 80.0 - 1
            ranges_ok &= (rot is None) if not rot_on else abs(rot) <= ROTATE_DEG
            for val, on, lim in ((du, uv_on, SHIFT_UV), (dv, uv_on, SHIFT_UV),
                                 (dd, d_on, SHIFT_D), (ds, scale_on, SCALE)):
                ranges_ok &= abs(val) <= (lim + 1e-12 if on else 1e-12)
    criterion(10, "augmentation policy", matrix_ok and raised and ranges_ok,
              f"table {matrix_ok}, forced 3-D rotation raises {raised}, 4x10^4 draws in range {ranges_ok}")


def test_c11_two_stage_vs_joint(criterion, toy, two_stage):
    store, net = build_network(NET, 0)
    est = Estimator(NET, store, net)
    joint_cfg = TrainConfig(epochs=EPOCHS_2D + EPOCHS_3D, lr=STAGE_2D["lr"], sigma=1.5,
                            sigma_d=STAGE_3D["sigma_d"], lr_every=STAGE_2D["lr_every"])
    train_joint(toy["train"], est, joint_cfg, toy["val"])
    joint = eval_frame(toy["val"], NetworkPredictor(est), 64, 64).mean_error
    staged = two_stage["trained"]
    criterion(11, "two-stage vs joint (equal steps)", staged <= joint,
              f"two-stage {staged:.2f} mm, joint {joint:.2f} mm, "
              f"{EPOCHS_2D + EPOCHS_3D} epochs each")


# -- 12-14: artifact contracts -------------------------------------------------

def test_c12_bench_structure(criterion):
    configs = [NetConfig.from_variant(v) for v in VARIANTS]
    macs = {c.variant: count_macs(c) for c in configs}
    ratios = {v: m.stereo / m.mono for v, m in macs.items()}
    ratio_ok = all(r < 2 for r in ratios.values())
    stride_ok = all(macs[bp + "S8"].stereo < macs[bp + "S4"].stereo for bp in ("D2", "D4"))
    rows = bench_fps(configs, repetitions=20, burn_in=5)
    table = format_fps(rows)
    print("\n" + table)
    table_ok = len(rows) == 8 and all(r.runs == 20 and r.fps_mean > 0 for r in rows)
    criterion(12, "bench structure", ratio_ok and stride_ok and table_ok,
              "stereo/mono " + ", ".join(f"{v} {r:.3f}" for v, r in ratios.items())
              + f"; S8<S4 {stride_ok}; fps table rows {len(rows)}")


def test_c13_serialization(criterion, toy, tmp_path):
    sub = toy["val"][:10]
    write_dataset(sub, tmp_path / "ds")
    back = read_dataset(tmp_path / "ds")
    data_ok = all(np.array_equal(a.left, b.left) and np.array_equal(a.right, b.right)
                  and np.array_equal(a.gt, b.gt) for a, b in zip(sub, back)) and len(back) == 10
    store, _ = build_network(NET, 0)
    raw = save_checkpoint(store)
    ckpt_ok = save_checkpoint(load_checkpoint(raw)) == raw
    small = ParamStore()
    small.add("a/w", np.arange(6, dtype=np.float32).reshape(2, 3))
    small.add("b/bias", np.array([1.5], dtype=np.float32))
    small_raw = save_checkpoint(small)
    rejected = 0
    for cut in range(len(small_raw)):
        try:
            load_checkpoint(small_raw[:cut])
        except CorruptCheckpoint:
            rejected += 1
    criterion(13, "serialization", data_ok and ckpt_ok and rejected == len(small_raw),
              f"dataset bit-identical {data_ok}, checkpoint bit-identical {ckpt_ok} "
              f"({len(raw)} bytes), truncations rejected {rejected}/{len(small_raw)}")


def test_c14_cli_determinism(criterion, tmp_path):
    net = ["--net-size", "32", "--base-channels", "4", "--stacks", "1"]
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        assert main(["synth", "--out", str(d / "data"), "--count", "8", "--sequences", "2",
                     "--frames", "3", "--seed", "11", "--threads", "1"]) == 0
        assert main(["train", "--data", str(d / "data"), "--out", str(d / "net.spnc"), *net,
                     "--epochs", "1", "--batch-size", "4", "--lr", "1e-3", "--sigma", "1.5",
                     "--seed", "11", "--threads", "1"]) == 0
        for protocol in ("frame", "track"):
            assert main(["eval", "--data", str(d / "data"), "--checkpoint", str(d / "net.spnc"),
                         "--protocol", protocol, "--perturb-first", "--seed", "11",
                         "--threads", "1", "--out", str(d / f"{protocol}.txt"),
                         "--records", str(d / f"{protocol}.csv")]) == 0
        outputs.append({str(p.relative_to(d)): p.read_bytes()
                        for p in sorted(d.rglob("*")) if p.is_file()})
    same = outputs[0] == outputs[1]
    criterion(14, "CLI determinism at --threads 1", same,
              f"{len(outputs[0])} files compared byte for byte")
