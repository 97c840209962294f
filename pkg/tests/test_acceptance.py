"""Release exit checks for the full pipeline.

Each test prints a single `[ACCEPTANCE n] <summary>: PASS|FAIL` line directly
to the terminal, so a plain `pytest -v` run doubles as the acceptance report.
The numbered checks cover gradient correctness, loss reductions, the
temperature contract, end-to-end learning on the default synthetic dataset,
metric identities, segmentation quality, the bin codec, protocol robustness,
servo dynamics, teleoperation fidelity/latency, and determinism.
"""

import time

import numpy as np
import pytest
import torch

import test_net_grad as gradcheck
from theta import dexsim
from theta import handmodel as hm
from theta import metrics
from theta import net as tn
from theta import synthview as sv
from theta import teleop, wire
from theta.config import config_from_dict
from theta.pipeline import load_training_data
from theta.segment import HsvMaskProvider, morph_refine, threshold


@pytest.fixture
def note(capsys):
    """Print the one-line verdict for a numbered check, then enforce it."""

    def _note(num, summary, ok):
        with capsys.disabled():
            print(f"\n[ACCEPTANCE {num}] {summary}: {'PASS' if ok else 'FAIL'}")
        assert ok, f"[ACCEPTANCE {num}] {summary}"

    return _note


@pytest.fixture(scope="module")
def config():
    return config_from_dict({})


def test_01_gradient_correctness(note):
    start = time.monotonic()
    net, x, labels, alpha = gradcheck._make_problem()
    loss = gradcheck._loss(net, x, labels, alpha)
    loss.backward()
    grads = {n: p.grad.detach().clone() for n, p in net.named_parameters()}
    for p in net.parameters():
        p.grad = None
    worst = max(
        gradcheck.worst_rel_error(net, x, labels, alpha, grads, param_name)
        for _, param_name in gradcheck.CHECKED_PARAMS
    )
    elapsed = time.monotonic() - start
    note(
        1,
        f"analytic vs finite-difference gradients, {len(gradcheck.CHECKED_PARAMS)} "
        f"layer types x {gradcheck.N_COORDS} coords: worst rel err {worst:.2e} "
        f"(< 1e-3) in {elapsed:.1f}s (< 60s)",
        worst < 1e-3 and elapsed < 60.0,
    )


def test_02_loss_reductions(note):
    rng = np.random.default_rng(2)
    probs = tn.temperature_softmax(rng.normal(size=(64, 15, 10)), 1.0)
    labels = rng.integers(0, 10, size=(64, 15))
    focal = tn.focal_loss(probs, labels, alpha=None, gamma=0.0)
    p_y = np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0]
    ce = float(np.mean(-np.log(np.maximum(p_y, 1e-12))))
    gamma0_gap = abs(focal - ce)

    certain = np.zeros((4, 15, 10))
    certain[..., 3] = 1.0
    easy = tn.focal_loss(certain, np.full((4, 15), 3), gamma=2.0)
    note(
        2,
        f"focal(gamma=0) == cross-entropy to {gamma0_gap:.1e} (<= 1e-12); "
        f"p_t -> 1 loss {easy:.1e} (< 1e-9)",
        gamma0_gap <= 1e-12 and easy < 1e-9,
    )


def test_03_temperature_contract(note):
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(1000, 10))
    assert np.all(logits.max(axis=-1) > logits.min(axis=-1))  # non-constant rows
    base = logits.argmax(axis=-1)
    argmax_ok = all(
        np.array_equal(tn.temperature_softmax(logits, t).argmax(axis=-1), base)
        for t in (0.25, 0.5, 1.0, 2.0, 3.7, 10.0, 100.0)
    )
    p1 = tn.temperature_softmax(logits, 1.0).max(axis=-1)
    p2 = tn.temperature_softmax(logits, 2.0).max(axis=-1)
    cooled = bool(np.all(p2 < p1))
    note(
        3,
        "argmax invariant for all tested T > 0 and max prob strictly "
        "decreases from T=1 to T=2 on 1,000 random rows",
        argmax_ok and cooled,
    )


def test_04_synthetic_end_to_end_learning(note, config, tmp_path):
    table = hm.default_gesture_table()
    start = time.monotonic()
    manifest = sv.generate_dataset(table, 50, tmp_path / "full", seed=0)
    assert len(manifest["samples"]) == 6000 and len(table) == 40
    data = load_training_data(tmp_path / "full", config)
    result = tn.train(
        data, tn.NetworkSpec(), epochs=10, lr=0.001, seed=0, batch_size=8, temperature=0.25
    )
    minutes = (time.monotonic() - start) / 60.0
    note(
        4,
        f"40-gesture/6,000-image synthetic set, 10 epochs @ lr 0.001: held-out "
        f"per-joint bin accuracy {result.best_val_acc:.4f} (>= 0.95) in "
        f"{minutes:.1f} min (< 30)",
        result.best_val_acc >= 0.95 and minutes < 30.0,
    )


def test_05_metric_identity(note):
    rng = np.random.default_rng(5)
    random_cm = metrics.accumulate(
        rng.integers(0, 10, size=(400, 15)), rng.integers(0, 10, size=(400, 15))
    )
    s = metrics.summarize(random_cm)
    gap = abs(s["f1"] - 2 * s["precision"] * s["recall"] / (s["precision"] + s["recall"]))

    labels = np.tile(np.arange(10), (15, 4)).T  # every bin of every joint hit
    perfect = metrics.summarize(metrics.accumulate(labels, labels))
    all_one = all(perfect[k] == 1.0 for k in ("accuracy", "precision", "recall", "f1"))
    note(
        5,
        f"F1 = 2PR/(P+R) to {gap:.1e} (<= 1e-12); perfect-prediction fixture "
        "yields all metrics exactly 1.0",
        gap <= 1e-12 and all_one,
    )


def test_06_segmentation_quality(note, config):
    table = hm.default_gesture_table()
    rng = np.random.default_rng(606)
    provider = HsvMaskProvider()
    worst = 1.0
    for _ in range(300):
        gesture = table[rng.integers(len(table))]
        angles = hm.jitter(gesture.angles, 5.0, rng)
        view = sv.VIEW_ORDER[rng.integers(3)]
        scene = sv.SceneParams(
            background_color=config.scene.background_color,
            brightness_scale=float(rng.uniform(0.7, 1.3)),
            noise_density=0.02,
            seed=int(rng.integers(0, 2**31 - 1)),
        )
        frame = sv.render_view(
            angles, sv.VIEW_AZIMUTH_DEG[view], config.hand, scene, config.rig
        )
        truth = sv.render_silhouette(angles, sv.VIEW_AZIMUTH_DEG[view], config.hand, config.rig)
        refined = morph_refine(threshold(provider(frame)))
        union = np.logical_or(refined, truth).sum()
        iou = np.logical_and(refined, truth).sum() / union if union else 1.0
        worst = min(worst, iou)
    note(
        6,
        f"refined-mask IoU vs ground-truth silhouette over 300 random frames "
        f"(noise 0.02, brightness 0.7-1.3): worst {worst:.4f} (>= 0.95)",
        worst >= 0.95,
    )


def test_07_bin_codec(note):
    sweep = np.linspace(90.0, 180.0, 9001)  # 0.01 degree resolution
    err = np.abs(hm.bin_decode_array(hm.bin_encode_array(sweep)) - sweep)
    sweep_ok = bool(np.all(err <= 5.0))

    flips = 0
    for center in range(90, 181, 10):
        annotation = np.full(15, float(center))
        expected = hm.bin_encode_array(annotation)
        for seed in range(1000):
            rng = np.random.default_rng([center, seed])
            jittered = hm.jitter(annotation, 5.0, rng)
            if not np.array_equal(hm.bin_encode_array(jittered), expected):
                flips += 1
    note(
        7,
        f"|decode(encode(a)) - a| max {err.max():.2f} (<= 5) over [90,180] @ 0.01 "
        f"deg; bin flips under +-5 deg jitter: {flips}/10,000 centersxseeds (== 0)",
        sweep_ok and flips == 0,
    )


def test_08_protocol_robustness(note):
    counters = wire.run_fuzz(seed=8, n_frames=10_000)
    fuzz_ok = (
        counters["frames_ok"] == 10_000
        and counters["corrupt_accepted"] == 0
        and counters["max_buffered"] <= wire.BUFFER_LIMIT
    )

    rng = np.random.default_rng(808)
    roundtrip_ok = True
    for _ in range(1000):
        frame = wire.ServoFrame(tuple(int(v) for v in rng.integers(0, 181, size=15)))
        encoded = wire.encode_frame(frame)
        parser = wire.FrameParser()
        emitted = []
        pos = 0
        while pos < len(encoded):
            take = int(rng.integers(1, len(encoded) + 1))
            emitted.extend(parser.feed(encoded[pos : pos + take]))
            pos += take
        roundtrip_ok &= emitted == [frame]
    note(
        8,
        f"10,000-frame fuzz: {counters['frames_ok']} accepted, "
        f"{counters['corrupt_accepted']} corrupt accepted, buffer peak "
        f"{counters['max_buffered']} (<= 128); 1,000 chunked round-trips exact",
        fuzz_ok and roundtrip_ok,
    )


def test_09_servo_dynamics(note):
    sim = dexsim.HandSim()
    rng = np.random.default_rng(9)
    dt = 0.01
    bound = sim.max_slew_deg_per_s * dt
    worst_step = 0.0
    for step in range(1000):  # 10 s at 100 Hz, new random command every 100 ms
        if step % 10 == 0:
            sim.command(wire.ServoFrame(tuple(int(v) for v in rng.integers(0, 181, size=15))))
        before = sim.current_deg.copy()
        sim.step(dt)
        worst_step = max(worst_step, float(np.abs(sim.current_deg - before).max()))
    slew_ok = worst_step <= bound + 1e-9

    sim = dexsim.HandSim()
    sim.command(wire.ServoFrame((137,) * 15))
    overshoot = False
    for _ in range(1000):
        sim.step(dt)
        overshoot |= bool(np.any(sim.current_deg > 137.0))
    final_err = float(np.abs(sim.current_deg - 137.0).max())
    note(
        9,
        f"slew bound held on all 1,000 randomized steps (max step {worst_step:.2f} "
        f"<= {bound:.1f} deg); constant command settles to {final_err:.3f} deg "
        "(< 0.5) with no overshoot",
        slew_ok and final_err < 0.5 and not overshoot,
    )


@pytest.fixture(scope="module")
def toy_model(config, tmp_path_factory):
    """A small model trained to convergence on the three scripted gestures."""
    table = hm.default_gesture_table()[:3]
    assert [g.gesture_name for g in table] == ["Closed Fist", "Open Palm", "Number One"]
    data_dir = tmp_path_factory.mktemp("toy") / "data"
    sv.generate_dataset(table, 30, data_dir, seed=1)
    data = load_training_data(data_dir, config)
    result = tn.train(data, tn.NetworkSpec(), epochs=40, seed=1, batch_size=4)
    path = data_dir.parent / "toy.ckpt"
    tn.save_checkpoint(result.best_state, path, spec=tn.NetworkSpec())
    return tn.load_checkpoint(path), result.best_val_acc, table


def test_10_teleoperation_fidelity(note, config, toy_model):
    net, val_acc, table = toy_model
    script = teleop.parse_script("Open Palm:3,Closed Fist:3,Number One:3", table)
    result = teleop.run_teleop(config, net, teleop.script_source(script, config))
    p95 = result.latency.end_to_end["p95_ms"]
    note(
        10,
        f"scripted palm->fist->number-one with converged toy model (val acc "
        f"{val_acc:.3f}): fidelity {result.fidelity:.3f} (>= 0.9), end-to-end "
        f"p95 {p95:.1f} ms (< 100)",
        result.fidelity >= 0.9 and p95 < 100.0,
    )


def test_11_determinism(note, config, tmp_path):
    table = hm.default_gesture_table()[:2]
    spec = tn.NetworkSpec(stem_channels=4, blocks=((2, 2, 6), (2, 1, 6)))
    checkpoints = []
    datasets = []
    for run in ("a", "b"):
        out = tmp_path / run / "data"
        sv.generate_dataset(table, 5, out, seed=3)
        files = sorted(p.relative_to(out) for p in out.rglob("*") if p.is_file())
        datasets.append({str(rel): (out / rel).read_bytes() for rel in files})
        data = load_training_data(out, config)
        result = tn.train(data, spec, epochs=2, seed=3, batch_size=4)
        ckpt = tmp_path / run / "model.ckpt"
        tn.save_checkpoint(result.best_state, ckpt, spec=spec)
        checkpoints.append(ckpt.read_bytes())
    datasets_ok = len(datasets[0]) > 0 and datasets[0] == datasets[1]
    ckpt_ok = checkpoints[0] == checkpoints[1]
    fuzz_ok = wire.run_fuzz(seed=11, n_frames=500) == wire.run_fuzz(seed=11, n_frames=500)
    note(
        11,
        "identical config+seed reproduce byte-identical datasets, checkpoints, "
        "and fuzz counters across two runs",
        datasets_ok and ckpt_ok and fuzz_ok,
    )
