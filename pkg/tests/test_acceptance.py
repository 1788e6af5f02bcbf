"""Acceptance criteria, one test per criterion.

Each test prints a PASS/FAIL line (also collected into the terminal summary)
before asserting, so a run shows the status of every criterion.
"""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import bce_oracle, fit_count_classifier, metric_oracle, ring_features
from rosette_gan.cli import run
from rosette_gan.config import TrainConfig
from rosette_gan.data import AugmentedDataset, ImageSample, augment, load_dataset, synth_dataset
from rosette_gan.evaluation import RegressorConfig, augmentation_experiment, count_metrics, kfold_split
from rosette_gan.gradcheck import TOLERANCE, run_gradcheck
from rosette_gan.models import discriminator_forward, generate, generator_forward, init_params, one_hot
from rosette_gan.tensor import Tensor, Uniform, no_record, tensor_create
from rosette_gan.toy import ToyConfig, check_toy, seeded_target, train_toy
from rosette_gan.training import gan_losses, train

SEEDS = (0, 1, 2)


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_1_gradient_correctness():
    t0 = time.perf_counter()
    results = run_gradcheck(seed=0)
    elapsed = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.max_rel_error)
    nets = {r.name.split("[")[0] for r in results} >= {"generator", "discriminator"}
    ok = nets and all(r.max_rel_error < TOLERANCE for r in results) and elapsed < 120
    report(1, ok, f"{len(results)} checks, worst {worst.name} {worst.max_rel_error:.2e} (< 1e-3), {elapsed:.1f}s")


def test_2_architecture_contract():
    cfg = TrainConfig()
    rng = np.random.default_rng(0)
    gen, disc = init_params(cfg, rng)
    B = 2
    y = one_hot(rng.integers(cfg.num_classes, size=B), cfg.num_classes)
    z = tensor_create((B, cfg.z_dim), Uniform(-1.0, 1.0), rng)
    with no_record():
        img = generator_forward(z, y, gen, "train", update_stats=False).data
        d = discriminator_forward(Tensor(img), y, disc, "train", update_stats=False).data
    sizes = [4 * 2 ** i for i in range(cfg.n_layers + 1)]
    ok = (img.shape == (B, 3, 128, 128) and np.all(np.abs(img) <= 1) and d.shape == (B, 1)
          and np.all((d > 0) & (d < 1)) and cfg.n_layers == 5 and sizes[0] == 4 and sizes[-1] == 128)
    report(2, ok, f"G {img.shape} range [{img.min():.3f}, {img.max():.3f}], D {d.shape} in "
                  f"({d.min():.3f}, {d.max():.3f}), chain {sizes}")


def test_3_objective_fixed_point():
    half = Tensor(np.full((8, 1), 0.5), dtype=np.float64)
    fixed = abs(float(gan_losses(half, half).d_loss) - 2 * math.log(2))
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 17))
        real, fake = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
        l = gan_losses(Tensor(real[:, None], dtype=np.float64), Tensor(fake[:, None], dtype=np.float64))
        d, g = bce_oracle(real, fake)
        worst = max(worst, abs(float(l.d_loss) - d), abs(float(l.g_loss) - g))
    report(3, fixed < 1e-6 and worst < 1e-6, f"|L(0.5,0.5) - 2ln2| = {fixed:.1e}, BCE oracle max error {worst:.1e}")


def _tiny_samples(n, rng):
    return [ImageSample(rng.uniform(-1, 1, (3, 8, 8)).astype(np.float32), 3 + i % 4, f"s{i}") for i in range(n)]


def test_4_augmentation_cardinality():
    rng = np.random.default_rng(4)
    sizes = {n: len(augment(_tiny_samples(n, rng))) for n in (1, 2, 7, 13)}
    src = _tiny_samples(783, rng)
    big = augment(src, memory_budget=0)
    lazy = isinstance(big, AugmentedDataset)
    identical = all(np.array_equal(big[30 * i].pixels, src[i].pixels) and big[30 * i].pixels.dtype == src[i].pixels.dtype
                    for i in (0, 391, 782))
    ok = all(v == 30 * n for n, v in sizes.items()) and len(big) == 23490 and identical
    report(4, ok, f"sizes {sizes}, n=783 -> {len(big)} (lazy={lazy}), rotation-0 bit-identical={identical}")


def test_5_toy_convergence():
    t0 = time.perf_counter()
    lines, passes = [], {}
    for dim in (1, 2):
        passes[dim] = 0
        for seed in SEEDS:
            mean, std = seeded_target(seed, dim)
            res = train_toy(ToyConfig(dim=dim, target_mean=mean, target_std=std, seed=seed))
            chk = check_toy(res)
            passes[dim] += chk.passed
            lines.append(f"{dim}-D seed {seed}: target {np.round(mean, 2)}/{np.round(std, 2)} "
                         f"got {np.round(chk.mean, 2)}/{np.round(chk.std, 2)} {'ok' if chk.passed else 'miss'}")
    elapsed = time.perf_counter() - t0
    for l in lines:
        print("  " + l)
    ok = all(p >= 2 for p in passes.values()) and elapsed < 300
    report(5, ok, f"seeds passing: 1-D {passes[1]}/3, 2-D {passes[2]}/3 (need >= 2), {elapsed:.0f}s (< 300)")


COUNTS = (3, 4, 5, 6)


@pytest.fixture(scope="module")
def count_oracle():
    rng = np.random.default_rng(606)
    clf = fit_count_classifier(synth_dataset(3000, COUNTS, 16, rng))
    held = synth_dataset(1000, COUNTS, 16, rng)
    acc = clf.score(ring_features([s.pixels for s in held]), [s.leaf_count for s in held])
    return clf, acc


def test_6_conditional_fidelity(count_oracle):
    clf, oracle_acc = count_oracle
    assert oracle_acc >= 0.9, f"oracle precondition failed: held-out accuracy {oracle_acc:.3f}"
    t0 = time.perf_counter()
    passes, lines = 0, []
    steps_per_epoch = 2048 // 64
    epochs = math.ceil(3000 / steps_per_epoch)
    for seed in SEEDS:
        data = synth_dataset(2048, COUNTS, 16, np.random.default_rng([seed, 7]))
        cfg = TrainConfig(resolution=16, z_dim=32, fc1_width=128, base_width=16, num_classes=4, min_count=3,
                          batch_size=64, seed=seed, epochs=epochs)
        hist = train(data, cfg, keep_grids=False)
        steps = hist.epochs[-1]["steps"]
        accs = []
        for c in COUNTS:
            imgs = generate(hist.state.gen, [c] * 200, np.random.default_rng([seed, c]))
            accs.append(float(np.mean(clf.predict(ring_features(imgs)) == c)))
        ok = steps >= 3000 and min(accs) >= 0.5
        passes += ok
        lines.append(f"seed {seed}: {steps} steps, per-condition accuracy {np.round(accs, 3).tolist()}")
    elapsed = time.perf_counter() - t0
    for l in lines:
        print("  " + l)
    report(6, passes >= 2 and elapsed < 1800,
           f"oracle held-out {oracle_acc:.3f} (>= 0.9), seeds passing {passes}/3 (need >= 2), {elapsed:.0f}s (< 1800)")


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    args = ["train", "--epochs", "1", "--resolution", "16", "--base-width", "4", "--fc1-width", "16",
            "--z-dim", "8", "--synth-n", "32", "--batch-size", "8", "--out-dir", str(out)]
    assert run(args) == 0
    return out / "ckpt_epoch001.bin"


def test_7_ax_round_trip(tiny_checkpoint, tmp_path):
    out = tmp_path / "ax"
    code = run(["generate", "--checkpoint", str(tiny_checkpoint), "--n", "57", "--count-range", "3-6",
                "--save-tensors", "--out-dir", str(out)])
    saved = np.load(out / "generated.npz")
    manifest, samples = load_dataset(out, target=None)
    pngs = sorted(p.name for p in out.glob("plant*_rgb.png"))
    by_name = {s.source_id: s for s in samples}
    err = max(float(np.abs(by_name[f"plant{i + 1:03d}_rgb.png"].pixels - saved["images"][i]).max()) for i in range(57))
    labels = [by_name[f"plant{i + 1:03d}_rgb.png"].leaf_count for i in range(57)]
    ok = (code == 0 and len(samples) == 57 and len(pngs) == 57 and labels == saved["counts"].tolist()
          and err <= 1 / 255 + 1e-6)
    report(7, ok, f"{len(pngs)} PNGs, {len(samples)} labeled samples, max pixel error {err * 255:.3f}/255 (<= 1/255)")


def test_8_evaluation_harness(tmp_path):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        truth = rng.integers(1, 20, n)
        pred = truth + rng.normal(0, 2, n)
        if rng.uniform() < 0.2:
            pred = np.round(pred) + rng.choice([-0.5, 0.5], n)
        m = count_metrics(pred, truth)
        ref = metric_oracle(pred.tolist(), truth.tolist())
        got = (m.dic_mean, m.dic_std, m.abs_dic_mean, m.abs_dic_std, m.mse, m.r2)
        for a, b in zip(got, ref):
            if b is None:
                assert a is None
            else:
                worst = max(worst, abs(a - b))
    folds = kfold_split(624, 4, np.random.default_rng(0))
    split_sizes = {(len(a), len(b)) for a, b in folds}
    cover = sorted(np.concatenate([b for _, b in folds]).tolist()) == list(range(624))

    t0 = time.perf_counter()
    real = synth_dataset(624, list(range(3, 9)), 32, np.random.default_rng([8, 1]))
    synthetic = synth_dataset(57, list(range(3, 9)), 32, np.random.default_rng([8, 2]))
    rep = augmentation_experiment(real, synthetic, k=4, cfg=RegressorConfig(seed=0))
    rep.write_csv(tmp_path / "report.csv")
    text = rep.to_text()
    elapsed = time.perf_counter() - t0
    print(text)
    shaped = ("Trained on A4 only" in text and "Trained on A4 and Ax" in text
              and all(k in text for k in ("DiC", "|DiC|", "MSE", "R2")))
    ok = worst < 1e-9 and split_sizes == {(468, 156)} and cover and shaped and elapsed < 1200
    mse = {c: rep.aggregate(c, "test").mse for c in rep.conditions}
    report(8, ok, f"metric oracle max error {worst:.1e}, folds {sorted(split_sizes)}, report conditions "
                  f"{list(rep.conditions)} test MSE {', '.join(f'{c}={v:.3f}' for c, v in mse.items())}, "
                  f"{elapsed:.0f}s (< 1200)")


def test_9_checkpoint_determinism(small_cfg, tmp_path):
    data = synth_dataset(24, list(COUNTS), 16, np.random.default_rng(9))
    full = train(data, small_cfg.replace(epochs=4), tmp_path / "full")
    train(data, small_cfg.replace(epochs=2), tmp_path / "half")
    resumed = train(data, small_cfg.replace(epochs=4), tmp_path / "rest", resume=tmp_path / "half" / "ckpt_epoch002.bin")
    mismatched = []
    n = 0
    for net in ("gen", "disc"):
        a, b = getattr(full.state, net), getattr(resumed.state, net)
        for store in ("tensors", "buffers"):
            for k, v in getattr(a, store).items():
                n += 1
                if not np.array_equal(v.data, getattr(b, store)[k].data):
                    mismatched.append(f"{net}.{k}")
    files_equal = (tmp_path / "full" / "ckpt_epoch004.bin").read_bytes() == \
        (tmp_path / "rest" / "ckpt_epoch004.bin").read_bytes()
    report(9, not mismatched, f"{n} arrays compared, {len(mismatched)} differ, checkpoint files identical={files_equal}")
