"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line; the lines are repeated
in the terminal summary. Criteria 8 and 9 share one set of training runs
(about 25 minutes on one CPU core).
"""

import json
import math
import time
from collections import deque
from fractions import Fraction

import numpy as np
import pytest

from udaseg import ablation, fusion, grid, metrics, model, superpixel, teacher
from udaseg.cli import main as cli_main
from udaseg.config import RunConfig
from udaseg.errors import ConfigError
from udaseg.pipeline import resolve_datasets, train
from udaseg.superpixel import PrwParams

SEEDS = [0, 1, 2]


# --- 1 ------------------------------------------------------------------------


def test_criterion_1_gradients(verdict):
    start = time.perf_counter()
    cfg = model.NetConfig(input_channels=3, classes=3, base_width=4)
    n_params = model.param_count(model.init_params(cfg))
    net_err = model.grad_check(cfg, seed=0, size=8)
    fuse_err = fusion.fusion_grad_check(seed=0, size=8)
    elapsed = time.perf_counter() - start
    ok = n_params <= 1000 and net_err < 1e-5 and fuse_err < 1e-5 and elapsed < 60
    verdict(1, "gradient correctness", ok,
            f"{n_params} params, net {net_err:.2e}, cnn_fuse {fuse_err:.2e}, {elapsed:.1f}s")


# --- 2 ------------------------------------------------------------------------


def test_criterion_2_ema(verdict):
    rng = np.random.default_rng(0)
    exact = True
    for alpha in (0.0, 0.5, 0.9, 1.0):
        for _ in range(25):
            phi = {"a": rng.normal(size=(7, 3)), "b": rng.normal(size=11)}
            theta = {"a": rng.normal(size=(7, 3)), "b": rng.normal(size=11)}
            out = teacher.ema_update(teacher.TeacherState(phi, alpha), theta)
            for k in phi:
                exact &= np.array_equal(out.params[k], alpha * phi[k] + (1 - alpha) * theta[k])
    phi = {"a": rng.normal(size=50)}
    theta = {"a": rng.normal(size=50)}
    d0 = np.max(np.abs(phi["a"] - theta["a"]))
    state = teacher.TeacherState(phi, 0.9)
    for _ in range(100):
        state = teacher.ema_update(state, theta)
    d = np.max(np.abs(state.params["a"] - theta["a"]))
    bound = 0.9**100 * d0
    ok = exact and d <= bound * (1 + 1e-9)
    verdict(2, "EMA exactness", ok, f"closed form exact={exact}, |phi-theta| {d:.3e} <= {bound:.3e}")


# --- 3 ------------------------------------------------------------------------


def _oracle_bits(scores, c):
    flat = sorted(scores.ravel().tolist())
    t = flat[math.ceil(Fraction(c) * len(flat) / 100) - 1]
    return np.array([v < t for v in scores.ravel()]).reshape(scores.shape)


def test_criterion_3_efficient_fusion(verdict):
    rng = np.random.default_rng(3)
    mismatches = 0
    for c in (10, 25, 50, 75, 100):
        for trial in range(200):
            ny = int(rng.integers(1, 17))
            nx = int(rng.integers(1, 256 // ny + 1))
            scores = rng.integers(0, 6, (ny, nx)).astype(float) if trial % 4 == 0 else rng.random((ny, nx))
            t = fusion.percentile_threshold(scores, c)
            m = fusion.build_patch_mask(scores, t, "select_low")
            mismatches += not np.array_equal(m, _oracle_bits(scores, c))
    provenance_bad = 0
    for _ in range(200):
        h, w = rng.integers(4, 40, size=2)
        k = int(rng.integers(1, min(h, w) + 1))
        xs, xt = rng.random((h, w, 3)), rng.random((h, w, 3))
        m = rng.random((-(-h // k), -(-w // k))) < rng.random()
        out = fusion.compose_fusion(xs, xt, m, k)
        yy, xx = np.mgrid[0:h, 0:w]
        chosen = m[yy // k, xx // k]
        eq_s = np.all(out == xs, axis=-1)
        eq_t = np.all(out == xt, axis=-1)
        provenance_bad += int(np.count_nonzero(~np.where(chosen, eq_t, eq_s)))
    ok = mismatches == 0 and provenance_bad == 0
    verdict(3, "efficient-fusion oracle equivalence", ok,
            f"{mismatches} mask mismatches in 1000 grids, {provenance_bad} bad pixels")


# --- 4 ------------------------------------------------------------------------


def test_criterion_4_entropy_snd(verdict):
    rng = np.random.default_rng(4)
    in_bounds = True
    for _ in range(50):
        K = int(rng.integers(2, 7))
        k = int(rng.integers(1, 9))
        p = grid.softmax_channels(rng.normal(size=(16, 16, K)) * rng.uniform(0.01, 20))
        s = fusion.patch_scores(p, k)
        in_bounds &= bool(np.all(s >= 0) and np.all(s <= k * k * math.log(K) + 1e-9))
    uniform_err = 0.0
    for K, k in ((3, 4), (4, 8), (2, 2)):
        s = fusion.patch_scores(np.full((16, 16, K), 1.0 / K), k)
        uniform_err = max(uniform_err, float(np.max(np.abs(s - k * k * math.log(K)))))
    snd_err = 0.0
    for K, k in ((3, 2), (4, 4), (2, 3)):
        p = np.zeros((k, k, K))
        p[..., K - 1] = 1.0
        snd_err = max(snd_err, abs(fusion.patch_scores(p, k, "snd", 0.05)[0, 0] - math.log(k * k - 1)))
    ok = in_bounds and uniform_err <= 1e-9 and snd_err <= 1e-9
    verdict(4, "entropy/SND bounds", ok, f"uniform err {uniform_err:.1e}, SND err {snd_err:.1e}")


# --- 5 ------------------------------------------------------------------------


def _components(labels, target):
    h, w = labels.shape
    seen = np.zeros((h, w), bool)
    comps = 0
    for y0 in range(h):
        for x0 in range(w):
            if labels[y0, x0] != target or seen[y0, x0]:
                continue
            comps += 1
            seen[y0, x0] = True
            q = deque([(y0, x0)])
            while q:
                y, x = q.popleft()
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w and not seen[ny, nx] and labels[ny, nx] == target:
                        seen[ny, nx] = True
                        q.append((ny, nx))
    return comps


def test_criterion_5_slic(verdict):
    rng = np.random.default_rng(5)
    target = 4
    p = PrwParams(n_superpixels=target)
    problems = []
    for i in range(50):
        sp = superpixel.slic_superpixels(rng.random((32, 32, 3)), p, seed=i)
        ids = np.unique(sp)
        if sp.shape != (32, 32) or not np.array_equal(ids, np.arange(len(ids))):
            problems.append(f"image {i}: not a contiguous total partition")
        if not 0.5 * target <= len(ids) <= 2 * target:
            problems.append(f"image {i}: {len(ids)} superpixels")
        problems += [f"image {i}: id {j} disconnected" for j in ids if _components(sp, j) != 1]
    halves = np.zeros((16, 16, 3))
    halves[:, 8:] = 1.0
    mb = superpixel.boundary_mask(superpixel.slic_superpixels(halves, PrwParams(n_superpixels=2)), 1)
    seam = np.zeros((16, 16), bool)
    seam[:, 7:9] = True
    if not np.array_equal(mb, seam):
        problems.append("half-plane boundary off the seam")
    verdict(5, "SLIC properties", not problems, "; ".join(problems[:3]) or "50 images, seam exact")


# --- 6 ------------------------------------------------------------------------


def test_criterion_6_prw(verdict):
    rng = np.random.default_rng(6)
    two_values = True
    for _ in range(20):
        mb = rng.random((16, 16)) < 0.3
        w_base, beta = float(rng.random()), float(rng.uniform(0.01, 0.99))
        w = superpixel.regional_weight_map(w_base, mb, beta)
        two_values &= set(np.unique(w)) == {w_base, w_base + beta}
        two_values &= bool(np.all(w[~mb] == w_base))
    quality_ok = True
    for delta in (0.0, 0.5, 0.9, 1.0):
        for _ in range(100):
            probs = grid.softmax_channels(rng.normal(size=(6, 5, 3)) * 4)
            count = sum(1 for row in probs for px in row if max(px) > delta)
            quality_ok &= teacher.quality_scalar(probs, delta) == count / 30
    rejected = 0
    for beta in (0.0, 1.0, -0.5, 1.5):
        try:
            superpixel.regional_weight_map(0.5, np.zeros((2, 2), bool), beta)
        except ConfigError:
            rejected += 1
    ok = two_values and quality_ok and rejected == 4
    verdict(6, "PRW map", ok, f"two-valued={two_values}, quality oracle={quality_ok}, {rejected}/4 bad betas rejected")


# --- 7 ------------------------------------------------------------------------


def test_criterion_7_metrics(verdict):
    cm = metrics.accumulate(metrics.new_confusion(2), np.array([0, 0, 0, 0]), np.array([0, 0, 1, 1]))
    r = metrics.iou_f1(cm)
    hand = r.iou[0] == 0.5 and r.iou[1] == 0.0 and r.miou == 0.25
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(2, 9))
        rep = metrics.iou_f1(rng.integers(0, 100, (k, k)))
        p = rep.present
        worst = max(worst, float(np.max(np.abs(rep.f1[p] - 2 * rep.iou[p] / (1 + rep.iou[p])))))
    gt = rng.integers(0, 5, (20, 20))
    perfect = metrics.iou_f1(metrics.accumulate(metrics.new_confusion(5), gt, gt))
    ok = hand and worst <= 1e-12 and perfect.miou == 1.0 and perfect.mf1 == 1.0
    verdict(7, "metrics", ok, f"4-pixel mIoU {r.miou}, identity err {worst:.1e}, perfect {perfect.miou}/{perfect.mf1}")


# --- 8 and 9 ------------------------------------------------------------------


@pytest.fixture(scope="session")
def adaptation_runs(tmp_path_factory):
    """Source-only baseline plus the five ablation rows, three seeds each, at desk scale."""
    out = tmp_path_factory.mktemp("adaptation")
    base = RunConfig()
    datasets = resolve_datasets(base)
    timings = {}
    source_only = []
    start = time.perf_counter()
    for s in SEEDS:
        cfg = ablation.variant_config(base, ablation.SOURCE_ONLY, s, out / "source_only" / f"seed{s}")
        source_only.append(train(cfg, datasets=datasets, figures=False).report.miou)
    timings["source_only"] = time.perf_counter() - start

    rows = []
    for name, overrides in ablation.VARIANTS.items():
        start = time.perf_counter()
        spec = ablation.AblationSpec(base, SEEDS, str(out / "ablation"), {name: overrides})
        rows += ablation.run_ablation(spec, datasets, figures=False)
        timings[name] = time.perf_counter() - start
    ablation.write_reports(rows, SEEDS, out / "ablation")
    return {"source_only": source_only, "rows": {r.variant: r for r in rows}, "timings": timings, "dir": out}


def test_criterion_8_adaptation_gain(verdict, adaptation_runs):
    so = float(np.mean(adaptation_runs["source_only"]))
    full_row = adaptation_runs["rows"]["Base+DDF+PRW"]
    gain = 100 * (full_row.mean - so)
    runtime = adaptation_runs["timings"]["source_only"] + adaptation_runs["timings"]["Base+DDF+PRW"]
    ok = gain >= 5.0 and runtime <= 15 * 60
    verdict(8, "end-to-end adaptation gain", ok,
            f"full {100 * full_row.mean:.2f} vs source-only {100 * so:.2f} mIoU, +{gain:.2f} points, {runtime / 60:.1f} min")


def test_criterion_9_ablation_direction(verdict, adaptation_runs):
    rows = adaptation_runs["rows"]
    m = {k: r.mean for k, r in rows.items()}
    orders = [
        ("Base+DDF+PRW", "Base+DDF(efficient)"),
        ("Base+DDF(efficient)", "Base"),
        ("Base+PRW", "Base"),
    ]
    failed = [f"{a} < {b}" for a, b in orders if not m[a] >= m[b]]
    layout = (adaptation_runs["dir"] / "ablation" / "ablation.md").read_text().splitlines()
    layout_ok = len(layout) == 7 and [line.split("|")[1].strip() for line in layout[2:]] == list(ablation.VARIANTS)
    print((adaptation_runs["dir"] / "ablation" / "ablation.md").read_text())
    detail = ", ".join(f"{k} {100 * v:.2f}" for k, v in m.items())
    verdict(9, "ablation direction", not failed and layout_ok, "; ".join(failed) or detail)


# --- 10 -----------------------------------------------------------------------


def test_criterion_10_determinism(verdict, tmp_path):
    cfg = {
        "data": {"n_images": 40, "n_eval": 10},
        "total_steps": 60,
        "seed": 3,
        "eval_interval": 30,
    }
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    for name in ("a", "b"):
        code = cli_main(["train", "--config", str(tmp_path / "run.json"), "--out", str(tmp_path / name), "--no-figures"])
        assert code == 0
    same = {
        f: (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        for f in ("checkpoint.bin", "loss.csv")
    }
    verdict(10, "determinism", all(same.values()), ", ".join(f"{k} identical={v}" for k, v in same.items()))
