"""Acceptance suite: one test per criterion, summarised at the end of the pytest run.

Each criterion runs at its stated tolerance and time budget.  Extra numbers
(margins, non-gating metrics) are attached with ``record_property("detail", ...)``
and shown on the summary line.
"""

import itertools
import json
import time

import numpy as np
import pytest
from PIL import Image

from oracles import (
    bce_direct, ce_direct, contrastive_double_loop, nce_direct, tar_step_direct, vote_direct,
)
from tarseg.cli import EXIT_OK, main
from tarseg.contrastive import contrastive_loss, gradcheck, l_nce
from tarseg.glyphs import RING_GLYPHS
from tarseg.recognizer import RecognizerWeights, attention_step, decode, recognition_loss_from_logits
from tarseg.seghead import ensemble, seg_loss
from tarseg.synth import (
    EvalConfig, FeatureGuide, SceneConfig, fiou, make_corpus, ring_scene, run_bench, run_eval,
)
from tarseg.tar import RefineConfig, binarize, refine, tar_step, two_stage_refine


def _random_case(r, max_side=8):
    h, w = int(r.integers(1, max_side + 1)), int(r.integers(1, max_side + 1))
    c = int(r.integers(1, 5))
    return r.uniform(0, 1, (h, w)).astype(np.float32), r.uniform(0, 1, (c, h, w)).astype(np.float32)


@pytest.mark.criterion(1, "TAR step matches the brute-force oracle")
def test_c1_tar_oracle(record_property):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        label, guide = _random_case(np.random.default_rng(seed))
        worst = max(worst, float(np.abs(tar_step(label, guide) - tar_step_direct(label, guide)).max()))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max |diff| {worst:.2e}, {elapsed:.2f} s")
    assert worst <= 1e-6
    assert elapsed < 5.0


@pytest.mark.criterion(2, "TAR invariants: fixed point, range containment, composition")
def test_c2_tar_invariants(record_property):
    t0 = time.perf_counter()
    fixed_err = 0.0
    for seed in range(100):
        r = np.random.default_rng(1000 + seed)
        label, guide = _random_case(r)
        const = np.full_like(label, r.uniform(0, 1))
        fixed_err = max(fixed_err, float(np.abs(tar_step(const, guide) - const).max()))

        iters = int(r.integers(1, 6))
        out = refine(label, guide, iters)
        assert out.min() >= label.min() - 1e-7 and out.max() <= label.max() + 1e-7, f"range, case {seed}"

        a, b = int(r.integers(0, 5)), int(r.integers(0, 5))
        assert refine(label, guide, a + b).tobytes() == refine(refine(label, guide, a), guide, b).tobytes(), \
            f"composition, case {seed}"
    elapsed = time.perf_counter() - t0
    record_property("detail", f"fixed-point err {fixed_err:.1e}, {elapsed:.2f} s")
    assert fixed_err <= 1e-7
    assert elapsed < 10.0


@pytest.mark.criterion(3, "two-stage refinement beats the seed and RGB-only refinement (200 scenes)")
def test_c3_two_stage_benefit(record_property):
    t0 = time.perf_counter()
    corpus = make_corpus(200, 1, SceneConfig(contrast_floor=0.3, seed_coverage=0.25))
    rep = run_eval(corpus, EvalConfig(rgb_only_iters=10))
    elapsed = time.perf_counter() - t0
    s = rep.summary
    two, seed, rgb = s["fiou_two_stage"]["mean"], s["fiou_seed"]["mean"], s["fiou_rgb_only"]["mean"]
    record_property("detail", f"two-stage {two:.4f}, seed {seed:.4f}, rgb-only {rgb:.4f}, "
                              f"improved {s['improved_fraction']:.3f}, {elapsed:.1f} s")
    assert two > seed
    assert two >= rgb
    assert s["improved_fraction"] >= 0.9
    assert elapsed < 120.0


@pytest.mark.criterion(4, "48x160 two-stage TAR under 50 ms and at least 5x faster than mean-field")
def test_c4_relative_speed(record_property):
    rep = run_bench((48, 160), (2, 8), repeats=20, meanfield_iters=5, meanfield_repeats=5,
                    refine_cfg=RefineConfig(kernel_radius=1))
    record_property("detail", f"TAR {rep['tar_ms']:.2f} ms, mean-field {rep['meanfield_ms']:.1f} ms, "
                              f"speedup {rep['speedup']:.1f}x")
    assert rep["tar_ms"] < 50.0
    assert rep["meanfield_ms"] >= 5.0 * rep["tar_ms"]


@pytest.mark.criterion(5, "attention is a distribution, glimpses stay in the feature hull, one-hot identity")
def test_c5_attention_invariants(record_property):
    t0 = time.perf_counter()
    worst_sum = 0.0
    steps = 0
    for seed in range(50):
        r = np.random.default_rng(seed)
        c, h, w = int(r.integers(1, 9)), int(r.integers(1, 7)), int(r.integers(1, 13))
        rw = RecognizerWeights.random(c, hidden=2 * int(r.integers(1, 5)), att=int(r.integers(1, 6)),
                                      num_classes=int(r.integers(4, 10)), seed=seed)
        f = (r.standard_normal((c, h, w)) * r.uniform(0.1, 5)).astype(np.float32)
        lo, hi = f.min(axis=(1, 2)), f.max(axis=(1, 2))
        for st in decode(f, rw, int(r.integers(1, 6))).steps:
            steps += 1
            worst_sum = max(worst_sum, abs(float(st.attention.sum(dtype=np.float64)) - 1.0))
            assert np.all(st.attention >= 0)
            assert np.all(st.glimpse >= lo - 1e-5) and np.all(st.glimpse <= hi + 1e-5), f"hull, draw {seed}"

    # contrived weights: all attention on one position, glimpse equals that feature column
    c, h, w = 3, 4, 5
    f = np.random.default_rng(7).standard_normal((c, h, w)).astype(np.float32)
    f[0] = 0.0
    f[0, 2, 3] = 20.0
    rw = RecognizerWeights.zeros(c, hidden=2, att=1, embed=2, num_classes=4)
    rw.att_conv[0, 0, 1, 1] = 1.0
    rw.att_e[0] = 1000.0
    alpha, g = attention_step(f, np.zeros(2), rw)
    assert alpha[2, 3] == 1.0 and alpha.sum() == 1.0
    assert g.tobytes() == f[:, 2, 3].tobytes()

    elapsed = time.perf_counter() - t0
    record_property("detail", f"{steps} steps, max |sum-1| {worst_sum:.1e}, {elapsed:.2f} s")
    assert worst_sum <= 1e-5
    assert elapsed < 30.0


@pytest.mark.criterion(6, "loss oracles to 1e-9 and contrastive gradients to 1e-4")
def test_c6_loss_correctness(record_property):
    t0 = time.perf_counter()
    worst = {"ce": 0.0, "bce": 0.0, "nce": 0.0, "contrastive": 0.0}
    for seed in range(50):
        r = np.random.default_rng(seed)
        t, k = int(r.integers(1, 9)), int(r.integers(2, 12))
        logits = r.standard_normal((t, k)) * 4
        gt = r.integers(0, k, t).tolist()
        worst["ce"] = max(worst["ce"], abs(recognition_loss_from_logits(logits, gt) - ce_direct(logits, gt)))

        n = int(r.integers(1, 4))
        shape = (int(r.integers(1, 9)), int(r.integers(1, 9)))
        ms = [r.uniform(0, 1, shape) for _ in range(n)]
        ps = [r.integers(0, 2, shape).astype(float) for _ in range(n)]
        ref = sum(bce_direct(m, p) for m, p in zip(ms, ps))
        worst["bce"] = max(worst["bce"], abs(seg_loss(ms, ps) - ref))

        d = int(r.integers(4, 17))
        pi, pp = r.standard_normal(d), r.standard_normal(d)
        negs = [r.standard_normal(d) for _ in range(int(r.integers(1, 8)))]
        tau = float(r.uniform(0.05, 1.0))
        worst["nce"] = max(worst["nce"], abs(l_nce(pi, pp, negs, tau) - nce_direct(pi, pp, negs, tau)))

        batch = [(r.standard_normal(d), r.standard_normal(d)) for _ in range(int(r.integers(2, 9)))]
        worst["contrastive"] = max(worst["contrastive"],
                                   abs(contrastive_loss(batch, tau) - contrastive_double_loop(batch, tau)))
    gc = gradcheck(50, seed=0)
    elapsed = time.perf_counter() - t0
    record_property("detail", ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
                    + f", grad rel err {gc['max_rel_err']:.1e}, {elapsed:.1f} s")
    assert all(v <= 1e-9 for v in worst.values()), worst
    assert gc["batches"] == 50
    assert all(2 <= b["size"] <= 8 and 4 <= b["dim"] <= 16 for b in gc["per_batch"])
    assert gc["max_rel_err"] <= 1e-4
    assert elapsed < 60.0


@pytest.mark.criterion(7, "fIoU hand cases and exhaustive 2x2 ensemble properties")
def test_c7_metric_and_ensemble(record_property):
    g = np.zeros((4, 4), bool)
    g[:, :2] = True
    half = np.zeros_like(g)
    half[:2, :2] = True
    assert fiou(g, g) == 1.0
    assert fiou(g, ~g) == 0.0
    assert fiou(half, g) == 0.5

    maps = [np.array(bits, np.float32).reshape(2, 2) for bits in itertools.product((0, 1), repeat=4)]
    count = 0
    for a, b, c in itertools.product(maps, repeat=3):
        out = ensemble(a, b, c, 2, 2)
        np.testing.assert_array_equal(out, vote_direct(a, b, c))
        if (a == b).all() and (b == c).all():
            np.testing.assert_array_equal(out, a)
        for perm in itertools.permutations((a, b, c)):
            assert ensemble(*perm, 2, 2).tobytes() == out.tobytes()
        count += 1
    record_property("detail", f"{count} triples")
    assert count == 2 ** 12


def _pipeline_run(tmp, image, seed, threads):
    out = tmp / f"pipe_{seed}_{threads}_{len(list(tmp.iterdir()))}"
    argv = ["pipeline", "--image", str(image), "--out-dir", str(out), "--threads", str(threads),
            "--rng-seed", str(seed), "--json"]
    return out, argv


def _capture(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr().out


@pytest.mark.criterion(8, "pipeline and eval are byte-identical across runs and thread counts")
def test_c8_end_to_end_determinism(tmp_path, capsys, record_property):
    seed = 17
    r = np.random.default_rng(seed)
    image = tmp_path / "scene.png"
    Image.fromarray((r.uniform(0, 1, (48, 160, 3)) * 255).astype(np.uint8), "RGB").save(image)

    runs = []
    for threads in (1, 1, 4):
        out, argv = _pipeline_run(tmp_path, image, seed, threads)
        code, stdout = _capture(argv, capsys)
        assert code == EXIT_OK
        runs.append((stdout, {p.name: p.read_bytes() for p in sorted(out.iterdir())}))
    assert runs[0][0].encode() == runs[1][0].encode()
    assert runs[0][1] == runs[1][1]
    assert json.loads(runs[0][0]) == json.loads(runs[2][0])
    assert {k: json.loads(v) if k.endswith(".json") else v for k, v in runs[0][1].items()} == \
        {k: json.loads(v) if k.endswith(".json") else v for k, v in runs[2][1].items()}
    n_inst = len(json.loads(runs[0][0])["instances"])

    evals = []
    for k, threads in enumerate((1, 1, 4)):
        out = tmp_path / f"eval_{k}.json"
        code, stdout = _capture(["eval", "--scenes", "12", "--rng-seed", str(seed), "--threads", str(threads),
                                 "--json", "--out", str(out)], capsys)
        assert code == EXIT_OK
        evals.append((stdout, out.read_bytes()))
    assert evals[0] == evals[1]
    assert json.loads(evals[0][0]) == json.loads(evals[2][0])
    assert json.loads(evals[0][1]) == json.loads(evals[2][1])
    record_property("detail", f"pipeline {n_inst} instances, eval 12 scenes")


@pytest.mark.criterion(9, "ring glyphs with centre seeds: two-stage beats the seed")
def test_c9_hollow_trap(record_property):
    guide = FeatureGuide(EvalConfig())
    lines = []
    for ch in RING_GLYPHS:
        seed_scores, final_scores, leaks = [], [], []
        for k in range(10):
            scene = ring_scene(500 + k, ch)
            inst = scene.instances[0]
            gt = inst.mask.astype(bool)
            final = binarize(two_stage_refine(inst.seed, guide(scene.image), scene.image)).astype(bool)
            seed_scores.append(fiou(binarize(inst.seed).astype(bool), gt))
            final_scores.append(fiou(final, gt))
            hole = inst.interior()
            leaks.append(float((final & hole).sum() / hole.sum()))
        s, f = float(np.mean(seed_scores)), float(np.mean(final_scores))
        lines.append((ch, s, f, float(np.mean(leaks))))
    # leakage into the hole is tracked, not gated
    record_property("detail", "; ".join(f"{ch}: seed {s:.3f} -> {f:.3f}, hole leakage {lk:.3f}"
                                        for ch, s, f, lk in lines))
    for ch, s, f, _ in lines:
        assert f > s, f"{ch}: two-stage {f:.4f} <= seed {s:.4f}"
