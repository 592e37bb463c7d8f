"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Tolerances and runtime limits are pinned here; the long experiment checks
are marked ``slow`` (they run by default, ``-m "not slow"`` skips them).
"""
import itertools
import json
import time
from collections import Counter

import numpy as np
import pytest

from contactcast.annotation_flow import GroundTruthMaps, build_ground_truth, densify_annotations, mask_iou
from contactcast.cli import main
from contactcast.contact_maps import (PredictionBundle, combined_cam_loss, masked_mae, noise_augment,
                                      superimpose)
from contactcast.eval_harness import (NaoExperimentConfig, TAU_SWEEP, run_nao_experiment, run_sweep,
                                      run_table4, run_table5, sweep_trend, table5_name)
from contactcast.forecaster import CorpusConfig, ForecasterConfig, build_corpus, run_forecast
from contactcast.neural.gradcheck import TOLERANCE, graph_stream_check, predictor_checks, run_layer_checks
from contactcast.numerics import SeededRng
from contactcast.scene_sim import ActivityConfig, SceneConfig, bayes_accuracy, simulate_clip
from contactcast.state_graph import ContactState, ExtractionConfig, build_graph, suppress_duplicates

SEEDS = range(5)
GRAD_TOL = 1e-4
GRAD_SEEDS = 20
IOU_MIN = 0.95
INSTANCES = 1000
N_CORPORA = 50
BAYES_SLACK = 0.05
NAO_MARGIN = 0.10
FUSION_SLACK = 0.01
MIN_STATES = 30


# ---------------------------------------------------------------- 1

def test_gradient_correctness(criterion):
    assert TOLERANCE == GRAD_TOL
    t0 = time.perf_counter()
    worst = run_layer_checks(range(GRAD_SEEDS))
    for s in range(GRAD_SEEDS):
        for part in (graph_stream_check(s), predictor_checks(s)):
            for k, v in part.items():
                worst[k] = max(worst.get(k, 0.0), v)
    dt = time.perf_counter() - t0
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err <= GRAD_TOL and dt < 60 and {"gcn", "lstm", "graph_stream", "cam_predictor"} <= set(worst)
    criterion(1, "gradient correctness", ok,
              f"{len(worst)} checks x {GRAD_SEEDS} seeds, worst {name}={err:.2e}, {dt:.1f}s")


# ---------------------------------------------------------------- 2

def _countdown_violations(dense, gt) -> int:
    bad = 0
    for side in "lr":
        c, psi, gamma = gt.c(side), dense.psi(side), dense.gamma(side)
        contact = dense.side_contact(side)
        if contact is None:
            continue
        for t in range(min(contact, dense.n_frames - 1)):
            live = psi[t] & psi[t + 1] & ~gamma[t] & ~gamma[t + 1]
            bad += int(np.any(np.abs(c[t][live] - c[t + 1][live] - 1.0 / dense.fps) > 1e-12))
            # values on every NAO pixel equal the frame count to contact
            own = psi[t] & ~gamma[t]
            bad += int(np.any(np.abs(c[t][own] * dense.fps - (contact - t)) > 1e-9))
    return bad


@pytest.mark.slow
def test_annotation_pipeline(criterion):
    t0 = time.perf_counter()
    cfg = SceneConfig()
    clip_iou, violations, verbatim = [], 0, True
    for i in range(100):
        clip = simulate_clip(cfg, SeededRng(0).split("acceptance-2", i))
        truth = clip.annotations
        sparse = truth.sparse(cfg.annotation_stride)
        dense = densify_annotations(sparse, clip.flow_u, clip.flow_v)
        kept = set(sparse.annotated_frames)
        ious = []
        for name in ("gamma_l", "gamma_r", "psi_l", "psi_r"):
            for t in range(truth.n_frames):
                a, b = getattr(dense, name)[t], getattr(truth, name)[t]
                if t in kept:
                    verbatim &= bool(np.array_equal(a, b))
                else:
                    ious.append(mask_iou(a, b))
        clip_iou.append(float(np.mean(ious)) if ious else 1.0)
        violations += _countdown_violations(dense, build_ground_truth(dense))
    dt = time.perf_counter() - t0
    ok = min(clip_iou) >= IOU_MIN and violations == 0 and verbatim and dt < 120
    criterion(2, "annotation pipeline", ok,
              f"min clip IoU {min(clip_iou):.3f}, mean {np.mean(clip_iou):.3f}, "
              f"countdown violations {violations}, {dt:.1f}s")


# ---------------------------------------------------------------- 3

def _bce_oracle(p, y, eps=1e-7):
    p = np.clip(p, eps, 1 - eps)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def test_cam_algebra(criterion):
    rng = SeededRng(3)
    fails = Counter()
    for i in range(INSTANCES):
        r = rng.split("instance", i)
        h, w = (int(x) for x in r.integers(1, 9, 2))
        d = r.uniform(0, 5, (h, w))
        g = r.random((h, w)) < 0.4
        # superimposition: 0 under contact, D elsewhere
        out = superimpose(d, g)
        fails["superimpose"] += not (np.all(out[g] == 0) and np.array_equal(out[~g], d[~g]))
        # masked MAE ignores every pixel with C <= 0
        c = r.choice([-1.0, 0.0, 0.3, 1.1, 2.5], size=(h, w))
        d2 = d.copy()
        off = c <= 0
        d2[off] = r.uniform(0, 100, int(off.sum()))
        c2 = c.copy()
        c2[off] = r.choice([-1.0, 0.0], size=int(off.sum()))
        fails["mae"] += masked_mae(d, c) != masked_mae(d2, c2)
        # combined loss = BCE + 0.2 MAE
        soft = [r.random((h, w)), r.random((h, w))]
        cs = [c, r.choice([-1.0, 0.0, 0.7], size=(h, w))]
        bundle = PredictionBundle(d, r.uniform(0, 5, (h, w)), soft[0], soft[1])
        truth = GroundTruthMaps(cs[0], cs[1], np.zeros((h, w), np.uint8), 30.0)
        bce = np.mean([_bce_oracle(soft[k], (cs[k] == 0).astype(float)) for k in range(2)])
        mae = np.mean([masked_mae(dd, cc)[0] for dd, cc in ((bundle.d_l, cs[0]), (bundle.d_r, cs[1]))])
        fails["gamma_0.2"] += not np.isclose(combined_cam_loss(bundle, truth), bce + 0.2 * mae,
                                             rtol=1e-12, atol=1e-12)
        # noise keeps zeros at zero
        cam = np.where(r.random((h, w)) < 0.5, 0.0, r.uniform(0, 3, (h, w)))
        noisy = noise_augment(cam, r.split("noise"), 0.0, float(r.uniform(0, 2)))
        fails["zero_set"] += not (np.all(noisy[cam == 0] == 0) and np.all(noisy >= 0))
    ok = sum(fails.values()) == 0
    criterion(3, "CAM algebra", ok,
              f"{INSTANCES} instances per property, failures {dict(fails) if not ok else 0}")


# ---------------------------------------------------------------- 4

def _random_corpus(rng, n_seq):
    pool = [ContactState(*(int(v) if v >= 0 else -1 for v in rng.integers(-2, 4, 4))) for _ in range(6)]
    seqs, transcripts = [], []
    for _ in range(n_seq):
        n = int(rng.integers(1, 12))
        raw = [pool[int(k)] for k in rng.integers(0, len(pool), n)]
        frames = np.cumsum(rng.integers(1, 4, n)).tolist()
        seqs.append(suppress_duplicates(raw, frames))
        end = frames[-1] + 2
        rows = []
        for _ in range(int(rng.integers(0, 5))):
            a0 = int(rng.integers(0, end))
            rows.append((int(rng.integers(0, 4)), a0, a0 + int(rng.integers(1, 6))))
        transcripts.append(rows)
    return seqs, transcripts


def _oracle_weights(seqs, transcripts):
    trans, co = Counter(), Counter()
    for seq in seqs:
        for i in range(len(seq.states) - 1):
            trans[(seq.states[i], seq.states[i + 1])] += 1
    for seq, rows in zip(seqs, transcripts):
        for s, (f0, f1) in zip(seq.states, seq.frame_spans):
            frames = set(range(f0, f1 + 1))
            for a, a0, a1 in rows:
                if frames & set(range(a0, a1)):
                    co[(s, a)] += 1
    return trans, co


def _rle(xs):
    return [k for k, _ in itertools.groupby(xs)]


def test_graph_correctness(criterion):
    rng = SeededRng(4)
    actions = [(f"v{i}", f"n{i}") for i in range(4)]
    names = [f"c{i}" for i in range(4)]
    mismatches = Counter()
    for k in range(N_CORPORA):
        r = rng.split("corpus", k)
        seqs, transcripts = _random_corpus(r, int(r.integers(1, 8)))
        g = build_graph(seqs, transcripts, None, actions, names)
        trans, co = _oracle_weights(seqs, transcripts)
        ns = g.n_states
        expect = np.eye(g.z)
        for a in g.state_nodes:
            out = sum(c for (x, _), c in trans.items() if x == a)
            for (x, b), c in trans.items():
                if x == a:
                    expect[g.node_of(a), g.node_of(b)] = c / out
            tot = sum(c for (x, _), c in co.items() if x == a)
            for (x, act), c in co.items():
                if x == a:
                    expect[g.node_of(a), ns + act] = c / tot
        mismatches["distributions"] += not np.array_equal(g.adjacency, expect)
        order = r.permutation(len(seqs))
        g2 = build_graph([seqs[i] for i in order], [transcripts[i] for i in order], None, actions, names)
        mismatches["permutation"] += not (g2.state_nodes == g.state_nodes
                                          and np.array_equal(g2.adjacency, g.adjacency)
                                          and np.array_equal(g2.features, g.features))
        raw = [int(v) for v in r.integers(0, 3, int(r.integers(0, 30)))]
        states = [ContactState(v) for v in raw]
        mismatches["rle"] += suppress_duplicates(states).states != [ContactState(v) for v in _rle(raw)]
    ok = sum(mismatches.values()) == 0
    criterion(4, "graph correctness", ok, f"{N_CORPORA} corpora, mismatches {dict(mismatches)}")


# ---------------------------------------------------------------- 5

@pytest.mark.slow
def test_learnability(criterion):
    det = build_corpus(CorpusConfig(n_train=80, activity=ActivityConfig(kernel="deterministic", reach_s=(0.4, 0.8)),
                                    extraction=ExtractionConfig(corruption=0.0)))
    det_acc, times = [], []
    for s in SEEDS:
        t0 = time.perf_counter()
        res = run_forecast(det, ForecasterConfig(epochs=5, embedding_source="random"), s)
        times.append(time.perf_counter() - t0)
        det_acc.append(res.metrics["graph_top1"])
    sto = build_corpus(CorpusConfig(n_train=80, n_test=40, activity=ActivityConfig(kernel_peak=0.8)))
    b = bayes_accuracy(sto.kernel)
    sto_acc = []
    for s in SEEDS:
        t0 = time.perf_counter()
        sto_acc.append(run_forecast(sto, ForecasterConfig(epochs=5), s).metrics["graph_top1"])
        times.append(time.perf_counter() - t0)
    ok = all(a == 1.0 for a in det_acc) and min(sto_acc) >= b - BAYES_SLACK and max(times) < 180
    criterion(5, "learnability", ok,
              f"deterministic {[round(a, 4) for a in det_acc]}, stochastic {[round(a, 3) for a in sto_acc]} "
              f"vs B-0.05={b - BAYES_SLACK:.3f}, slowest run {max(times):.1f}s")


# ---------------------------------------------------------------- 6

@pytest.mark.slow
def test_nao_ordering(criterion):
    t0 = time.perf_counter()
    res = [run_nao_experiment(NaoExperimentConfig(), s) for s in SEEDS]
    dt = time.perf_counter() - t0
    m = {k: float(np.mean([r[k] for r in res])) for k in ("ours", "without_cam", "center_bias")}
    ok = (m["ours"] > m["without_cam"] > m["center_bias"]
          and m["ours"] - m["center_bias"] >= NAO_MARGIN and dt < 600)
    criterion(6, "NAO localization ordering", ok,
              f"ours {m['ours']:.3f} > no-CAM {m['without_cam']:.3f} > centre {m['center_bias']:.3f}, {dt:.0f}s")


# ---------------------------------------------------------------- 7

@pytest.mark.slow
def test_state_channel_ordering(criterion):
    rep = run_table4(build_corpus(CorpusConfig()), ForecasterConfig(), SEEDS)
    m = {a: rep.mean("top1", ablation=a) for a in ("full", "ao_only", "nao_only")}
    ok = m["full"] > m["ao_only"] > m["nao_only"]
    criterion(7, "state-channel ordering", ok, " > ".join(f"{k} {v:.3f}" for k, v in m.items()))


# ---------------------------------------------------------------- 8

@pytest.mark.slow
def test_node_feature_ordering(criterion):
    corpus = build_corpus(CorpusConfig(noun_variants=3))
    rep = run_table5(corpus, ForecasterConfig(), SEEDS)
    arms = [table5_name(f, g) for f, g in (("embeddings", True), ("embeddings", False),
                                           ("identity", True), ("identity", False))]
    m = [rep.mean("top1", ablation=a) for a in arms]
    n_states = len({st for items in corpus.splits.values() for it in items for st in it.states})
    ok = m[0] >= m[1] > m[2] > m[3] and n_states >= MIN_STATES
    criterion(8, "node-feature ordering", ok,
              ", ".join(f"{a} {v:.3f}" for a, v in zip(arms, m)) + f"; {n_states} states")


# ---------------------------------------------------------------- 9

@pytest.mark.slow
def test_anticipation_trend(criterion):
    rep = run_sweep(build_corpus(CorpusConfig()), ForecasterConfig(), SEEDS)
    rho = {s: sweep_trend(rep, s) for s in ("graph", "appearance", "fused")}
    gaps = []
    for tau in TAU_SWEEP:
        fused = rep.mean("top1", ablation="fused", tau_a_or_p=tau)
        best = max(rep.mean("top1", ablation=s, tau_a_or_p=tau) for s in ("graph", "appearance"))
        gaps.append(fused - best)
    fused_curve = [rep.mean("top1", ablation="fused", tau_a_or_p=t) for t in TAU_SWEEP]
    ok = all(r < 0 for r in rho.values()) and min(gaps) >= -FUSION_SLACK
    criterion(9, "anticipation-time trend", ok,
              f"rho {', '.join(f'{k} {v:.2f}' for k, v in rho.items())}; fused {np.round(fused_curve, 3).tolist()}; "
              f"worst fused-best gap {min(gaps) * 100:.2f} pp")


# ---------------------------------------------------------------- 10

def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_determinism(criterion, tmp_path, capsys):
    from pathlib import Path

    cfg = Path(__file__).resolve().parents[1] / "configs" / "smoke.json"
    same = {}
    for cmd in ("simgen", "train", "eval"):
        trees = []
        for run in ("a", "b"):
            out = tmp_path / f"{cmd}-{run}"
            extra = {"simgen": ["--clips", "3"], "train": [], "eval": ["--task", "anticipation", "--seeds", "2"]}[cmd]
            code = main([cmd, "--config", str(cfg), "--seed", "7", "--out", str(out), *extra], env={})
            assert code == 0, cmd
            trees.append(_tree(out))
        same[cmd] = trees[0] == trees[1] and len(trees[0]) > 0
    capsys.readouterr()
    criterion(10, "determinism", all(same.values()), json.dumps(same))
