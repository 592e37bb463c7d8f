"""Metrics, baselines and the experiment runner.

The runner reproduces, at desk scale and on simulator data, the structure of
four experiments: next-active-object localization (with, without the
contact-map history, and a fixed centre prior), state-channel ablations,
node-feature/GCN ablations and the anticipation-time sweep.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass, replace

import numpy as np
from scipy.stats import spearmanr

from . import __version__
from .annotation_flow import build_ground_truth, densify_annotations
from .contact_maps import binarize, merge_hand_channels, noise_augment
from .forecaster import ForecasterConfig, ForecastCorpus, run_forecast, topk_hits
from .neural.optim import Adam
from .neural.predictors import CamPredictor, NaoPredictor, PredictorConfig
from .numerics import SeededRng, ShapeError
from .scene_sim import SceneConfig, simulate_clip
from .state_graph import NONE

CSV_FIELDS = ("mode", "tau_a_or_p", "ablation", "top1", "top5", "epoch", "seed", "config_hash", "tool_version")
NAO_FIELDS = ("task", "condition", "metric", "value", "seed", "config_hash", "tool_version")
TAU_SWEEP = (0.0, 0.5, 1.0, 1.5, 2.5, 5.0)
P_SWEEP = (0.125, 0.25, 0.5, 0.75, 0.9)
TABLE4_ARMS = ("full", "ao_only", "nao_only")
TABLE5_ARMS = (("embeddings", True), ("embeddings", False), ("identity", True), ("identity", False))
CENTER_SUPPORT = 55
CENTER_REFERENCE = 128


# --------------------------------------------------------------------------
# metrics


def jaccard(pred, truth) -> float:
    """|A and B| / |A or B|; 1 when both are empty."""
    a = np.asarray(pred, dtype=bool)
    b = np.asarray(truth, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"jaccard: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def topk_accuracy(scores, labels, k: int) -> float:
    """Fraction of rows whose label is among the k best scores (ties: lower index first)."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > scores.shape[1]:
        raise ValueError(f"k={k} exceeds {scores.shape[1]} classes")
    return float(topk_hits(scores, np.asarray(labels), k).mean())


def center_bias_support(height: int, width: int) -> int:
    """Prior diameter: 55 px at a 128-px short side, scaled linearly."""
    return int(math.floor(CENTER_SUPPORT * min(height, width) / CENTER_REFERENCE + 0.5))


def center_bias_mask(height: int, width: int, support: int | None = None) -> np.ndarray:
    """Centred isotropic Gaussian thresholded at half its maximum.

    The Gaussian's full width at half maximum equals ``support``, so the
    binary mask is the disc of that diameter around the frame centre.
    """
    s = center_bias_support(height, width) if support is None else support
    sigma = s / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    yy, xx = np.mgrid[0:height, 0:width]
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    g = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma * sigma))
    return g >= 0.5 - 1e-12


def mask_box(mask) -> tuple[int, int, int, int] | None:
    """Tight inclusive box ``(x0, y0, x1, y1)`` of a mask, None if empty."""
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    if ys.size == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def box_iou(a, b) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0]) + 1
    iy = min(a[3], b[3]) - max(a[1], b[1]) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area = lambda r: (r[2] - r[0] + 1) * (r[3] - r[1] + 1)
    return inter / (area(a) + area(b) - inter)


def classify_nao_by_iou(pred_mask, detections) -> tuple[int, bool]:
    """Class of the detection box best overlapping the mask's box.

    Returns ``(class, no_detections)``; the class is ``NONE`` when the mask
    is empty or overlaps no box.  Ties keep the earlier detection.
    """
    if not detections:
        return NONE, True
    box = mask_box(pred_mask)
    if box is None:
        return NONE, False
    best, best_iou = NONE, 0.0
    for det_box, cls in detections:
        v = box_iou(box, det_box)
        if v > best_iou:
            best, best_iou = int(cls), v
    return best, False


def object_detections(clip, frame: int):
    """Perfect detector boxes for every labelled object in a clip frame."""
    labels = clip.labels[frame]
    out = []
    for cls in np.unique(labels[labels >= 0]):
        out.append((mask_box(labels == cls), int(cls)))
    return out


def config_hash(*configs) -> str:
    """First 12 hex digits of the SHA-256 of the canonical JSON."""
    docs = [asdict(c) if is_dataclass(c) else c for c in configs]
    blob = json.dumps(docs, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class EvalReport:
    task: str
    rows: list[dict] = field(default_factory=list)
    seed: int = 0
    config_hash: str = ""
    meta: dict = field(default_factory=dict)

    def add(self, **row):
        self.rows.append(row)

    @property
    def fields(self) -> tuple[str, ...]:
        return CSV_FIELDS if self.task in ("anticipation", "prediction") else NAO_FIELDS

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(self.fields), lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in self.fields})
        return buf.getvalue()

    def check_ranges(self):
        """Raise if any accuracy or Jaccard value leaves [0, 1]."""
        for r in self.rows:
            for k in ("top1", "top5", "value"):
                v = r.get(k)
                if isinstance(v, float) and not 0.0 <= v <= 1.0:
                    raise ValueError(f"{k}={v} outside [0, 1] in {r}")

    def mean(self, key: str, **where) -> float:
        vals = [r[key] for r in self.rows if all(r.get(k) == v for k, v in where.items())]
        return float(np.mean(vals)) if vals else float("nan")


def parallel_map(fn, items, jobs: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally across processes; order kept."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


# --------------------------------------------------------------------------
# next-active-object localization


@dataclass
class NaoExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    n_train_clips: int = 20
    n_test_clips: int = 10
    cam_epochs: int = 2
    nao_epochs: int = 3
    lr: float = 3e-3
    weight_decay: float = 0.0
    batch: int = 8
    frame_stride: int = 2  # training frames taken every n-th frame
    noise_mu: float = 0.0
    noise_sigma: float = 0.25
    eval_stride: int = 4


@dataclass
class PreparedClip:
    clip: object
    frames: np.ndarray
    c: np.ndarray  # (T, 2, H, W) dense ground-truth maps from densified masks
    psi: np.ndarray  # (T, 2, H, W) densified masks
    cam_hat: np.ndarray | None = None  # (T, 2, H, W) predicted maps


def frame_stack(frames, t: int, n: int = 8) -> np.ndarray:
    """Frames ``t-n+1 .. t`` with the first frame repeated before the clip starts."""
    idx = np.clip(np.arange(t - n + 1, t + 1), 0, None)
    return frames[idx]


def prepare_clip(clip, stride: int = 4) -> PreparedClip:
    dense = densify_annotations(clip.annotations.sparse(stride), clip.flow_u, clip.flow_v)
    gt = build_ground_truth(dense)
    c = np.stack([gt.c_l, gt.c_r], axis=1)
    psi = np.stack([dense.psi_l, dense.psi_r], axis=1).astype(np.float64)
    return PreparedClip(clip, clip.frames, c, psi)


def _batches(n, batch, rng):
    order = rng.permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


def train_cam_predictor(clips: list[PreparedClip], cfg: NaoExperimentConfig, rng: SeededRng) -> CamPredictor:
    pc = cfg.predictor
    model = CamPredictor(pc, rng.split("model"))
    items = [(i, t) for i, p in enumerate(clips) for t in range(0, p.frames.shape[0], cfg.frame_stride)]
    opt = Adam(model.layers, lr=cfg.lr, weight_decay=cfg.weight_decay)
    for ep in range(cfg.cam_epochs):
        for sel in _batches(len(items), cfg.batch, rng.split("epoch", ep)):
            x = np.stack([frame_stack(clips[items[j][0]].frames, items[j][1], pc.n_frames) for j in sel])
            c = np.stack([clips[items[j][0]].c[items[j][1]] for j in sel])
            model.loss(x, c)
            opt.step()
    return model


def predict_cams(model: CamPredictor, prep: PreparedClip, batch: int = 16) -> np.ndarray:
    """Superimposed contact maps for every frame of a clip, (T, 2, H, W)."""
    n = prep.frames.shape[0]
    out = []
    for i in range(0, n, batch):
        x = np.stack([frame_stack(prep.frames, t, model.cfg.n_frames) for t in range(i, min(n, i + batch))])
        d, g = model.predict(x)
        out.append(np.where(binarize(g, model.cfg.cam_threshold), 0.0, d))
    return np.concatenate(out, axis=0)


def cam_history(prep: PreparedClip, t: int, n: int = 8) -> np.ndarray:
    """(2n, H, W) stack of past predicted maps, frame-major (l, r per frame)."""
    h = frame_stack(prep.cam_hat, t, n)
    return h.reshape((-1,) + h.shape[2:])


def train_nao_predictor(clips: list[PreparedClip], cfg: NaoExperimentConfig, use_cam: bool,
                        rng: SeededRng) -> NaoPredictor:
    pc = PredictorConfig(**{**asdict(cfg.predictor), "use_cam_history": use_cam})
    model = NaoPredictor(pc, rng.split("model"))
    items = [(i, t) for i, p in enumerate(clips) for t in range(0, p.frames.shape[0], cfg.frame_stride)]
    opt = Adam(model.layers, lr=cfg.lr, weight_decay=cfg.weight_decay)
    noise = rng.split("noise")
    for ep in range(cfg.nao_epochs):
        for sel in _batches(len(items), cfg.batch, rng.split("epoch", ep)):
            x = np.stack([frame_stack(clips[items[j][0]].frames, items[j][1], pc.n_frames) for j in sel])
            hist = None
            if use_cam:
                hist = np.stack([noise_augment(cam_history(clips[items[j][0]], items[j][1], pc.n_frames), noise,
                                               cfg.noise_mu, cfg.noise_sigma) for j in sel])
            psi = np.stack([clips[items[j][0]].psi[items[j][1]] for j in sel])
            model.loss(x, hist, psi)
            opt.step()
    return model


def nao_masks(model: NaoPredictor, prep: PreparedClip, frames_idx) -> np.ndarray:
    n = model.cfg.n_frames
    x = np.stack([frame_stack(prep.frames, t, n) for t in frames_idx])
    hist = np.stack([cam_history(prep, t, n) for t in frames_idx]) if model.cfg.use_cam_history else None
    soft = model.predict(x, hist)
    th = model.cfg.nao_threshold
    return merge_hand_channels(binarize(soft[:, 0], th), binarize(soft[:, 1], th))


def eval_frames(prep: PreparedClip, stride: int) -> list[int]:
    """Annotated frames that still have a next active object."""
    truth = prep.clip.annotations
    return [t for t in range(0, truth.n_frames, stride) if (truth.psi_l[t] | truth.psi_r[t]).any()]


def run_nao_experiment(cfg: NaoExperimentConfig, seed: int) -> dict:
    """Mean Jaccard of the full model, the model without contact-map
    history and the centre prior, over annotated test frames."""
    rng = SeededRng(seed)
    sc = cfg.scene
    clips = [simulate_clip(sc, rng.split("clip", i)) for i in range(cfg.n_train_clips + cfg.n_test_clips)]
    prepared = [prepare_clip(c, sc.annotation_stride) for c in clips]
    train, test = prepared[: cfg.n_train_clips], prepared[cfg.n_train_clips:]
    cam_model = train_cam_predictor(train, cfg, rng.split("cam"))
    for p in prepared:
        p.cam_hat = predict_cams(cam_model, p)
    ours = train_nao_predictor(train, cfg, True, rng.split("nao"))
    plain = train_nao_predictor(train, cfg, False, rng.split("nao-plain"))
    prior = center_bias_mask(sc.height, sc.width)
    scores = {"ours": [], "without_cam": [], "center_bias": [], "classification": []}
    for p in test:
        idx = eval_frames(p, cfg.eval_stride)
        if not idx:
            continue
        truth = [p.clip.annotations.psi_l[t] | p.clip.annotations.psi_r[t] for t in idx]
        m_ours = nao_masks(ours, p, idx)
        m_plain = nao_masks(plain, p, idx)
        for k, t in enumerate(idx):
            scores["ours"].append(jaccard(m_ours[k], truth[k]))
            scores["without_cam"].append(jaccard(m_plain[k], truth[k]))
            scores["center_bias"].append(jaccard(prior, truth[k]))
            cls, _ = classify_nao_by_iou(m_ours[k], object_detections(p.clip, t))
            scores["classification"].append(cls == p.clip.states[t].nao_right or cls == p.clip.states[t].nao_left)
    return {k: float(np.mean(v)) if v else float("nan") for k, v in scores.items()} | {
        "n_frames": len(scores["ours"])}


# --------------------------------------------------------------------------
# forecasting sweeps


def _row(mode, x, ablation, metrics, key, epoch, seed, chash):
    return dict(mode=mode, tau_a_or_p=float(x), ablation=ablation, top1=metrics[f"{key}_top1"],
                top5=metrics[f"{key}_top5"], epoch=epoch, seed=seed, config_hash=chash, tool_version=__version__)


def _forecast_job(job):
    corpus, cfg, seed, streams = job
    return run_forecast(corpus, cfg, seed, streams=streams).metrics


def _run_arms(corpus, arms, seeds, mode, streams, jobs, chash) -> EvalReport:
    """``arms`` is a list of (name, x, config); one job per (arm, seed)."""
    seeds = list(seeds)
    work = [(corpus, c, s, "all" if streams != ("graph",) else "graph") for _, _, c in arms for s in seeds]
    results = iter(parallel_map(_forecast_job, work, jobs))
    rep = EvalReport(mode, config_hash=chash)
    for name, x, c in arms:
        for s in seeds:
            m = next(results)
            for stream in streams:
                rep.add(**_row(mode, x, name or stream, m, stream, c.epochs, s, chash))
    return rep


def run_table4(corpus: ForecastCorpus, cfg: ForecasterConfig, seeds, jobs: int = 1) -> EvalReport:
    """State-channel ablation: full, AO-only, NAO-only."""
    arms = [(a, cfg.tau_a, replace(cfg, state_ablation=a)) for a in TABLE4_ARMS]
    return _run_arms(corpus, arms, seeds, "anticipation", ("graph",), jobs, config_hash(corpus.config, cfg))


def table5_name(features: str, use_gcn: bool) -> str:
    return f"{'gcn' if use_gcn else 'no_gcn'}+{features}"


def run_table5(corpus: ForecastCorpus, cfg: ForecasterConfig, seeds, jobs: int = 1) -> EvalReport:
    """Node features {embeddings, identity} x {GCN, no GCN}."""
    arms = [(table5_name(f, g), cfg.tau_a, replace(cfg, features=f, use_gcn=g)) for f, g in TABLE5_ARMS]
    return _run_arms(corpus, arms, seeds, "anticipation", ("graph",), jobs, config_hash(corpus.config, cfg))


def run_sweep(corpus: ForecastCorpus, cfg: ForecasterConfig, seeds, values=None,
              mode: str = "anticipation", jobs: int = 1) -> EvalReport:
    """Every stream at every anticipation time (or observation ratio)."""
    if values is None:
        values = TAU_SWEEP if mode == "anticipation" else P_SWEEP
    key = "tau_a" if mode == "anticipation" else "p"
    arms = [(None, x, replace(cfg, mode=mode, **{key: x})) for x in values]
    return _run_arms(corpus, arms, seeds, mode, ("graph", "appearance", "fused"), jobs,
                     config_hash(corpus.config, cfg))


def _nao_job(job):
    cfg, seed = job
    return run_nao_experiment(cfg, seed)


def run_nao_suite(cfg: NaoExperimentConfig, seeds, jobs: int = 1) -> EvalReport:
    """Localization Jaccard per condition and classification accuracy, per seed."""
    seeds = list(seeds)
    chash = config_hash(cfg)
    rep = EvalReport("nao_localization", config_hash=chash, meta={"empty_vs_empty_jaccard": 1.0})
    for seed, res in zip(seeds, parallel_map(_nao_job, [(cfg, s) for s in seeds], jobs)):
        for cond in ("ours", "without_cam", "center_bias"):
            rep.add(task="nao_localization", condition=cond, metric="jaccard", value=res[cond], seed=seed,
                    config_hash=chash, tool_version=__version__)
        rep.add(task="nao_classification", condition="ours", metric="accuracy", value=res["classification"],
                seed=seed, config_hash=chash, tool_version=__version__)
    return rep


def run_experiment_suite(corpus: ForecastCorpus, cfg: ForecasterConfig, seeds, feature_corpus=None,
                         jobs: int = 1) -> dict[str, EvalReport]:
    """Anticipation and prediction sweeps plus both ablation grids."""
    return {
        "anticipation": run_sweep(corpus, cfg, seeds, mode="anticipation", jobs=jobs),
        "prediction": run_sweep(corpus, cfg, seeds, mode="prediction", jobs=jobs),
        "table4": run_table4(corpus, cfg, seeds, jobs=jobs),
        "table5": run_table5(feature_corpus or corpus, cfg, seeds, jobs=jobs),
    }


def sweep_trend(rep: EvalReport, stream: str = "fused") -> float:
    """Spearman correlation between sweep value and top-1 over all rows."""
    rows = [r for r in rep.rows if r["ablation"] == stream]
    rho = spearmanr([r["tau_a_or_p"] for r in rows], [r["top1"] for r in rows]).statistic
    return float(rho)


def plot_sweep(rep: EvalReport, path) -> None:
    """Mean top-1 per stream against the sweep value, as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "contactcast"  # stable element ids

    fig, ax = plt.subplots(figsize=(5, 3.2))
    for stream in ("graph", "appearance", "fused"):
        xs = sorted({r["tau_a_or_p"] for r in rep.rows if r["ablation"] == stream})
        ys = [rep.mean("top1", ablation=stream, tau_a_or_p=x) for x in xs]
        ax.plot(xs, ys, marker="o", label=stream)
    ax.set_xlabel("anticipation time (s)" if rep.task == "anticipation" else "observed fraction")
    ax.set_ylabel("top-1 accuracy")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
