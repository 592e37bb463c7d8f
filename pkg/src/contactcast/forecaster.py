"""Two-stream action forecaster.

* Graph stream: two GCN layers embed every node of the activity graph, the
  observed state sequence is read through an LSTM and a dense layer maps its
  last hidden state to action logits.
* Appearance stream: multinomial logistic regression over hand-motion
  summary features of the last observed frames.
* Late fusion: each stream's softmax scores are L2-normalized, concatenated
  and mapped by one dense layer, trained with both streams frozen.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import sparse

from .numerics import SeededRng
from .neural.layers import Dense, GcnLayer, LstmCell
from .neural.losses import softmax, softmax_cross_entropy
from .neural.optim import Adam
from .scene_sim import ActivityConfig, ActivityTimeline, SceneConfig, build_kernel, build_vocabulary, \
    sample_action_path, simulate_timeline
from .state_graph import NONE, ActivityGraph, ContactState, EmbeddingTable, ExtractionConfig, StateSequence, \
    ablate_state, \
    build_graph, extract_states, identity_features, suppress_duplicates

STATE_ABLATIONS = ("full", "ao_only", "nao_only", "joint")
FEATURE_KINDS = ("embeddings", "identity")
EMBEDDING_SOURCES = ("cooccurrence", "random")
FUSION_FITS = ("val", "train", "train+val")


class ForecastError(ValueError):
    pass


@dataclass
class ForecasterConfig:
    gcn_dims: tuple[int, int] = (32, 16)
    lstm_hidden: int = 16
    lr: float = 1e-2
    weight_decay: float = 0.0
    batch: int = 8
    epochs: int = 8
    appearance_epochs: int = 30
    appearance_lr: float = 2e-2
    fusion_epochs: int = 30
    fusion_lr: float = 1e-2
    fusion_scale: float = 10.0
    fusion_fit: str = "train"  # split(s) W_f is fitted on: val | train | train+val
    mode: str = "anticipation"  # anticipation | prediction
    tau_a: float = 1.0
    t_o: float = 3.0
    p: float = 0.25
    state_ablation: str = "full"
    features: str = "embeddings"
    use_gcn: bool = True
    embedding_dim: int = 16
    embedding_seed: int = 0
    embedding_source: str = "cooccurrence"  # cooccurrence | random
    embedding_corpus_actions: int = 4000

    def validate(self):
        if self.mode not in ("anticipation", "prediction"):
            raise ForecastError(f"unknown mode {self.mode!r}")
        if self.mode == "anticipation" and self.tau_a < 0:
            raise ForecastError("tau_a must be >= 0")
        if self.mode == "prediction" and not 0 < self.p <= 1:
            raise ForecastError("p must lie in (0, 1]")
        if self.t_o <= 0:
            raise ForecastError("t_o must be > 0")
        if self.state_ablation not in STATE_ABLATIONS:
            raise ForecastError(f"unknown state ablation {self.state_ablation!r}")
        if self.features not in FEATURE_KINDS:
            raise ForecastError(f"unknown feature kind {self.features!r}")
        if self.fusion_fit not in FUSION_FITS:
            raise ForecastError(f"unknown fusion fit {self.fusion_fit!r}")
        if self.embedding_source not in EMBEDDING_SOURCES:
            raise ForecastError(f"unknown embedding source {self.embedding_source!r}")
        if self.batch < 1 or self.epochs < 0:
            raise ForecastError("batch must be >= 1 and epochs >= 0")


def clip_window(tau_s: float, t_o: float, tau_a: float | None = None, tau_f: float | None = None,
                p: float | None = None) -> tuple[float, float]:
    """Observation window in seconds.

    Anticipation (``tau_a``): ``[tau_s - (t_o + tau_a), tau_s - tau_a]``.
    Prediction (``tau_f``, ``p``): ``[m - t_o, m]`` with ``m = tau_s + p (tau_f - tau_s)``.
    The start is clamped at 0.
    """
    if (tau_a is None) == (p is None):
        raise ForecastError("give exactly one of tau_a (anticipation) or p (prediction)")
    if tau_a is not None:
        if tau_a < 0:
            raise ForecastError("tau_a must be >= 0")
        end = tau_s - tau_a
        start = tau_s - (t_o + tau_a)
    else:
        if tau_f is None or tau_f <= tau_s:
            raise ForecastError("prediction mode needs tau_f > tau_s")
        if not 0 < p <= 1:
            raise ForecastError("p must lie in (0, 1]")
        end = tau_s + p * (tau_f - tau_s)
        start = end - t_o
    start = max(start, 0.0)
    if end <= start:
        raise ForecastError(f"empty window ({start}, {end})")
    return start, end


# --------------------------------------------------------------------------
# corpus


@dataclass
class CorpusConfig:
    n_train: int = 40
    n_val: int = 10
    n_test: int = 20
    scene: SceneConfig = field(default_factory=SceneConfig)
    activity: ActivityConfig = field(default_factory=ActivityConfig)
    extraction: ExtractionConfig = field(default_factory=lambda: ExtractionConfig(corruption=0.2))
    seed: int = 0
    # > 1: each timeline's objects carry fine-grained labels, one of this
    # many per noun, fixed per timeline (a different kitchen's instances)
    noun_variants: int = 1


@dataclass
class ExtractedTimeline:
    timeline: ActivityTimeline
    frames: list[int]
    states: list  # ContactState per sampled frame


@dataclass
class ForecastCorpus:
    config: CorpusConfig
    vocab: object
    kernel: np.ndarray
    splits: dict[str, list[ExtractedTimeline]]

    @property
    def n_actions(self) -> int:
        return len(self.vocab.actions)

    @property
    def class_names(self) -> tuple[str, ...]:
        k = self.config.noun_variants
        if k == 1:
            return self.vocab.classes
        return tuple(f"{n}_{j}" for n in self.vocab.nouns for j in range(k)) + tuple(self.vocab.tools)


def variant_map(n_nouns: int, n_tools: int, variants: np.ndarray, k: int) -> np.ndarray:
    """Coarse class id -> fine class id for one timeline's variant picks."""
    nouns = np.arange(n_nouns) * k + np.asarray(variants, dtype=np.int64)
    tools = n_nouns * k + np.arange(n_tools)
    return np.concatenate([nouns, tools])


def _relabel(states, mapping):
    return [ContactState(*(c if c == NONE else int(mapping[c]) for c in st)) for st in states]


def build_corpus(cfg: CorpusConfig) -> ForecastCorpus:
    vocab = build_vocabulary(cfg.activity)
    kernel = build_kernel(cfg.activity, len(vocab.actions))
    n_classes = len(vocab.classes)
    groups = [[vocab.class_id(n) for n in vocab.nouns], [vocab.class_id(t) for t in vocab.tools]]
    root = SeededRng(cfg.seed)
    splits = {}
    for split, n in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)):
        items = []
        for i in range(n):
            rng = root.split(split, i)
            tl = simulate_timeline(cfg.activity, cfg.scene, rng.split("timeline"), vocab, kernel)
            frames, states = extract_states(tl.states, n_classes, cfg.extraction, rng.split("extract"),
                                            groups=groups)
            if cfg.noun_variants > 1:
                picks = rng.split("variants").integers(cfg.noun_variants, size=len(vocab.nouns))
                states = _relabel(states, variant_map(len(vocab.nouns), len(vocab.tools), picks,
                                                      cfg.noun_variants))
            items.append(ExtractedTimeline(tl, frames, states))
        splits[split] = items
    return ForecastCorpus(cfg, vocab, kernel, splits)


@dataclass
class Sample:
    label: int
    sequence: StateSequence
    end_frame: int
    timeline: int


def window_frames(tl: ActivityTimeline, row, cfg: ForecasterConfig) -> tuple[int, int]:
    a, s0, s1 = row
    fps = tl.fps
    if cfg.mode == "anticipation":
        start, end = clip_window(s0 / fps, cfg.t_o, tau_a=cfg.tau_a)
    else:
        start, end = clip_window(s0 / fps, cfg.t_o, tau_f=s1 / fps, p=cfg.p)
    return int(round(start * fps)), int(round(end * fps))


def make_samples(items: list[ExtractedTimeline], cfg: ForecasterConfig) -> list[Sample]:
    """One sample per action after the first of each timeline."""
    out = []
    for ti, item in enumerate(items):
        frames = np.asarray(item.frames)
        for row in item.timeline.transcript[1:]:
            try:
                f0, f1 = window_frames(item.timeline, row, cfg)
            except ForecastError:
                continue
            sel = np.flatnonzero((frames >= f0) & (frames <= f1))
            if sel.size == 0:
                continue
            states = [ablate_state(item.states[i], cfg.state_ablation) for i in sel]
            seq = suppress_duplicates(states, frames[sel].tolist())
            out.append(Sample(int(row[0]), seq, int(frames[sel[-1]]), ti))
    return out


def timeline_sequences(items: list[ExtractedTimeline], cfg: ForecasterConfig):
    seqs, transcripts = [], []
    for item in items:
        states = [ablate_state(s, cfg.state_ablation) for s in item.states]
        seqs.append(suppress_duplicates(states, item.frames))
        transcripts.append(item.timeline.transcript)
    return seqs, transcripts


def action_sentences(corpus: ForecastCorpus, n_actions: int, seed: int) -> list[list[str]]:
    """Token stream of an independent action sequence: verb, tool, noun per action.

    Plays the part of the external text a word-vector model is fitted on;
    it shares the activity statistics but none of the split timelines.
    """
    rng = SeededRng(seed).split("external-text")
    path = sample_action_path(corpus.kernel, n_actions, rng)
    tools = {v["name"]: v["tool"] for v in corpus.vocab.verbs}
    k = corpus.config.noun_variants
    picks = rng.integers(k, size=len(path))
    sent = []
    for a, j in zip(path, picks):
        verb, noun = corpus.vocab.actions[a]
        sent += [verb] + ([tools[verb]] if tools[verb] else []) + [noun if k == 1 else f"{noun}_{j}"]
    return [sent]


def token_embeddings(corpus: ForecastCorpus, cfg: ForecasterConfig) -> EmbeddingTable:
    tokens = list(corpus.class_names) + [v["name"] for v in corpus.vocab.verbs]
    if cfg.embedding_source == "random":
        return EmbeddingTable.random(tokens, cfg.embedding_dim, cfg.embedding_seed)
    sents = action_sentences(corpus, cfg.embedding_corpus_actions, cfg.embedding_seed)
    table = EmbeddingTable.from_cooccurrence(sents, tokens, cfg.embedding_dim)
    k = corpus.config.noun_variants
    if k > 1:  # action labels name the coarse noun
        for n in corpus.vocab.nouns:
            v = np.mean([table.get(f"{n}_{j}") for j in range(k)], axis=0)
            table.vectors[n] = v / max(np.linalg.norm(v), 1e-12)
    return table


def corpus_graph(corpus: ForecastCorpus, cfg: ForecasterConfig, extra_samples=()) -> ActivityGraph:
    """Graph over training timelines; states seen only in ``extra_samples``
    get self-loop-only nodes."""
    seqs, transcripts = timeline_sequences(corpus.splits["train"], cfg)
    extra = {s for smp in extra_samples for s in smp.sequence.states}
    emb = token_embeddings(corpus, cfg)
    graph = build_graph(seqs, transcripts, emb, corpus.vocab.actions, corpus.class_names, extra)
    if cfg.features == "identity":
        graph = graph.with_features(identity_features(graph))
    return graph


# --------------------------------------------------------------------------
# graph stream


class GraphStream:
    def __init__(self, graph: ActivityGraph, n_actions: int, cfg: ForecasterConfig, rng: SeededRng):
        self.graph = graph
        self.adj = sparse.csr_matrix(graph.normalized_adjacency())
        self.x = np.array(graph.features, dtype=np.float64)
        self.use_gcn = cfg.use_gcn
        d1, d2 = cfg.gcn_dims
        m = self.x.shape[1]
        self.gcn = [GcnLayer(m, d1, "relu", rng.split("gcn1")), GcnLayer(d1, d2, "tanh", rng.split("gcn2"))] \
            if self.use_gcn else []
        in_dim = d2 if self.use_gcn else m
        self.lstm = LstmCell(in_dim, cfg.lstm_hidden, rng.split("lstm"))
        self.wg = Dense(cfg.lstm_hidden, n_actions, "linear", rng.split("wg"))
        self.layers = self.gcn + [self.lstm, self.wg]
        self.n_actions = n_actions
        self.refresh_features()

    def refresh_features(self):
        """Recompute the cached first propagation ``A X`` after editing ``x``."""
        # features are fixed during training, so this runs once; one-hot
        # features stay sparse
        x = sparse.csr_matrix(self.x) if np.count_nonzero(self.x) < 0.1 * self.x.size else self.x
        self._ax = self.adj @ x if self.use_gcn else None

    def node_embeddings(self) -> np.ndarray:
        e = self.x
        for i, layer in enumerate(self.gcn):
            e = layer.forward(e, self.adj, self._ax if i == 0 else None)
        return e

    def _batch(self, seqs):
        t_len = max(len(s) for s in seqs)
        idx = np.zeros((t_len, len(seqs)), dtype=np.int64)
        mask = np.zeros((t_len, len(seqs)))
        for j, s in enumerate(seqs):
            if len(s) == 0:
                raise ForecastError("empty state sequence")
            idx[t_len - len(s):, j] = s
            mask[t_len - len(s):, j] = 1.0
        return idx, mask

    def forward(self, seqs) -> np.ndarray:
        """Logits (N, actions) for sequences of node indices."""
        idx, mask = self._batch(seqs)
        e = self.node_embeddings()
        h = self.lstm.forward(e[idx], mask)
        self._cache = (idx, mask, e.shape)
        return self.wg.forward(h)

    def backward(self, dlogits, input_grad: bool = False):
        """Fills parameter grads; with ``input_grad`` also returns the
        gradient w.r.t. node features."""
        idx, mask, eshape = self._cache
        dh = self.wg.backward(dlogits)
        dxs = self.lstm.backward(dh) * mask[:, :, None]
        if not self.gcn and not input_grad:
            return None
        de = np.zeros(eshape)
        np.add.at(de, idx.ravel(), dxs.reshape(-1, eshape[1]))
        for i in reversed(range(len(self.gcn))):
            de = self.gcn[i].backward(de, input_grad or i > 0)
        return de if input_grad else None

    def scores(self, seqs, batch: int = 256) -> np.ndarray:
        out = [softmax(self.forward(seqs[i:i + batch])) for i in range(0, len(seqs), batch)]
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.n_actions))


def graph_stream_forward(stream: GraphStream, sequence) -> np.ndarray:
    """Softmax scores for one sequence of node indices."""
    if len(sequence) == 0:
        raise ForecastError("empty state sequence")
    return stream.scores([list(sequence)])[0]


def _train_loop(forward_backward, layers, n: int, epochs: int, batch: int, lr: float, rng: SeededRng,
                weight_decay: float = 0.0) -> list[float]:
    opt = Adam(layers, lr=lr, weight_decay=weight_decay)
    log = []
    for ep in range(epochs):
        order = rng.split("epoch", ep).permutation(n)
        total = 0.0
        for i in range(0, n, batch):
            sel = order[i:i + batch]
            total += forward_backward(sel) * len(sel)
            opt.step()
        log.append(total / max(n, 1))
    return log


def train_graph_stream(stream: GraphStream, seqs, labels, cfg: ForecasterConfig, rng: SeededRng,
                       epochs: int | None = None) -> list[float]:
    labels = np.asarray(labels, dtype=np.int64)
    if len(seqs) == 0:
        raise ForecastError("empty corpus")

    def fb(sel):
        logits = stream.forward([seqs[i] for i in sel])
        loss, g = softmax_cross_entropy(logits, labels[sel])
        stream.backward(g)
        return loss

    return _train_loop(fb, stream.layers, len(seqs), cfg.epochs if epochs is None else epochs, cfg.batch,
                       cfg.lr, rng, cfg.weight_decay)


# --------------------------------------------------------------------------
# appearance stream


def appearance_features(tl: ActivityTimeline, end_frame: int, window: int = 8, hand_size: int = 5,
                        margin: int = 4) -> np.ndarray:
    """Summary of the last ``window`` frames before ``end_frame``.

    Layout: right/left hand displacement (4), right/left hand position
    normalized to the frame (4), then per object class the overlap of a
    dilated right-hand box with the class's home box (C) and the right hand's
    heading towards it (C).
    """
    f1 = int(np.clip(end_frame, 0, tl.n_frames - 1))
    f0 = max(f1 - window, 0)
    hp = tl.hand_pos
    disp = hp[f1] - hp[f0]  # (2 sides, xy)
    pos = hp[f1]
    h = float(max(o.center[1] for o in tl.homes) * 2)
    w = float(max(o.center[0] for o in tl.homes) * 2)
    scale = np.array([w, h])
    half = hand_size // 2 + margin
    rx, ry = pos[1]
    over, head = [], []
    v = disp[1]
    speed = np.linalg.norm(v)
    for o in tl.homes:
        hh, hw = o.extent[0] // 2, o.extent[1] // 2
        ix = max(0.0, min(rx + half, o.center[0] + hw) - max(rx - half, o.center[0] - hw))
        iy = max(0.0, min(ry + half, o.center[1] + hh) - max(ry - half, o.center[1] - hh))
        over.append(ix * iy / float((2 * half) ** 2))
        to = np.array([o.center[0] - rx, o.center[1] - ry])
        dist = np.linalg.norm(to)
        head.append(0.0 if speed == 0 or dist == 0 else float(v @ to / (speed * dist)) * min(speed / 5.0, 1.0))
    return np.concatenate([disp.ravel() / 10.0, (pos / scale).ravel() - 0.5, over, head])


class AppearanceStream:
    def __init__(self, n_features: int, n_actions: int, rng: SeededRng | None = None):
        self.dense = Dense(n_features, n_actions, "linear", rng)
        self.layers = [self.dense]
        self.mean = np.zeros(n_features)
        self.std = np.ones(n_features)
        self.n_features = n_features

    def fit_scaler(self, feats):
        self.mean = feats.mean(axis=0)
        self.std = feats.std(axis=0) + 1e-6

    def forward(self, feats) -> np.ndarray:
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        if feats.shape[1] != self.n_features:
            raise ForecastError(f"feature length {feats.shape[1]} != {self.n_features}")
        return self.dense.forward((feats - self.mean) / self.std)

    def backward(self, dlogits):
        self.dense.backward(dlogits)

    def scores(self, feats) -> np.ndarray:
        return softmax(self.forward(feats))


def appearance_stream_forward(stream: AppearanceStream, features) -> np.ndarray:
    return stream.scores(features)[0]


def train_appearance(stream: AppearanceStream, feats, labels, cfg: ForecasterConfig, rng: SeededRng):
    labels = np.asarray(labels, dtype=np.int64)
    stream.fit_scaler(feats)

    def fb(sel):
        loss, g = softmax_cross_entropy(stream.forward(feats[sel]), labels[sel])
        stream.backward(g)
        return loss

    return _train_loop(fb, stream.layers, len(labels), cfg.appearance_epochs, 32, cfg.appearance_lr, rng)


# --------------------------------------------------------------------------
# fusion


def l2_normalize_rows(s) -> np.ndarray:
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    norms = np.linalg.norm(s, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ForecastError("cannot L2-normalize a zero score vector")
    return s / norms


def fusion_input(graph_scores, appearance_scores) -> np.ndarray:
    g = np.atleast_2d(graph_scores)
    a = np.atleast_2d(appearance_scores)
    if g.shape != a.shape:
        raise ForecastError(f"stream score shapes differ: {g.shape} vs {a.shape}")
    return np.concatenate([l2_normalize_rows(g), l2_normalize_rows(a)], axis=1)


class FusionHead:
    def __init__(self, n_actions: int):
        self.dense = Dense(2 * n_actions, n_actions, "linear")
        self.layers = [self.dense]
        self.n_actions = n_actions

    def copy_stream(self, which: int, scale: float = 10.0):
        """Weights that pass one stream through: 0 = graph, 1 = appearance."""
        a = self.n_actions
        w = np.zeros((a, 2 * a))
        w[:, which * a:(which + 1) * a] = scale * np.eye(a)
        self.dense.params["W"][...] = w
        self.dense.params["b"][...] = 0.0

    def forward(self, fused_input):
        return self.dense.forward(fused_input)

    def scores(self, graph_scores, appearance_scores):
        return softmax(self.forward(fusion_input(graph_scores, appearance_scores)))


def fuse(graph_scores, appearance_scores, w_f: FusionHead) -> np.ndarray:
    return w_f.scores(graph_scores, appearance_scores)


def topk_hits(scores, labels, k: int) -> np.ndarray:
    scores = np.atleast_2d(scores)
    labels = np.asarray(labels)
    # stable sort on negated scores: ties rank the lower index first
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return (order == labels[:, None]).any(axis=1)


def train_fusion(head: FusionHead, gs, as_, labels, cfg: ForecasterConfig, rng: SeededRng, fit=None):
    """Fit ``W_f`` on frozen stream scores.

    ``gs, as_, labels`` are validation scores: they pick the stream copied
    into the initial weights and decide whether training is kept.  ``fit``
    optionally gives other ``(gs, as_, labels)`` to train on.
    """
    labels = np.asarray(labels, dtype=np.int64)
    acc_g = topk_hits(gs, labels, 1).mean()
    acc_a = topk_hits(as_, labels, 1).mean()
    better = 0 if acc_g >= acc_a else 1
    head.copy_stream(better, cfg.fusion_scale)
    base = topk_hits(head.scores(gs, as_), labels, 1).mean()
    start = {k: v.copy() for k, v in head.dense.params.items()}
    fg, fa, fl = (gs, as_, labels) if fit is None else fit
    x = fusion_input(fg, fa)
    fl = np.asarray(fl, dtype=np.int64)

    def fb(sel):
        loss, g = softmax_cross_entropy(head.forward(x[sel]), fl[sel])
        head.dense.backward(g)
        return loss

    log = _train_loop(fb, head.layers, len(fl), cfg.fusion_epochs, 16, cfg.fusion_lr, rng)
    if topk_hits(head.scores(gs, as_), labels, 1).mean() < base:
        for k, v in start.items():  # keep the copied stream if training did not help
            head.dense.params[k][...] = v
    return log


# --------------------------------------------------------------------------
# full run


@dataclass
class ForecastResult:
    metrics: dict
    graph_loss: list[float]
    appearance_loss: list[float]
    fusion_loss: list[float]
    graph: ActivityGraph
    stream: GraphStream
    appearance: AppearanceStream | None
    fusion: FusionHead | None


def _node_seqs(graph: ActivityGraph, samples):
    return [[graph.node_of(s) for s in smp.sequence.states] for smp in samples]


def _features(corpus, split, samples):
    items = corpus.splits[split]
    return np.asarray([appearance_features(items[s.timeline].timeline, s.end_frame) for s in samples])


def run_forecast(corpus: ForecastCorpus, cfg: ForecasterConfig, seed: int, streams: str = "graph") -> ForecastResult:
    """Train and evaluate; ``streams`` is ``graph`` or ``all`` (graph,
    appearance and fusion)."""
    cfg.validate()
    if streams not in ("graph", "all"):
        raise ForecastError(f"unknown stream selection {streams!r}")
    rng = SeededRng(seed)
    samples = {k: make_samples(v, cfg) for k, v in corpus.splits.items()}
    if not samples["train"]:
        raise ForecastError("empty corpus")
    graph = corpus_graph(corpus, cfg, samples["val"] + samples["test"] + samples["train"])
    seqs = {k: _node_seqs(graph, v) for k, v in samples.items()}
    labels = {k: np.array([s.label for s in v], dtype=np.int64) for k, v in samples.items()}
    stream = GraphStream(graph, corpus.n_actions, cfg, rng.split("graph"))
    gloss = train_graph_stream(stream, seqs["train"], labels["train"], cfg, rng.split("graph-train"))
    gs = stream.scores(seqs["test"])
    metrics = {"graph_top1": float(topk_hits(gs, labels["test"], 1).mean()),
               "graph_top5": float(topk_hits(gs, labels["test"], 5).mean()),
               "n_train": len(seqs["train"]), "n_test": len(seqs["test"]), "n_states": graph.n_states}
    aloss, floss, app, head = [], [], None, None
    if streams == "all":
        feats = {k: _features(corpus, k, v) for k, v in samples.items()}
        app = AppearanceStream(feats["train"].shape[1], corpus.n_actions, rng.split("appearance"))
        aloss = train_appearance(app, feats["train"], labels["train"], cfg, rng.split("appearance-train"))
        head = FusionHead(corpus.n_actions)
        val = (stream.scores(seqs["val"]), app.scores(feats["val"]), labels["val"])
        fit = None
        if cfg.fusion_fit != "val":
            parts = ["train"] + (["val"] if cfg.fusion_fit == "train+val" else [])
            fit = (np.concatenate([stream.scores(seqs[p]) for p in parts]),
                   np.concatenate([app.scores(feats[p]) for p in parts]),
                   np.concatenate([labels[p] for p in parts]))
        floss = train_fusion(head, *val, cfg, rng.split("fusion-train"), fit=fit)
        as_ = app.scores(feats["test"])
        fs = head.scores(gs, as_)
        metrics.update({
            "appearance_top1": float(topk_hits(as_, labels["test"], 1).mean()),
            "appearance_top5": float(topk_hits(as_, labels["test"], 5).mean()),
            "fused_top1": float(topk_hits(fs, labels["test"], 1).mean()),
            "fused_top5": float(topk_hits(fs, labels["test"], 5).mean()),
        })
    return ForecastResult(metrics, gloss, aloss, floss, graph, stream, app, head)


def config_dict(cfg) -> dict:
    return asdict(cfg)


def with_overrides(cfg, **kw):
    return replace(cfg, **kw)
