"""Contact states, state-sequence extraction and the activity graph.

A contact state is the 4-tuple ``(ao_right, ao_left, nao_right, nao_left)``
of object-class indices, ``NONE`` (-1) for an empty channel.  The activity
graph has one node per distinct state plus one per action class:

* every node carries a self-loop of weight 1;
* state -> state edges hold the pooled transition probability;
* state -> action edges hold p(action | state), normalized per state.
"""
from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .numerics import SeededRng, read_tensor, write_tensor

log = logging.getLogger(__name__)

NONE = -1


class ContactState(NamedTuple):
    ao_right: int = NONE
    ao_left: int = NONE
    nao_right: int = NONE
    nao_left: int = NONE

    def objects(self) -> list[int]:
        return [c for c in self if c != NONE]


EMPTY_STATE = ContactState()


class GraphError(ValueError):
    pass


# --------------------------------------------------------------------------
# classification


class OracleClassifier:
    """Rank classes by pixel overlap with a label map.

    ``labels`` holds a class id per pixel (negative for background and
    hands).  With probability ``corruption`` the first two ranks swap, which
    turns the top-1 answer wrong while keeping the truth in the top-5.
    """

    def __init__(self, labels, corruption: float = 0.0, rng: SeededRng | None = None, k: int = 5):
        self.labels = np.asarray(labels)
        self.corruption = float(corruption)
        self.rng = rng
        self.k = k
        if self.corruption > 0 and rng is None:
            raise ValueError("a corrupted classifier needs an rng")

    def __call__(self, mask) -> list[int]:
        hit = self.labels[np.asarray(mask, dtype=bool)]
        hit = hit[hit >= 0]
        if hit.size == 0:
            return []
        counts = np.bincount(hit)
        order = sorted(np.flatnonzero(counts), key=lambda c: (-counts[c], c))  # ties: lowest index
        ranked = [int(c) for c in order[: self.k]]
        if self.corruption > 0 and len(ranked) > 1 and self.rng.random() < self.corruption:
            ranked[0], ranked[1] = ranked[1], ranked[0]
        return ranked


def constrain_active_object(top5, anticipated_history) -> int:
    """Highest-ranked class also anticipated recently; raw top-1 if none is."""
    top5 = list(top5)
    if not top5:
        return NONE
    hist = set(anticipated_history)
    for c in top5:
        if c in hist:
            return int(c)
    return int(top5[0])


def classify_outputs(masks, classifier, anticipated_history=None) -> ContactState:
    """Classify ``(gamma_r, gamma_l, psi_r, psi_l)`` masks into a state.

    Active-object channels use the top-5 intersection with
    ``anticipated_history`` when it is given.
    """
    gamma_r, gamma_l, psi_r, psi_l = masks
    out = []
    for i, m in enumerate((gamma_r, gamma_l, psi_r, psi_l)):
        ranked = classifier(m) if np.any(m) else []
        if i < 2 and anticipated_history is not None:
            out.append(constrain_active_object(ranked, anticipated_history))
        else:
            out.append(int(ranked[0]) if ranked else NONE)
    return ContactState(*out)


# --------------------------------------------------------------------------
# sequences


@dataclass
class StateSequence:
    states: list[ContactState] = field(default_factory=list)
    frame_spans: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self):
        return len(self.states)


def suppress_duplicates(states, frames=None) -> StateSequence:
    """Collapse consecutive repeats; spans are inclusive frame ranges."""
    states = [ContactState(*s) for s in states]
    frames = list(range(len(states))) if frames is None else list(frames)
    if len(frames) != len(states):
        raise ValueError("frames and states differ in length")
    out, spans = [], []
    for s, f in zip(states, frames):
        if out and out[-1] == s:
            spans[-1] = (spans[-1][0], f)
        else:
            out.append(s)
            spans.append((f, f))
    return StateSequence(out, spans)


def sample_frames(start: int, end: int, window: int = 8, stride: int = 2) -> list[int]:
    """Output frames of a sliding window over ``[start, end]`` (inclusive).

    Each window reports at its last frame; the first full window ends at
    ``window - 1`` frames into the timeline.
    """
    base = window - 1
    first = max(start, base)
    first += (-(first - base)) % stride  # align to the absolute sampling grid
    return list(range(first, end + 1, stride))


@dataclass
class ExtractionConfig:
    window: int = 8
    stride: int = 2
    history_frames: int = 100
    corruption: float = 0.0
    k: int = 5


def extract_states(true_states, n_classes: int, cfg: ExtractionConfig, rng: SeededRng,
                   frames=None, groups=None) -> tuple[list[int], list[ContactState]]:
    """Simulated anticipation-module readout over a per-frame state script.

    For every sampled frame each non-empty channel is classified by a noisy
    top-5 classifier: truth first, then random fillers drawn from the truth's
    confusion group (``groups``, a list of class-id lists; all classes by
    default), with ranks 1 and 2 swapped with probability ``corruption``.
    Active objects are constrained by the next-active-object classes
    predicted over the past ``history_frames``.
    """
    groups = [list(range(n_classes))] if groups is None else [list(g) for g in groups]
    group_of = {c: g for g in groups for c in g}
    true_states = np.asarray(true_states)
    n = true_states.shape[0]
    frames = sample_frames(0, n - 1, cfg.window, cfg.stride) if frames is None else list(frames)
    history: deque = deque()
    out = []
    for f in frames:
        while history and history[0][0] < f - cfg.history_frames:
            history.popleft()
        truth = [int(v) for v in true_states[f]]
        ranked = []
        for c in truth:
            if c == NONE:
                ranked.append([])
                continue
            pool = group_of.get(c, range(n_classes))
            fill = [int(x) for x in rng.permutation(list(pool)) if x != c][: cfg.k - 1]
            r = [c] + fill
            if cfg.corruption > 0 and rng.random() < cfg.corruption:
                r[0], r[1] = r[1], r[0]
            ranked.append(r)
        anticip = {c for _, c in history}
        ao = [constrain_active_object(r, anticip) if r else NONE for r in ranked[:2]]
        nao = [r[0] if r else NONE for r in ranked[2:]]
        for c in nao:
            if c != NONE:
                history.append((f, c))
        out.append(ContactState(ao[0], ao[1], nao[0], nao[1]))
    return frames, out


def extract_clip_states(clip, classifier_factory, cfg: ExtractionConfig, masks=None):
    """Per-frame states of a rendered clip from its (or predicted) masks.

    ``classifier_factory(t)`` returns a classifier for frame ``t``;
    ``masks`` defaults to the clip's dense annotation.
    """
    ann = clip.annotations if masks is None else masks
    history: deque = deque()
    states = []
    for t in range(ann.n_frames):
        while history and history[0][0] < t - cfg.history_frames:
            history.popleft()
        clf = classifier_factory(t)
        s = classify_outputs((ann.gamma_r[t], ann.gamma_l[t], ann.psi_r[t], ann.psi_l[t]), clf,
                             {c for _, c in history})
        for c in (s.nao_right, s.nao_left):
            if c != NONE:
                history.append((t, c))
        states.append(s)
    return states


# --------------------------------------------------------------------------
# ablations on states


def ablate_state(state: ContactState, mode: str) -> ContactState:
    """``full`` keeps all channels; ``ao_only``/``nao_only`` blank the other
    pair; ``joint`` merges hands, keeping one class per role (the right-hand
    one when both are set)."""
    s = ContactState(*state)
    if mode == "full":
        return s
    if mode == "ao_only":
        return ContactState(s.ao_right, s.ao_left, NONE, NONE)
    if mode == "nao_only":
        return ContactState(NONE, NONE, s.nao_right, s.nao_left)
    if mode == "joint":
        ao = s.ao_right if s.ao_right != NONE else s.ao_left
        nao = s.nao_right if s.nao_right != NONE else s.nao_left
        return ContactState(ao, NONE, nao, NONE)
    raise ValueError(f"unknown state ablation {mode!r}")


# --------------------------------------------------------------------------
# embeddings


class EmbeddingTable:
    """Token -> vector of dimension ``dim``; unknown tokens map to zeros."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        self.dim = int(dim)
        self.vectors = {}
        for k, v in vectors.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (self.dim,):
                raise ValueError(f"embedding {k!r} has shape {v.shape}, expected ({self.dim},)")
            self.vectors[k] = v
        self._warned: set[str] = set()

    def __contains__(self, token):
        return token in self.vectors

    def get(self, token: str) -> np.ndarray:
        v = self.vectors.get(token)
        if v is None:
            if token not in self._warned:
                log.warning("no embedding for %r, using zeros", token)
                self._warned.add(token)
            return np.zeros(self.dim)
        return v

    @classmethod
    def random(cls, tokens, dim: int = 16, seed: int = 0) -> "EmbeddingTable":
        """Unit vectors; mutually orthogonal while ``len(tokens) <= dim``."""
        tokens = list(tokens)
        rng = SeededRng(seed).split("embeddings")
        g = rng.normal(0.0, 1.0, (dim, max(dim, len(tokens))))
        if len(tokens) <= dim:
            q, _ = np.linalg.qr(g[:, :dim])
            mat = q[:, : len(tokens)]
        else:
            mat = g[:, : len(tokens)] / np.linalg.norm(g[:, : len(tokens)], axis=0)
        return cls({t: mat[:, i].copy() for i, t in enumerate(tokens)}, dim)

    @classmethod
    def from_cooccurrence(cls, sentences, tokens, dim: int = 16, window: int = 3) -> "EmbeddingTable":
        """Word vectors factorized from a token corpus.

        Symmetric-window counts -> positive PMI -> truncated SVD, rows scaled
        by the root singular values and normalized to unit length.  Tokens
        that never occur get zero vectors.
        """
        tokens = list(tokens)
        index = {t: i for i, t in enumerate(tokens)}
        n = len(tokens)
        counts = np.zeros((n, n))
        for sent in sentences:
            ids = [index[t] for t in sent if t in index]
            for i, a in enumerate(ids):
                for b in ids[i + 1:i + 1 + window]:
                    counts[a, b] += 1.0
                    counts[b, a] += 1.0
        total = counts.sum()
        if total == 0:
            return cls({t: np.zeros(dim) for t in tokens}, dim)
        row = counts.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            pmi = np.log(counts * total / (row * row.T))
        ppmi = np.where(np.isfinite(pmi) & (pmi > 0), pmi, 0.0)
        u, s, _ = np.linalg.svd(ppmi)
        k = min(dim, n)
        mat = np.zeros((n, dim))
        mat[:, :k] = u[:, :k] * np.sqrt(s[:k])
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        mat = np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)
        return cls({t: mat[i].copy() for i, t in enumerate(tokens)}, dim)

    @classmethod
    def load_text(cls, path) -> "EmbeddingTable":
        """GloVe-style text: ``token v1 v2 ...`` per line."""
        vectors = {}
        dim = None
        for line in Path(path).read_text().splitlines():
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            vec = np.array([float(x) for x in parts[1:]])
            if dim is None:
                dim = vec.size
            vectors[parts[0]] = vec
        if dim is None:
            raise ValueError(f"{path}: no embeddings")
        return cls(vectors, dim)


# --------------------------------------------------------------------------
# graph


@dataclass
class ActivityGraph:
    state_nodes: list[ContactState]
    action_nodes: list[tuple[str, str]]
    adjacency: np.ndarray  # (z, z), row = source
    features: np.ndarray  # (z, m)
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        self._index = {s: i for i, s in enumerate(self.state_nodes)}

    @property
    def z(self) -> int:
        return len(self.state_nodes) + len(self.action_nodes)

    @property
    def n_states(self) -> int:
        return len(self.state_nodes)

    def node_of(self, state) -> int:
        return self._index[ContactState(*state)]

    def has_state(self, state) -> bool:
        return ContactState(*state) in self._index

    def action_node(self, action: int) -> int:
        return self.n_states + action

    def transition(self, a, b) -> float:
        return float(self.adjacency[self.node_of(a), self.node_of(b)])

    def cooccurrence(self, state, action: int) -> float:
        return float(self.adjacency[self.node_of(state), self.action_node(action)])

    def normalized_adjacency(self) -> np.ndarray:
        """Row-stochastic adjacency (self-loop included in each row sum)."""
        return self.adjacency / self.adjacency.sum(axis=1, keepdims=True)

    def with_features(self, features) -> "ActivityGraph":
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] != self.z:
            raise GraphError(f"features have {features.shape[0]} rows for {self.z} nodes")
        return ActivityGraph(self.state_nodes, self.action_nodes, self.adjacency, features, self.class_names)

    def to_json(self) -> dict:
        nodes = [{"id": i, "kind": "state", "label": list(s)} for i, s in enumerate(self.state_nodes)]
        nodes += [{"id": self.n_states + j, "kind": "action", "label": list(a)}
                  for j, a in enumerate(self.action_nodes)]
        src, dst = np.nonzero(self.adjacency)
        edges = [{"src": int(i), "dst": int(j), "weight": float(self.adjacency[i, j])} for i, j in zip(src, dst)]
        return {"nodes": nodes, "edges": edges, "class_names": list(self.class_names),
                "feature_dim": int(self.features.shape[1])}

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")
        write_tensor(path.with_suffix(".X.cft"), self.features.astype(np.float32))

    @classmethod
    def load(cls, path) -> "ActivityGraph":
        path = Path(path)
        doc = json.loads(path.read_text())
        states = [ContactState(*n["label"]) for n in doc["nodes"] if n["kind"] == "state"]
        actions = [tuple(n["label"]) for n in doc["nodes"] if n["kind"] == "action"]
        z = len(states) + len(actions)
        adj = np.zeros((z, z))
        for e in doc["edges"]:
            adj[e["src"], e["dst"]] = e["weight"]
        x = read_tensor(path.with_suffix(".X.cft")).astype(np.float64)
        return cls(states, actions, adj, x, tuple(doc["class_names"]))


def transition_counts(sequences) -> Counter:
    counts: Counter = Counter()
    for seq in sequences:
        st = seq.states if isinstance(seq, StateSequence) else [ContactState(*s) for s in seq]
        for a, b in zip(st[:-1], st[1:]):
            if a != b:
                counts[(a, b)] += 1
    return counts


def cooccurrence_counts(sequences, transcripts) -> Counter:
    """Count (state, action) pairs whose frame intervals overlap."""
    counts: Counter = Counter()
    for seq, rows in zip(sequences, transcripts):
        for s, (f0, f1) in zip(seq.states, seq.frame_spans):
            for a, a0, a1 in rows:
                if a0 <= f1 and f0 < a1:
                    counts[(s, int(a))] += 1
    return counts


def featurize_node(node, embeddings: EmbeddingTable, class_names) -> np.ndarray:
    """State: mean embedding of its object nouns (zeros if empty).
    Action ``(verb, noun)``: mean of the verb and noun embeddings."""
    if isinstance(node, ContactState):
        objs = node.objects()
        if not objs:
            return np.zeros(embeddings.dim)
        return np.mean([embeddings.get(class_names[c]) for c in objs], axis=0)
    verb, noun = node
    return 0.5 * (embeddings.get(verb) + embeddings.get(noun))


def identity_features(graph: ActivityGraph) -> np.ndarray:
    return np.eye(graph.z)


def build_graph(sequences, transcripts, embeddings: EmbeddingTable | None, actions, class_names,
                extra_states=()) -> ActivityGraph:
    """Activity graph from training sequences and their action transcripts.

    ``extra_states`` (e.g. states only seen at test time) become nodes with a
    self-loop and no other edges.  Node order is canonical: states sorted by
    tuple, then actions in index order, so the result does not depend on the
    order of ``sequences``.
    """
    sequences = list(sequences)
    transcripts = list(transcripts)
    if not sequences or all(len(s) == 0 for s in sequences):
        raise GraphError("empty corpus")
    if len(transcripts) != len(sequences):
        raise GraphError("one transcript per sequence is required")
    states = {s for seq in sequences for s in seq.states} | {ContactState(*s) for s in extra_states}
    state_nodes = sorted(states)
    actions = [tuple(a) for a in actions]
    z = len(state_nodes) + len(actions)
    idx = {s: i for i, s in enumerate(state_nodes)}
    adj = np.eye(z)

    trans = transition_counts(sequences)
    out_tot: dict = defaultdict(int)
    for (a, _), c in trans.items():
        out_tot[a] += c
    for (a, b), c in trans.items():
        adj[idx[a], idx[b]] = c / out_tot[a]

    co = cooccurrence_counts(sequences, transcripts)
    co_tot: dict = defaultdict(int)
    for (s, _), c in co.items():
        co_tot[s] += c
    for (s, a), c in co.items():
        if not 0 <= a < len(actions):
            raise GraphError(f"action {a} outside the {len(actions)} action classes")
        adj[idx[s], len(state_nodes) + a] = c / co_tot[s]

    if embeddings is None:
        x = np.eye(z)
    else:
        rows = [featurize_node(s, embeddings, class_names) for s in state_nodes]
        rows += [featurize_node(a, embeddings, class_names) for a in actions]
        x = np.asarray(rows)
    return ActivityGraph(state_nodes, actions, adj, x, tuple(class_names))
