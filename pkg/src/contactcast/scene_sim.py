"""Synthetic egocentric kitchen: reaching hands, objects, exact flow, transcripts.

Two levels of output:

* :func:`simulate_timeline` produces a symbolic activity (per-frame contact
  states, hand positions, action transcript) driven by a first-order Markov
  kernel over (verb, noun) actions.  This is cheap and feeds forecasting.
* :func:`simulate_activity` / :func:`simulate_clip` additionally render each
  reach as a :class:`SyntheticClip` with occupancy frames, exact forward flow
  and dense hand/object masks.

Rendering is binary occupancy: background 0, objects 0.5, hands 1.0.  Hand
positions are rounded to whole pixels each frame, so flow is integer and
rigid bodies warp exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .annotation_flow import ClipAnnotation
from .numerics import SeededRng, read_tensor, write_tensor
from .state_graph import NONE, ContactState

HAND_LABEL = -2
BACKGROUND_LABEL = -1
SIDE_INDEX = {"l": 0, "r": 1}

DEFAULT_NOUNS = ("cup", "plate", "bowl", "pan", "onion", "carrot", "bottle", "jar")
DEFAULT_TOOLS = ("knife", "spoon", "sponge")
DEFAULT_VERBS = (
    {"name": "take", "tool": None, "bimanual": False},
    {"name": "cut", "tool": "knife", "bimanual": False},
    {"name": "stir", "tool": "spoon", "bimanual": False},
    {"name": "wash", "tool": "sponge", "bimanual": False},
    {"name": "open", "tool": None, "bimanual": True},
)


class LayoutError(RuntimeError):
    pass


class KernelError(ValueError):
    pass


def min_jerk_position(tau: float) -> float:
    """Normalized minimum-jerk displacement 10t^3 - 15t^4 + 6t^5."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    return tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)


def min_jerk_velocity(tau: float) -> float:
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    return 30.0 * tau * tau * (1.0 - tau) ** 2


# --------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class SceneObject:
    class_id: int
    center: tuple[int, int]  # (x, y) pixels
    extent: tuple[int, int]  # (h, w), odd
    shape: str = "rectangle"

    def moved(self, center) -> "SceneObject":
        return SceneObject(self.class_id, (int(center[0]), int(center[1])), self.extent, self.shape)

    def mask(self, height: int, width: int) -> np.ndarray:
        cx, cy = self.center
        hh, hw = self.extent[0] // 2, self.extent[1] // 2
        yy, xx = np.ogrid[0:height, 0:width]
        if self.shape == "disc":
            r = min(hh, hw)
            return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        return (np.abs(xx - cx) <= hw) & (np.abs(yy - cy) <= hh)

    def fits(self, height: int, width: int) -> bool:
        cx, cy = self.center
        hh, hw = self.extent[0] // 2, self.extent[1] // 2
        return hw <= cx < width - hw and hh <= cy < height - hh

    def boundary_point(self, p) -> tuple[float, float]:
        """Point on the object's boundary nearest to ``p`` (for p outside)."""
        cx, cy = self.center
        px, py = float(p[0]), float(p[1])
        if self.shape == "disc":
            r = min(self.extent) // 2
            dx, dy = px - cx, py - cy
            d = math.hypot(dx, dy)
            if d == 0:
                return (cx, cy - r)
            return (cx + r * dx / d, cy + r * dy / d)
        hh, hw = self.extent[0] // 2, self.extent[1] // 2
        bx = min(max(px, cx - hw), cx + hw)
        by = min(max(py, cy - hh), cy + hh)
        if bx == px and by == py:  # inside: push to nearest edge
            gaps = {(cx - hw, py): px - (cx - hw), (cx + hw, py): cx + hw - px,
                    (px, cy - hh): py - (cy - hh), (px, cy + hh): cy + hh - py}
            bx, by = min(gaps, key=gaps.get)
        return (bx, by)


@dataclass(frozen=True)
class HandTrajectory:
    side: str
    start: tuple[float, float]
    end: tuple[float, float]
    duration: float
    fps: float
    target_object: int | None = None

    def __post_init__(self):
        if self.duration < 0 or (self.duration == 0 and self.distance > 0):
            raise ValueError("duration must be > 0 for a moving hand")

    @property
    def distance(self) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])

    @property
    def n_steps(self) -> int:
        if self.distance == 0:
            return 0
        return max(1, int(round(self.duration * self.fps)))

    def position(self, frame: int) -> tuple[float, float]:
        n = self.n_steps
        s = 1.0 if n == 0 else min_jerk_position(min(frame / n, 1.0))
        return (self.start[0] + (self.end[0] - self.start[0]) * s,
                self.start[1] + (self.end[1] - self.start[1]) * s)

    def pixel(self, frame: int) -> tuple[int, int]:
        x, y = self.position(frame)
        return (int(math.floor(x + 0.5)), int(math.floor(y + 0.5)))


def _square(height, width, center, size) -> np.ndarray:
    cx, cy = center
    half = size // 2
    yy, xx = np.ogrid[0:height, 0:width]
    return (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= half)


# --------------------------------------------------------------------------
# configs


@dataclass
class SceneConfig:
    height: int = 64
    width: int = 114
    fps: float = 30.0
    n_objects: int = 4
    n_classes: int = 11
    object_size: tuple[int, int] = (7, 11)
    hand_size: int = 5
    duration: tuple[float, float] = (0.5, 1.5)
    two_hand_prob: float = 0.3
    carry_prob: float = 0.5
    disc_prob: float = 0.3
    margin: int = 4
    max_retries: int = 200
    annotation_stride: int = 4


@dataclass
class ActivityConfig:
    nouns: tuple[str, ...] = DEFAULT_NOUNS
    tools: tuple[str, ...] = DEFAULT_TOOLS
    verbs: tuple[dict, ...] = DEFAULT_VERBS
    actions: tuple | None = None  # explicit (verb, noun) pairs
    n_actions: int = 16
    kernel: str = "structured"  # structured | deterministic | uniform
    kernel_matrix: tuple | None = None
    kernel_peak: float = 0.7
    kernel_fanout: int = 3
    kernel_seed: int = 1
    layout_seed: int = 2
    layout_jitter: int = 2
    n_steps: int = 30
    reach_s: tuple[float, float] = (0.4, 1.2)
    action_s: tuple[float, float] = (0.8, 1.6)
    gap_s: tuple[float, float] = (0.1, 0.3)
    n_distractors: int = 3


@dataclass
class Vocabulary:
    nouns: tuple[str, ...]
    tools: tuple[str, ...]
    verbs: tuple[dict, ...]
    actions: tuple[tuple[str, str], ...]

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(self.nouns) + tuple(self.tools)

    def class_id(self, name: str) -> int:
        return self.classes.index(name)

    def verb(self, name: str) -> dict:
        for v in self.verbs:
            if v["name"] == name:
                return v
        raise KeyError(name)

    @property
    def action_names(self) -> list[str]:
        return [f"{v} {n}" for v, n in self.actions]

    def to_dict(self) -> dict:
        return {"nouns": list(self.nouns), "tools": list(self.tools),
                "verbs": [dict(v) for v in self.verbs],
                "actions": [list(a) for a in self.actions]}


def build_vocabulary(cfg: ActivityConfig) -> Vocabulary:
    verbs = tuple(dict(v) for v in cfg.verbs)
    if cfg.actions is not None:
        actions = tuple((str(v), str(n)) for v, n in cfg.actions)
    else:
        combos = [(v["name"], n) for n in cfg.nouns for v in verbs]
        rng = SeededRng(cfg.kernel_seed).split("actions")
        if cfg.n_actions > len(combos):
            raise ValueError(f"n_actions={cfg.n_actions} exceeds {len(combos)} verb-noun pairs")
        # every noun gets at least one action, the rest drawn at random
        first = [(verbs[int(rng.integers(len(verbs)))]["name"], n) for n in cfg.nouns]
        if cfg.n_actions < len(first):
            first = first[:cfg.n_actions]
        rest = [c for c in combos if c not in first]
        picks = rng.choice(len(rest), size=cfg.n_actions - len(first), replace=False)
        actions = tuple(sorted(first + [rest[int(i)] for i in picks], key=lambda a: (a[1], a[0])))
    return Vocabulary(tuple(cfg.nouns), tuple(cfg.tools), verbs, actions)


def validate_kernel(kernel) -> np.ndarray:
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] == 0:
        raise KernelError(f"kernel must be square, got shape {k.shape}")
    if np.any(k < 0) or not np.all(np.isfinite(k)):
        raise KernelError("kernel entries must be finite and non-negative")
    if not np.allclose(k.sum(axis=1), 1.0, atol=1e-9):
        raise KernelError("kernel rows must sum to 1")
    return k


def build_kernel(cfg: ActivityConfig, n_actions: int) -> np.ndarray:
    if cfg.kernel_matrix is not None:
        return validate_kernel(cfg.kernel_matrix)
    a = n_actions
    if cfg.kernel == "uniform":
        return np.full((a, a), 1.0 / a)
    rng = SeededRng(cfg.kernel_seed).split("kernel")
    succ = rng.permutation(a)
    for i in range(a):  # avoid self-successors
        if succ[i] == i:
            j = (i + 1) % a
            succ[i], succ[j] = succ[j], succ[i]
    if cfg.kernel == "deterministic":
        # a single forced cycle through all actions
        order = rng.permutation(a)
        k = np.zeros((a, a))
        for i in range(a):
            k[order[i], order[(i + 1) % a]] = 1.0
        return k
    if cfg.kernel != "structured":
        raise KernelError(f"unknown kernel kind {cfg.kernel!r}")
    k = np.zeros((a, a))
    for i in range(a):
        k[i, succ[i]] = cfg.kernel_peak
        others = [j for j in range(a) if j != succ[i]]
        fan = min(cfg.kernel_fanout, len(others))
        if fan == 0:
            k[i, succ[i]] = 1.0
            continue
        alts = rng.choice(others, size=fan, replace=False)
        k[i, alts] += (1.0 - cfg.kernel_peak) / fan
    return validate_kernel(k)


def bayes_accuracy(kernel) -> float:
    """Stationary-weighted accuracy of always predicting each row's argmax."""
    k = validate_kernel(kernel)
    vals, vecs = np.linalg.eig(k.T)
    pi = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    pi = pi / pi.sum()
    return float(np.dot(pi, k.max(axis=1)))


def sample_action_path(kernel, n_steps: int, rng: SeededRng, start: int | None = None) -> list[int]:
    k = validate_kernel(kernel)
    a = k.shape[0]
    cur = int(rng.integers(a)) if start is None else int(start)
    path = [cur]
    cdf = np.cumsum(k, axis=1)
    for _ in range(n_steps - 1):
        u = rng.random()
        cur = int(min(np.searchsorted(cdf[cur], u, side="right"), a - 1))
        path.append(cur)
    return path


def build_layout(vocab: Vocabulary, scene: SceneConfig, layout_seed: int) -> list[SceneObject]:
    """Home position of every object class on a grid of slots above the hands."""
    n = len(vocab.classes)
    rows = 3
    cols = int(math.ceil(n / rows))
    rng = SeededRng(layout_seed).split("layout")
    slots = rng.permutation(rows * cols)[:n]
    lo, hi = scene.object_size
    homes = []
    for cls, slot in enumerate(slots):
        r, c = divmod(int(slot), cols)
        cx = int(round(scene.width * (c + 0.5) / cols))
        cy = int(round(scene.height * 0.72 * (r + 0.5) / rows)) + 2
        h = int(rng.integers(lo // 2, hi // 2 + 1)) * 2 + 1
        w = int(rng.integers(lo // 2, hi // 2 + 1)) * 2 + 1
        shape = "disc" if rng.random() < scene.disc_prob else "rectangle"
        homes.append(SceneObject(cls, (cx, cy), (h, w), shape))
    return homes


CARRY_SIZE = 5


def rest_position(scene: SceneConfig, side: str) -> tuple[float, float]:
    """Resting hand, low enough to look like the wearer's and high enough
    that an object trailing below it stays in frame."""
    x = scene.width * (0.22 if side == "l" else 0.78)
    trail = scene.hand_size // 2 + 1 + CARRY_SIZE
    return (float(round(x)), float(scene.height - 1 - trail))


# --------------------------------------------------------------------------
# rendering


@dataclass
class HandSetup:
    trajectory: HandTrajectory
    carried: SceneObject | None = None  # object attached to the hand (center = offset)
    after_contact_holds: SceneObject | None = None  # extra object in gamma from contact on


@dataclass
class SceneSetup:
    objects: list[SceneObject]
    hands: dict[str, HandSetup]
    target: int | None  # index into objects


@dataclass
class SyntheticClip:
    frames: np.ndarray  # (T, H, W) occupancy
    flow_u: np.ndarray  # (T-1, H, W)
    flow_v: np.ndarray
    annotations: ClipAnnotation
    labels: np.ndarray  # (T, H, W) class id per pixel, -1 background, -2 hand
    states: list[ContactState]
    transcript: list[tuple[int, int, int]]
    objects: list[SceneObject]
    hands: dict[str, HandTrajectory]
    start_frame: int = 0

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def contact_frame(self) -> int:
        return self.annotations.contact_frame


def _carry_offset(traj: HandTrajectory, obj: SceneObject, hand_size: int) -> tuple[int, int]:
    dx, dy = traj.end[0] - traj.start[0], traj.end[1] - traj.start[1]
    d = math.hypot(dx, dy)
    ux, uy = (0.0, 1.0) if d == 0 else (dx / d, dy / d)
    reach = hand_size // 2 + max(obj.extent) // 2 + 1
    return (int(round(-ux * reach)), int(round(-uy * reach)))


def render_clip(setup: SceneSetup, scene: SceneConfig, *, transcript=(), start_frame: int = 0) -> SyntheticClip:
    h, w = scene.height, scene.width
    trajs = {s: hs.trajectory for s, hs in setup.hands.items()}
    contact = {s: (t.n_steps if t.target_object is not None else None) for s, t in trajs.items()}
    n_frames = max([0] + [c for c in contact.values() if c is not None]) + 1
    target = setup.objects[setup.target] if setup.target is not None else None
    offsets = {s: (_carry_offset(hs.trajectory, hs.carried, scene.hand_size) if hs.carried else None)
               for s, hs in setup.hands.items()}

    frames = np.zeros((n_frames, h, w))
    labels = np.full((n_frames, h, w), BACKGROUND_LABEL, dtype=np.int32)
    gam = {s: np.zeros((n_frames, h, w), dtype=bool) for s in ("l", "r")}
    psi = {s: np.zeros((n_frames, h, w), dtype=bool) for s in ("l", "r")}
    bodies = []  # per frame: {side: (pixel, body mask)}
    states = []
    static = [o for i, o in enumerate(setup.objects) if i != setup.target]
    for t in range(n_frames):
        body_t = {}
        # static objects, then dropped carried objects, then the target
        for o in static:
            m = o.mask(h, w)
            frames[t][m] = 0.5
            labels[t][m] = o.class_id
        carried_now = {}
        for s, hs in setup.hands.items():
            if hs.carried is None:
                continue
            c = contact[s]
            px = trajs[s].pixel(min(t, c) if c is not None else t)
            obj = hs.carried.moved((px[0] + offsets[s][0], px[1] + offsets[s][1]))
            if c is not None and t >= c:
                m = obj.mask(h, w)
                frames[t][m] = 0.5
                labels[t][m] = obj.class_id
            else:
                carried_now[s] = obj
        if target is not None:
            m = target.mask(h, w)
            frames[t][m] = 0.5
            labels[t][m] = target.class_id
        for s, obj in carried_now.items():
            m = obj.mask(h, w)
            frames[t][m] = 0.5
            labels[t][m] = obj.class_id
        for s, hs in setup.hands.items():
            px = trajs[s].pixel(t)
            hand = _square(h, w, px, scene.hand_size)
            c = contact[s]
            g = hand.copy()
            body = hand.copy()
            if s in carried_now:
                cm = carried_now[s].mask(h, w)
                g |= cm
                body |= cm
            if c is not None and t >= c:
                g |= target.mask(h, w)
            if hs.after_contact_holds is not None and c is not None and t >= c:
                g |= hs.after_contact_holds.mask(h, w)
            gam[s][t] = g
            if c is not None and t < c:
                psi[s][t] = target.mask(h, w)  # ends at this hand's own contact
            body_t[s] = (px, body)
        for s, (px, body) in body_t.items():
            hand = _square(h, w, px, scene.hand_size)
            frames[t][hand] = 1.0
            labels[t][hand] = HAND_LABEL
        # next-active-object masks cover only the visible part of the target
        for s in ("l", "r"):
            for _, body in body_t.values():
                psi[s][t] &= ~body
        bodies.append(body_t)
        states.append(_clip_state(setup, contact, t))

    flow_u = np.zeros((max(n_frames - 1, 0), h, w))
    flow_v = np.zeros_like(flow_u)
    for t in range(n_frames - 1):
        for s in ("l", "r"):
            if s not in bodies[t]:
                continue
            p0, body = bodies[t][s]
            p1 = bodies[t + 1][s][0]
            flow_u[t][body] = p1[0] - p0[0]
            flow_v[t][body] = p1[1] - p0[1]

    last = n_frames - 1
    ann = ClipAnnotation(gamma_l=gam["l"], gamma_r=gam["r"], psi_l=psi["l"], psi_r=psi["r"],
                         contact_frame=last, fps=scene.fps, annotation_stride=1,
                         contact_l=contact.get("l"), contact_r=contact.get("r"))
    return SyntheticClip(frames=frames, flow_u=flow_u, flow_v=flow_v, annotations=ann, labels=labels,
                         states=states, transcript=list(transcript), objects=list(setup.objects),
                         hands=trajs, start_frame=start_frame)


def _clip_state(setup: SceneSetup, contact: dict, t: int) -> ContactState:
    vals = {}
    target_cls = setup.objects[setup.target].class_id if setup.target is not None else NONE
    for s in ("l", "r"):
        hs = setup.hands.get(s)
        if hs is None:
            vals[s] = (NONE, NONE)
            continue
        c = contact[s]
        if c is not None and t >= c:
            ao = target_cls
            nao = NONE
        else:
            ao = hs.carried.class_id if hs.carried is not None else NONE
            nao = target_cls if c is not None else NONE
        vals[s] = (ao, nao)
    return ContactState(vals["r"][0], vals["l"][0], vals["r"][1], vals["l"][1])


def _sample_objects(scene: SceneConfig, rng: SeededRng, n: int, avoid=()) -> list[SceneObject]:
    lo, hi = scene.object_size
    objs: list[SceneObject] = []
    pad = scene.margin + scene.hand_size
    for _ in range(scene.max_retries):
        objs = []
        occupied = np.zeros((scene.height, scene.width), dtype=bool)
        for m in avoid:
            occupied |= m
        ok = True
        for _i in range(n):
            placed = False
            for _try in range(scene.max_retries):
                h = int(rng.integers(lo // 2, hi // 2 + 1)) * 2 + 1
                w = int(rng.integers(lo // 2, hi // 2 + 1)) * 2 + 1
                cx = int(rng.integers(w // 2 + 1, scene.width - w // 2 - 1))
                cy = int(rng.integers(h // 2 + 1, int(scene.height * 0.75) - h // 2))
                shape = "disc" if rng.random() < scene.disc_prob else "rectangle"
                cls = int(rng.integers(scene.n_classes))
                o = SceneObject(cls, (cx, cy), (h, w), shape)
                grown = SceneObject(cls, (cx, cy), (h + 2 * pad, w + 2 * pad), "rectangle").mask(
                    scene.height, scene.width)
                if not o.fits(scene.height, scene.width) or np.any(grown & occupied):
                    continue
                occupied |= o.mask(scene.height, scene.width)
                objs.append(o)
                placed = True
                break
            if not placed:
                ok = False
                break
        if ok:
            return objs
    raise LayoutError(f"could not place {n} objects in {scene.height}x{scene.width} after "
                      f"{scene.max_retries} retries")


def simulate_clip(config: SceneConfig, rng: SeededRng, setup: SceneSetup | None = None) -> SyntheticClip:
    """Render one reach: hand(s) move with a minimum-jerk profile to a target.

    Without ``setup`` a random layout of ``config.n_objects`` objects is drawn;
    with probability ``two_hand_prob`` both hands reach the same target with
    independent durations.
    """
    if setup is None:
        setup = random_setup(config, rng)
    return render_clip(setup, config)


def random_setup(config: SceneConfig, rng: SeededRng) -> SceneSetup:
    if config.n_objects < 2:
        raise ValueError("n_objects must be >= 2")
    rest = [_square(config.height, config.width, rest_position(config, s), config.hand_size + 2 * config.margin)
            for s in ("l", "r")]
    objs = _sample_objects(config, rng, config.n_objects, avoid=rest)
    # distinct classes keep the oracle classifier unambiguous
    classes = rng.permutation(config.n_classes)[: len(objs)]
    objs = [SceneObject(int(c), o.center, o.extent, o.shape) for c, o in zip(classes, objs)]
    target = int(rng.integers(len(objs)))
    two = rng.random() < config.two_hand_prob
    hands = {}
    for s in ("r", "l"):
        start = rest_position(config, s)
        moving = s == "r" or two
        if moving:
            end = objs[target].boundary_point(start)
            dur = float(rng.uniform(*config.duration))
            traj = HandTrajectory(s, start, end, dur, config.fps, target)
        else:
            traj = HandTrajectory(s, start, start, 0.0, config.fps, None)
        carried = None
        if moving and rng.random() < config.carry_prob:
            spare = [c for c in range(config.n_classes) if c not in {o.class_id for o in objs}]
            if spare:
                cls = int(spare[int(rng.integers(len(spare)))])
                carried = SceneObject(cls, (0, 0), (CARRY_SIZE, CARRY_SIZE), "rectangle")
        hands[s] = HandSetup(traj, carried)
    return SceneSetup(objs, hands, target)


# --------------------------------------------------------------------------
# activities


@dataclass
class ReachPlan:
    action: int
    start_frame: int
    contact_frame: int
    target_class: int
    hands: dict  # side -> dict(start, end, duration, carried, moving)


@dataclass
class ActivityTimeline:
    fps: float
    vocab: Vocabulary
    kernel: np.ndarray
    actions: list[int]
    transcript: list[tuple[int, int, int]]  # (action, start_frame, end_frame)
    states: np.ndarray  # (T, 4) ints, ContactState field order
    hand_pos: np.ndarray  # (T, 2, 2): [frame, side(l=0, r=1), (x, y)]
    reaches: list[ReachPlan]
    homes: list[SceneObject]

    @property
    def n_frames(self) -> int:
        return self.states.shape[0]

    def state(self, frame: int) -> ContactState:
        return ContactState(*(int(v) for v in self.states[frame]))


def simulate_timeline(config: ActivityConfig, scene: SceneConfig, rng: SeededRng,
                      vocab: Vocabulary | None = None, kernel=None) -> ActivityTimeline:
    vocab = vocab or build_vocabulary(config)
    kernel = build_kernel(config, len(vocab.actions)) if kernel is None else validate_kernel(kernel)
    homes = build_layout(vocab, scene, config.layout_seed)
    jit = config.layout_jitter
    homes = [o.moved((o.center[0] + int(rng.integers(-jit, jit + 1)),
                      o.center[1] + int(rng.integers(-jit, jit + 1)))) for o in homes]
    actions = sample_action_path(kernel, config.n_steps, rng.split("path"))
    fps = scene.fps
    pos = {s: rest_position(scene, s) for s in ("l", "r")}
    held = {"l": NONE, "r": NONE}
    states: list[tuple] = []
    hand_pos: list = []
    transcript = []
    reaches = []

    def frames_of(rng_range):
        return max(1, int(round(float(rng.uniform(*rng_range)) * fps)))

    def idle(n):
        st = (held["r"], held["l"], NONE, NONE)
        for _ in range(n):
            states.append(st)
            hand_pos.append([pos["l"], pos["r"]])

    idle(frames_of(config.gap_s))
    for a in actions:
        verb_name, noun = vocab.actions[a]
        verb = vocab.verb(verb_name)
        cls = vocab.class_id(noun)
        target = homes[cls]
        t0 = len(states)
        sides = ("r", "l") if verb["bimanual"] else ("r",)
        trajs = {}
        for s in sides:
            if held[s] == cls:
                end = pos[s]
            else:
                end = target.boundary_point(pos[s])
            dur = float(rng.uniform(*config.reach_s))
            trajs[s] = HandTrajectory(s, pos[s], end, dur, fps, cls)
        contact = {s: trajs[s].n_steps for s in sides}
        n = max(contact.values())
        new_left = vocab.class_id(verb["tool"]) if verb["tool"] else (cls if verb["bimanual"] else NONE)
        for f in range(n + 1):
            ao_r = cls if f >= contact["r"] else held["r"]
            nao_r = cls if f < contact["r"] else NONE
            if "l" in contact:
                ao_l = cls if f >= contact["l"] else held["l"]
                nao_l = cls if f < contact["l"] else NONE
            else:
                ao_l = new_left if f >= n else held["l"]
                nao_l = NONE
            states.append((ao_r, ao_l, nao_r, nao_l))
            pl = trajs["l"].position(f) if "l" in trajs else pos["l"]
            pr = trajs["r"].position(f)
            hand_pos.append([pl, pr])
        reaches.append(ReachPlan(
            action=a, start_frame=t0, contact_frame=t0 + n, target_class=cls,
            hands={s: {"start": trajs[s].start, "end": trajs[s].end, "duration": trajs[s].duration,
                       "carried": held[s], "moving": True} for s in sides}
            | ({} if "l" in sides else {"l": {"start": pos["l"], "end": pos["l"], "duration": 0.0,
                                             "carried": held["l"], "moving": False,
                                             "after": new_left}})))
        for s in sides:
            pos[s] = trajs[s].end
        held["r"] = cls
        held["l"] = new_left
        d = frames_of(config.action_s)
        transcript.append((a, t0 + n, t0 + n + d))
        idle(d)
        idle(frames_of(config.gap_s))
    return ActivityTimeline(fps=fps, vocab=vocab, kernel=kernel, actions=actions, transcript=transcript,
                            states=np.asarray(states, dtype=np.int64),
                            hand_pos=np.asarray(hand_pos, dtype=np.float64), reaches=reaches, homes=homes)


def render_reach(timeline: ActivityTimeline, k: int, scene: SceneConfig, rng: SeededRng,
                 n_distractors: int = 3) -> SyntheticClip:
    """Render reach ``k`` of a timeline as a clip ending at contact."""
    plan = timeline.reaches[k]
    homes = timeline.homes
    vocab = timeline.vocab
    carried_classes = {hd["carried"] for hd in plan.hands.values()} - {NONE}
    after = plan.hands["l"].get("after", NONE)
    tool_ids = {vocab.class_id(t) for t in vocab.tools}
    pool = [o for o in homes if o.class_id != plan.target_class and o.class_id not in carried_classes
            and o.class_id not in tool_ids]
    picks = rng.permutation(len(pool))[:n_distractors]
    objects = [homes[plan.target_class]] + [pool[int(i)] for i in sorted(picks)]
    hands = {}
    for s, hd in plan.hands.items():
        target = 0 if hd["moving"] else None
        traj = HandTrajectory(s, tuple(hd["start"]), tuple(hd["end"]), hd["duration"], scene.fps, target)
        carried = None
        if hd["carried"] != NONE and hd["carried"] != plan.target_class:
            base = homes[hd["carried"]]
            carried = SceneObject(base.class_id, (0, 0), (CARRY_SIZE, CARRY_SIZE), base.shape)
        hold_after = None
        if not hd["moving"] and after not in (NONE,) and after != hd["carried"]:
            hold_after = None  # tool pick-up happens off-screen at contact
        hands[s] = HandSetup(traj, carried, hold_after)
    setup = SceneSetup(objects, hands, 0)
    a = plan.action
    row = next(r for r in timeline.transcript if r[0] == a and r[1] == plan.contact_frame)
    transcript = [(a, row[1] - plan.start_frame, row[2] - plan.start_frame)]
    return render_clip(setup, scene, transcript=transcript, start_frame=plan.start_frame)


def simulate_activity(config: ActivityConfig, scene: SceneConfig, rng: SeededRng, vocab=None, kernel=None):
    """Symbolic activity plus one rendered clip per reach: ``(clips, transcript)``."""
    timeline = simulate_timeline(config, scene, rng.split("timeline"), vocab, kernel)
    clips = [render_reach(timeline, k, scene, rng.split("clip", k), config.n_distractors)
             for k in range(len(timeline.reaches))]
    return clips, timeline.transcript, timeline


def empirical_transitions(path, n_actions: int) -> np.ndarray:
    counts = np.zeros((n_actions, n_actions))
    for a, b in zip(path[:-1], path[1:]):
        counts[a, b] += 1
    rows = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)


# --------------------------------------------------------------------------
# dataset directory


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_clip(directory, clip: SyntheticClip) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ann = clip.annotations
    write_tensor(d / "frames.cft", clip.frames.astype(np.float32))
    flow_shape = (max(clip.n_frames - 1, 1),) + clip.frames.shape[1:]
    fu = clip.flow_u if clip.n_frames > 1 else np.zeros(flow_shape)
    fv = clip.flow_v if clip.n_frames > 1 else np.zeros(flow_shape)
    write_tensor(d / "flow_u.cft", fu.astype(np.float32))
    write_tensor(d / "flow_v.cft", fv.astype(np.float32))
    write_tensor(d / "gamma_l.cft", ann.gamma_l.astype(np.uint8))
    write_tensor(d / "gamma_r.cft", ann.gamma_r.astype(np.uint8))
    write_tensor(d / "psi.cft", np.stack([ann.psi_l, ann.psi_r], axis=1).astype(np.uint8))
    write_tensor(d / "labels.cft", clip.labels.astype(np.int32))
    meta = {
        "n_frames": clip.n_frames,
        "contact_frame": ann.contact_frame,
        "contact_l": ann.contact_l,
        "contact_r": ann.contact_r,
        "fps": ann.fps,
        "start_frame": clip.start_frame,
        "transcript": [list(r) for r in clip.transcript],
        "states": [list(s) for s in clip.states],
        "objects": [asdict(o) for o in clip.objects],
        "flow_steps": clip.n_frames - 1,
    }
    dump_json(d / "meta.json", meta)


def read_clip(directory) -> SyntheticClip:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    frames = read_tensor(d / "frames.cft").astype(np.float64)
    steps = meta["flow_steps"]
    fu = read_tensor(d / "flow_u.cft").astype(np.float64)[:steps]
    fv = read_tensor(d / "flow_v.cft").astype(np.float64)[:steps]
    psi = read_tensor(d / "psi.cft").astype(bool)
    ann = ClipAnnotation(gamma_l=read_tensor(d / "gamma_l.cft").astype(bool),
                         gamma_r=read_tensor(d / "gamma_r.cft").astype(bool),
                         psi_l=psi[:, 0], psi_r=psi[:, 1], contact_frame=meta["contact_frame"],
                         fps=meta["fps"], contact_l=meta["contact_l"], contact_r=meta["contact_r"])
    objects = [SceneObject(o["class_id"], tuple(o["center"]), tuple(o["extent"]), o["shape"])
               for o in meta["objects"]]
    return SyntheticClip(frames=frames, flow_u=fu, flow_v=fv, annotations=ann,
                         labels=read_tensor(d / "labels.cft").astype(np.int32),
                         states=[ContactState(*s) for s in meta["states"]],
                         transcript=[tuple(r) for r in meta["transcript"]], objects=objects, hands={},
                         start_frame=meta["start_frame"])


def write_dataset(out_dir, clips: list[SyntheticClip], manifest: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, clip in enumerate(clips):
        name = f"clip_{i:04d}"
        write_clip(out / name, clip)
        names.append(name)
    dump_json(out / "manifest.json", dict(manifest, clips=names))


def read_manifest(data_dir) -> dict:
    return json.loads((Path(data_dir) / "manifest.json").read_text())
