"""Flow-based densification of sparse masks and contact-map ground truth.

Masks are boolean ``(frames, height, width)`` arrays.  Forward flow
``flow_u[t], flow_v[t]`` holds the displacement of each pixel of frame ``t``
towards frame ``t + 1`` (u along columns, v along rows).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import ShapeError, same_shape

SIDES = ("l", "r")


class FlowMissingError(ValueError):
    pass


class ContactOrderError(ValueError):
    pass


@dataclass
class ClipAnnotation:
    """Hand/contact masks (gamma) and next-active-object masks (psi) per side.

    ``annotated`` lists the frames whose masks are valid; ``None`` means all
    frames.  ``contact_l``/``contact_r`` are the per-hand contact frames
    (``None`` for a hand that reaches for nothing); ``contact_frame`` is the
    clip's final contact.
    """

    gamma_l: np.ndarray
    gamma_r: np.ndarray
    psi_l: np.ndarray
    psi_r: np.ndarray
    contact_frame: int
    fps: float
    annotation_stride: int = 1
    annotated: tuple[int, ...] | None = None
    contact_l: int | None = None
    contact_r: int | None = None

    def __post_init__(self):
        same_shape(self.gamma_l, self.gamma_r, self.psi_l, self.psi_r,
                   names=("gamma_l", "gamma_r", "psi_l", "psi_r"))
        if self.gamma_l.ndim != 3:
            raise ShapeError("masks must be (frames, height, width)")
        if not 0 <= self.contact_frame < self.n_frames:
            raise ValueError(f"contact_frame {self.contact_frame} outside clip of {self.n_frames} frames")

    @property
    def n_frames(self) -> int:
        return self.gamma_l.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.gamma_l.shape[1:]

    @property
    def annotated_frames(self) -> tuple[int, ...]:
        if self.annotated is None:
            return tuple(range(self.n_frames))
        return self.annotated

    def gamma(self, side: str) -> np.ndarray:
        return self.gamma_l if side == "l" else self.gamma_r

    def psi(self, side: str) -> np.ndarray:
        return self.psi_l if side == "l" else self.psi_r

    def side_contact(self, side: str) -> int | None:
        return self.contact_l if side == "l" else self.contact_r

    def sparse(self, stride: int = 4) -> "ClipAnnotation":
        """Keep masks only at stride-aligned frames and the final (contact) frame."""
        keep = set(range(0, self.n_frames, stride)) | {self.n_frames - 1}
        keep = tuple(sorted(keep))
        blank = np.zeros(self.n_frames, dtype=bool)
        blank[list(keep)] = True
        masked = {
            name: np.where(blank[:, None, None], getattr(self, name), False)
            for name in ("gamma_l", "gamma_r", "psi_l", "psi_r")
        }
        return replace(self, **masked, annotation_stride=stride, annotated=keep)


@dataclass
class GroundTruthMaps:
    c_l: np.ndarray
    c_r: np.ndarray
    a: np.ndarray
    fps: float
    meta: dict = field(default_factory=dict)

    def c(self, side: str) -> np.ndarray:
        return self.c_l if side == "l" else self.c_r


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(np.int64)


def warp_mask(mask, flow_prev=None, flow_next=None) -> np.ndarray:
    """Copy every set pixel (x, y) to ``(x + (u1 + u2)/2, y + (v1 + v2)/2)``.

    ``flow_prev`` and ``flow_next`` are ``(u, v)`` pairs of grids sampled at the
    source pixels.  When only one is given its displacement is used alone.
    Targets are rounded half-up, out-of-frame targets dropped and collisions
    OR-ed.
    """
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got {mask.shape}")
    flows = [f for f in (flow_prev, flow_next) if f is not None]
    if not flows:
        raise ValueError("warp_mask needs at least one flow field")
    for u, v in flows:
        same_shape(mask, u, v, names=("mask", "u", "v"))
    u = sum(np.asarray(f[0], dtype=np.float64) for f in flows) / len(flows)
    v = sum(np.asarray(f[1], dtype=np.float64) for f in flows) / len(flows)
    ys, xs = np.nonzero(mask)
    tx = _round_half_up(xs + u[ys, xs])
    ty = _round_half_up(ys + v[ys, xs])
    h, w = mask.shape
    ok = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    out = np.zeros_like(mask)
    out[ty[ok], tx[ok]] = True
    return out


def invert_flow(u, v) -> tuple[np.ndarray, np.ndarray]:
    """Splat a forward flow into the reverse flow defined on the target frame."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    h, w = u.shape
    ub = np.zeros_like(u)
    vb = np.zeros_like(v)
    ys, xs = np.nonzero((u != 0) | (v != 0))
    tx = _round_half_up(xs + u[ys, xs])
    ty = _round_half_up(ys + v[ys, xs])
    ok = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    ub[ty[ok], tx[ok]] = -u[ys[ok], xs[ok]]
    vb[ty[ok], tx[ok]] = -v[ys[ok], xs[ok]]
    return ub, vb


def _pull_back(field_u, field_v, step_u, step_v):
    # sample (field_u, field_v) at x + step(x), on the source grid
    h, w = step_u.shape
    yy, xx = np.mgrid[0:h, 0:w]
    tx = np.clip(_round_half_up(xx + step_u), 0, w - 1)
    ty = np.clip(_round_half_up(yy + step_v), 0, h - 1)
    return field_u[ty, tx], field_v[ty, tx]


def _step_estimates(fwd_u, fwd_v):
    """Two estimates of one step's displacement: the flow itself and the
    negated reverse flow read at the flow's target."""
    bu, bv = invert_flow(fwd_u, fwd_v)
    ru, rv = _pull_back(bu, bv, fwd_u, fwd_v)
    return (fwd_u, fwd_v), (-ru, -rv)


def densify_annotations(sparse: ClipAnnotation, flow_u, flow_v) -> ClipAnnotation:
    """Fill every frame by warping from the nearest annotated frame.

    Forward steps use the flow ``t -> t+1``; backward steps use its inverse.
    Annotated frames are copied verbatim.  A hand mask is sourced from the
    same side of that hand's contact frame, a next-active-object mask from
    the same side of the clip's contact frame.
    """
    n = sparse.n_frames
    known = sorted(sparse.annotated_frames)
    if not known:
        raise ValueError("no annotated frames")
    if flow_u is None or flow_v is None:
        flow_u, flow_v = [], []
    n_steps = len(flow_u)

    def fwd(t):
        if t >= n_steps or flow_u[t] is None or flow_v[t] is None:
            raise FlowMissingError(f"missing flow for step {t}->{t + 1} (frame {t})")
        return np.asarray(flow_u[t], dtype=np.float64), np.asarray(flow_v[t], dtype=np.float64)

    forward_cache: dict[int, tuple] = {}
    backward_cache: dict[int, tuple] = {}

    def forward_step(t):
        if t not in forward_cache:
            forward_cache[t] = _step_estimates(*fwd(t))
        return forward_cache[t]

    def backward_step(t):
        # displacement estimates for frame t+1 -> t, on the frame t+1 grid
        if t not in backward_cache:
            bu, bv = invert_flow(*fwd(t))
            backward_cache[t] = _step_estimates(bu, bv)
        return backward_cache[t]

    # a mask changes content at its hand's contact (gamma gains the touched
    # object, psi ends), so warping never crosses that event when an
    # annotated frame exists on the same side of it
    def event(side):
        c = sparse.side_contact(side)
        return sparse.contact_frame if c is None else c

    events = {"gamma_l": sparse.contact_l, "gamma_r": sparse.contact_r,
              "psi_l": event("l"), "psi_r": event("r")}
    names = ("gamma_l", "gamma_r", "psi_l", "psi_r")
    out = {name: np.array(getattr(sparse, name), dtype=bool, copy=True) for name in names}
    known_set = set(known)
    for f in range(n):
        if f in known_set:
            continue
        for name in names:
            event = events[name]
            same = known if event is None else [k for k in known if (k >= event) == (f >= event)] or known
            prev = max((k for k in same if k < f), default=None)
            nxt = min((k for k in same if k > f), default=None)
            use_prev = nxt is None or (prev is not None and f - prev <= nxt - f)
            if use_prev:
                mask = getattr(sparse, name)[prev]
                for t in range(prev, f):
                    mask = warp_mask(mask, *forward_step(t))
            else:
                mask = getattr(sparse, name)[nxt]
                for t in range(nxt - 1, f - 1, -1):
                    mask = warp_mask(mask, *backward_step(t))
            out[name][f] = mask
    return replace(sparse, **out, annotation_stride=1, annotated=None)


def build_ground_truth(dense: ClipAnnotation) -> GroundTruthMaps:
    """Contact anticipation maps: -1 background, t_c on the next active
    object, 0 on hands and contacted objects."""
    if dense.annotated is not None and len(dense.annotated) != dense.n_frames:
        raise ValueError("build_ground_truth needs a dense annotation")
    maps = {}
    for side in SIDES:
        psi = dense.psi(side)
        gamma = dense.gamma(side)
        contact = dense.side_contact(side)
        c = np.full(psi.shape, -1.0)
        for tau in range(dense.n_frames):
            if psi[tau].any():
                if contact is None or tau > contact:
                    raise ContactOrderError(
                        f"side {side}: next-active-object pixels at frame {tau} after contact frame {contact}")
                c[tau][psi[tau]] = (contact - tau) / dense.fps
            c[tau][gamma[tau]] = 0.0
        maps[side] = c
    a = (dense.psi_l | dense.psi_r).astype(np.uint8)
    return GroundTruthMaps(c_l=maps["l"], c_r=maps["r"], a=a, fps=dense.fps)


def mask_iou(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union
