import numpy as np
import pytest
from hypothesis import given, strategies as st

from contactcast.annotation_flow import (ClipAnnotation, ContactOrderError, FlowMissingError, build_ground_truth,
                                         densify_annotations, invert_flow, mask_iou, warp_mask)
from contactcast.numerics import SeededRng, ShapeError
from contactcast.scene_sim import SceneConfig, simulate_clip


def test_zero_flow_is_identity():
    m = np.random.default_rng(0).random((6, 7)) < 0.4
    z = np.zeros((6, 7))
    assert np.array_equal(warp_mask(m, (z, z), (z, z)), m)


def test_single_pixel_averaged_displacement():
    m = np.zeros((10, 12), bool)
    m[5, 5] = True  # (x, y) = (5, 5)
    z = np.zeros_like(m, dtype=float)
    out = warp_mask(m, (np.full_like(z, 2.0), z), (np.full_like(z, 4.0), z))
    assert np.argwhere(out).tolist() == [[5, 8]]


def _scatter_oracle(mask, u, v):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                tx, ty = int(np.floor(x + u[y, x] + 0.5)), int(np.floor(y + v[y, x] + 0.5))
                if 0 <= tx < w and 0 <= ty < h:
                    out[ty, tx] = True
    return out


@given(st.integers(0, 2 ** 32))
def test_warp_matches_scatter_oracle(seed):
    rng = np.random.default_rng(seed)
    m = rng.random((8, 8)) < 0.5
    u1, v1, u2, v2 = (rng.uniform(-3, 3, (8, 8)) for _ in range(4))
    got = warp_mask(m, (u1, v1), (u2, v2))
    assert np.array_equal(got, _scatter_oracle(m, (u1 + u2) / 2, (v1 + v2) / 2))
    assert np.array_equal(warp_mask(m, (u1, v1)), _scatter_oracle(m, u1, v1))


def test_warp_errors():
    m = np.zeros((4, 4), bool)
    with pytest.raises(ShapeError):
        warp_mask(m, (np.zeros((4, 5)), np.zeros((4, 5))))
    with pytest.raises(ValueError):
        warp_mask(m)


def test_invert_flow_translation():
    u = np.zeros((6, 6))
    v = np.zeros((6, 6))
    u[2, 1], v[2, 1] = 2.0, 1.0
    bu, bv = invert_flow(u, v)
    assert bu[3, 3] == -2.0 and bv[3, 3] == -1.0
    assert np.count_nonzero(bu) == 1


def _annotation(n, h=6, w=6, contact=None, fps=30.0):
    rng = np.random.default_rng(n)
    masks = [rng.random((n, h, w)) < 0.3 for _ in range(4)]
    contact = n - 1 if contact is None else contact
    return ClipAnnotation(*masks, contact_frame=contact, fps=fps, contact_l=contact, contact_r=contact)


def test_densify_stride_one_is_identity():
    ann = _annotation(5)
    flows = [np.zeros((6, 6))] * 4
    out = densify_annotations(ann, flows, flows)
    for name in ("gamma_l", "gamma_r", "psi_l", "psi_r"):
        assert np.array_equal(getattr(out, name), getattr(ann, name))


def test_densify_nine_frames_stride_four():
    ann = _annotation(9)
    sparse = ann.sparse(4)
    assert sparse.annotated_frames == (0, 4, 8)
    flows = [np.zeros((6, 6))] * 8
    out = densify_annotations(sparse, flows, flows)
    assert out.annotated is None
    for t in (0, 4, 8):
        assert np.array_equal(out.psi_r[t], ann.psi_r[t])
    # zero flow: synthesized frames copy their nearest annotated source on
    # the same side of the contact (frame 8), so frame 7 reads frame 4
    for t, src in ((1, 0), (2, 0), (3, 4), (5, 4), (6, 4), (7, 4)):
        assert np.array_equal(out.gamma_l[t], ann.gamma_l[src]), t


def test_densify_missing_flow_names_frame():
    ann = _annotation(9).sparse(4)
    flows = [np.zeros((6, 6))] * 8
    flows[5] = None
    with pytest.raises(FlowMissingError, match="frame 5"):
        densify_annotations(ann, flows, flows)
    with pytest.raises(FlowMissingError):
        densify_annotations(ann, flows[:3], flows[:3])


def test_densify_recovers_simulator_masks():
    for i in range(5):
        clip = simulate_clip(SceneConfig(), SeededRng(11).split(i))
        dense = densify_annotations(clip.annotations.sparse(4), clip.flow_u, clip.flow_v)
        ious = [mask_iou(dense.psi_r[t], clip.annotations.psi_r[t]) for t in range(clip.n_frames)]
        assert np.mean(ious) >= 0.95


def test_ground_truth_values():
    n, h, w = 61, 3, 3
    z = np.zeros((n, h, w), bool)
    psi = z.copy()
    psi[:, 0, 0] = True
    gamma = z.copy()
    gamma[:, 2, 2] = True
    ann = ClipAnnotation(gamma, z, psi, z.copy(), contact_frame=60, fps=30.0, contact_l=60)
    gt = build_ground_truth(ann)
    assert gt.c_l[30, 0, 0] == 1.0
    assert gt.c_l[60, 0, 0] == 0.0
    assert np.all(gt.c_l[:, 2, 2] == 0.0)
    assert gt.c_l[10, 1, 1] == -1.0
    assert np.all(gt.c_r == -1.0)
    assert np.array_equal(gt.a, psi.astype(np.uint8))
    diffs = np.diff(gt.c_l[:, 0, 0])
    assert np.allclose(diffs, -1 / 30.0, rtol=0, atol=1e-12)


def test_ground_truth_rejects_nao_after_contact():
    n = 5
    z = np.zeros((n, 2, 2), bool)
    psi = z.copy()
    psi[4, 0, 0] = True
    ann = ClipAnnotation(z, z.copy(), psi, z.copy(), contact_frame=2, fps=30.0, contact_l=2)
    with pytest.raises(ContactOrderError):
        build_ground_truth(ann)
    with pytest.raises(ValueError):
        build_ground_truth(_annotation(9).sparse(4))


def test_two_hand_maps_differ_but_share_a():
    scene = SceneConfig(two_hand_prob=1.0)
    found = False
    for i in range(20):
        clip = simulate_clip(scene, SeededRng(12).split(i))
        ann = clip.annotations
        if ann.contact_l is None or ann.contact_l == ann.contact_r:
            continue
        gt = build_ground_truth(ann)
        assert np.array_equal(gt.a, (ann.psi_l | ann.psi_r).astype(np.uint8))
        assert not np.array_equal(gt.c_l, gt.c_r)
        found = True
    assert found


def test_mask_iou():
    a = np.array([[1, 1], [0, 0]], bool)
    b = np.array([[1, 0], [1, 0]], bool)
    assert mask_iou(a, b) == pytest.approx(1 / 3)
    assert mask_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
