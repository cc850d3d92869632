import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from facelf.fusion import PointCloud, SurfaceGrid, depthmap_to_pointcloud
from facelf.lightfield import DepthMap
from facelf.metrics import (REFERENCE_VALUES, DegenerateAlignmentError, EmptyRegionError,
                            RigidTransform, crop_face_region, depth_errors, error_stats,
                            face_pixel_mask, icp_align, interocular, nme, procrustes, rmse,
                            rotation_about, summarize_errors, top_fraction_mean,
                            write_error_heatmap)
from facelf.synth import make_scene, sample_surface


def random_transform(rng, max_deg=10.0, max_t=5.0):
    axis = rng.standard_normal(3)
    R = rotation_about(axis, rng.uniform(0, max_deg))
    t = rng.standard_normal(3)
    return R, t / np.linalg.norm(t) * rng.uniform(0, max_t)


def about_centroid(R, t, c):
    """Rotation R about point c followed by translation t."""
    return RigidTransform(R, c - R @ c + t)


# ------------------------------------------------------------ transforms

def test_rigid_transform_validation():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        RigidTransform(2 * np.eye(3))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(2))


def test_compose_inverse_and_angle(rng):
    a = RigidTransform(rotation_about([0, 0, 1], 30), [1, 2, 3])
    b = RigidTransform(rotation_about([1, 1, 0], -12), [0, -1, 4])
    p = rng.standard_normal((6, 3))
    assert np.allclose((a @ b).apply(p), a.apply(b.apply(p)))
    assert np.allclose(a.inverse().apply(a.apply(p)), p)
    assert a.angle_deg == pytest.approx(30)
    assert RigidTransform().angle_deg == 0.0


@given(st.floats(-179, 179), st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 0.1))
def test_rotation_about_is_proper(angle, axis):
    R = rotation_about(axis, angle)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)
    assert RigidTransform(R).angle_deg == pytest.approx(abs(angle), abs=1e-6)


def test_procrustes_exact(rng):
    src = rng.standard_normal((30, 3)) * 50
    R0, t0 = random_transform(rng, 40, 20)
    T = procrustes(src, src @ R0.T + t0)
    assert np.abs(T.rotation - R0).max() < 1e-9
    assert np.abs(T.translation - t0).max() < 1e-9


def test_procrustes_near_planar_points_stay_proper(rng):
    # planar data admits a reflection that fits equally well; the result must be a rotation
    src = np.column_stack([rng.standard_normal((20, 2)), np.zeros(20)])
    R0 = rotation_about([0.2, 1, 0.3], 25)
    T = procrustes(src, src @ R0.T)
    assert np.linalg.det(T.rotation) == pytest.approx(1.0)
    assert np.allclose(T.rotation, R0, atol=1e-9)


def test_procrustes_degenerate():
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateAlignmentError):
        procrustes(line, line + 1)
    with pytest.raises(DegenerateAlignmentError):
        procrustes(np.zeros((2, 3)), np.zeros((2, 3)))


# ------------------------------------------------------------------ ICP

def face_points(rng, n=1500, seed=2):
    return sample_surface(make_scene(seed), n, rng)


def test_icp_identity(rng):
    pc = PointCloud(face_points(rng))
    T = icp_align(pc, pc)
    assert T.angle_deg < 1e-6 and np.linalg.norm(T.translation) < 1e-6


def test_icp_recovers_small_transforms_with_monotone_history(rng):
    for _ in range(3):
        src = face_points(rng)
        R0, t0 = random_transform(rng)
        c = src.mean(axis=0)
        T0 = about_centroid(R0, t0, c)
        dst = T0.apply(src) + rng.normal(0, 0.1, src.shape)
        hist = []
        T = icp_align(PointCloud(src), PointCloud(dst), history=hist)
        assert (T.inverse() @ T0).angle_deg < 0.5
        assert np.linalg.norm(T.apply(c) - T0.apply(c)) < 0.1
        assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_icp_needs_points():
    with pytest.raises(DegenerateAlignmentError):
        icp_align(PointCloud([[0, 0, 0], [1, 0, 0]]), PointCloud(np.eye(3)))


# -------------------------------------------------------------- errors

def test_rmse_identity_and_offset(rng):
    gt = DepthMap(rng.uniform(500, 700, (10, 12)))
    assert rmse(gt, gt) == 0.0
    assert rmse(DepthMap(gt.depth + 2.0), gt) == pytest.approx(2.0)


def test_rmse_symmetric(rng):
    a = DepthMap(rng.uniform(500, 700, (8, 8)))
    b = DepthMap(rng.uniform(500, 700, (8, 8)))
    assert rmse(a, b) == rmse(b, a)


def test_rmse_of_surface_uses_resampling(rig64):
    xs = np.linspace(-300, 300, 4)
    s = SurfaceGrid(np.full((4, 4), 602.0), xs, xs)
    gt = DepthMap(np.full((64, 64), 600.0))
    assert rmse(s, gt, rig64) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        rmse(s, gt)


def test_depth_errors_region_checks(rng):
    a = DepthMap(np.full((4, 4), np.nan))
    with pytest.raises(EmptyRegionError):
        depth_errors(a, DepthMap(np.ones((4, 4))))
    with pytest.raises(ValueError):
        depth_errors(DepthMap(np.ones((3, 4))), DepthMap(np.ones((4, 4))))
    with pytest.raises(TypeError):
        depth_errors(np.ones((4, 4)), DepthMap(np.ones((4, 4))))
    with pytest.raises(EmptyRegionError):
        depth_errors(DepthMap(np.ones((4, 4))), DepthMap(np.ones((4, 4))), mask=np.zeros((4, 4), bool))


def test_icp_depth_errors_on_identical_maps(face64, rig64):
    _, _, gt = face64
    dm = DepthMap(gt.depth_map)
    e = depth_errors(dm, dm, rig64, mask=gt.mask, icp=True)
    assert e.max() < 1e-6


# ------------------------------------------------------------------ NME

def test_nme_identity_and_tenth_offset(rng):
    d = 62.0
    gt = PointCloud(rng.standard_normal((50, 3)) * 30)
    assert nme(gt, gt, d) == 0.0
    u = rng.standard_normal((50, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    moved = PointCloud(gt.points + u * d / 10)
    assert nme(moved, gt, d, align=False, correspondence="index") == pytest.approx(0.1, abs=1e-15)


def test_nme_invariant_under_common_rigid_motion(rng):
    src = face_points(rng, 800)
    gt = PointCloud(src)
    pred = PointCloud(src + rng.normal(0, 0.3, src.shape))
    R, t = random_transform(rng, 30, 50)
    a = nme(pred, gt, 60.0)
    b = nme(pred.transformed(R, t), gt.transformed(R, t), 60.0)
    assert b == pytest.approx(a, rel=1e-6)


def test_nme_errors():
    pc = PointCloud(np.eye(3))
    with pytest.raises(ValueError):
        nme(pc, pc, 0.0)
    with pytest.raises(EmptyRegionError):
        nme(PointCloud(np.zeros((0, 3))), pc, 1.0)
    with pytest.raises(ValueError):
        nme(pc, PointCloud(np.eye(3)[:2]), 1.0, align=False, correspondence="index")
    with pytest.raises(ValueError):
        nme(pc, pc, 1.0, correspondence="random")


# ---------------------------------------------------------------- crop

def test_crop(face64, rig64):
    scene, _, gt = face64
    pc = depthmap_to_pointcloud(DepthMap(gt.depth_map), rig64)
    assert len(crop_face_region(pc, gt.landmarks, radius=np.inf)) == len(pc)
    cropped = crop_face_region(pc, gt.landmarks)
    assert cropped.points[:, 2].max() < scene.background_depth - 100
    assert interocular(gt.landmarks) == pytest.approx(scene.interocular())
    far = PointCloud(pc.points + [1e4, 0, 0])
    with pytest.raises(EmptyRegionError):
        crop_face_region(far, gt.landmarks)
    with pytest.raises(ValueError):
        crop_face_region(pc, None)
    m = face_pixel_mask(DepthMap(gt.depth_map), rig64, gt.landmarks)
    assert m.sum() == len(cropped)


# --------------------------------------------------------------- stats

def test_toy_error_table():
    r = summarize_errors(np.arange(1, 11))
    assert r.median == 5.5 and r.mean == 5.5
    assert r.top90_mean == 6.0
    assert r.n == 10 and r.p90 == pytest.approx(9.1)
    assert r.rmse == pytest.approx(np.sqrt(38.5))


def test_zero_error_field():
    r = summarize_errors(np.zeros(7))
    assert (r.mean, r.std, r.median, r.top90_mean, r.p90, r.rmse) == (0, 0, 0, 0, 0, 0)


def test_top_fraction_counts_ceiling():
    assert top_fraction_mean(np.arange(1, 11)) == 6.0
    assert top_fraction_mean(np.arange(1, 12)) == np.mean(np.arange(2, 12))
    assert top_fraction_mean([5.0]) == 5.0


def test_median_can_exceed_top90_mean():
    # the top-90% mean includes small values, so it is not bounded below by the median
    r = summarize_errors([1, 2, 9, 9, 9, 10, 10, 10, 10, 10])
    assert r.median > r.top90_mean


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60))
def test_report_invariants(errors):
    r = summarize_errors(errors)
    vals = (r.mean, r.std, r.median, r.top90_mean, r.p90, r.rmse)
    assert all(v >= 0 for v in vals)
    tol = 1e-9 * (1 + max(abs(e) for e in errors))
    assert r.top90_mean >= r.mean - tol
    assert r.p90 >= r.median - tol
    assert r.rmse >= r.mean - tol


def test_empty_errors():
    with pytest.raises(EmptyRegionError):
        summarize_errors([])


def test_error_stats_reports_nme(face64, rig64):
    _, _, gt = face64
    pred = DepthMap(gt.depth_map + 1.0)
    r = error_stats(pred, DepthMap(gt.depth_map), rig64, mask=gt.mask, landmarks=gt.landmarks)
    assert r.mean == pytest.approx(1.0) and r.nme is not None and r.nme > 0
    assert set(r.to_dict()) >= {"mean", "std", "median", "top90_mean", "p90", "rmse", "nme"}
    assert error_stats(pred, DepthMap(gt.depth_map)).nme is None


def test_heatmap(tmp_path):
    e = np.array([[0.0, 1.0], [np.nan, 0.5]])
    write_error_heatmap(tmp_path / "h.png", e)
    img = np.asarray(Image.open(tmp_path / "h.png"))
    assert img.shape == (2, 2, 3)
    assert img[1, 0].tolist() == [0, 0, 0]
    assert img[0, 0].tolist() == [0, 0, 255] and img[0, 1].tolist() == [255, 0, 0]


def test_reference_values_recorded():
    assert REFERENCE_VALUES["rmse_frontal_mm"] == 2.62
    assert REFERENCE_VALUES["abs_error_mm"]["top90_mean"] == 5.30
