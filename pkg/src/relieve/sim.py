"""Synthetic ground-truth scenes: the oracle behind the end-to-end tests.

Worlds are built from analytic primitives (finite rectangles and spheres
inside a closed box) so exact depths come from closed-form ray
intersections, with no renderer in the loop. Cameras ride a smooth arc
looking inward, imitating contiguous video frames.

Correspondences are constructed to be *exactly* consistent with the
bilinear depth-read model the registration loss uses: after projecting a
surface point into both views, the pixel pair is refined by Gauss-Newton
until both bilinearly-read back-projections agree to machine precision.
Without that refinement the interpolation error of the depth grids puts a
positive floor (~1e-4 rad) under the angular loss even at the true state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, PoseSE3, pixel_rays, se3_log
from .state import (
    CorrespondenceSet,
    HyperParams,
    Problem,
    SceneState,
    apply_gauge_fix,
    init_state,
    upsample_tables,
)
from . import kernels

RAY_EPS = 1e-6


class SceneError(RuntimeError):
    """Could not build a valid scene layout within the retry budget."""


@dataclass
class GroundTruthScene:
    intrinsics: list[CameraIntrinsics]
    poses: list[PoseSE3]
    depths: list[np.ndarray]
    rect_p0: np.ndarray  # (M, 3)
    rect_e1: np.ndarray
    rect_e2: np.ndarray
    sphere_c: np.ndarray  # (S, 3)
    sphere_r: np.ndarray  # (S,)
    box_diag: float

    @property
    def n_views(self) -> int:
        return len(self.poses)

    @property
    def scene_scale(self) -> float:
        centers = np.stack([p.translation for p in self.poses])
        return float(np.mean(np.linalg.norm(centers - centers.mean(axis=0), axis=1)))


@dataclass
class CorruptionConfig:
    """Pseudo-depth corruption: per-view scale plus a smooth log-space field."""

    scale_range: tuple[float, float] = (0.7, 1.3)
    field_amplitude: float = 0.1
    octaves: int = 2
    outlier_fraction: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.field_amplitude <= 0.5):
            raise ValueError("field amplitude must be in [0, 0.5]")
        if min(self.scale_range) <= 0:
            raise ValueError("scale range must be positive")


@dataclass
class MatchNoiseConfig:
    sigma: float = 0.5
    outlier_rate: float = 0.0
    matches_per_pair: int = 200
    pair_distance: int = 2

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not (0.0 <= self.outlier_rate < 1.0):
            raise ValueError("outlier rate must be in [0, 1)")


def _raycast_world(scene: GroundTruthScene, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Smallest positive hit parameter along each world ray (inf if none)."""
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    for m in range(scene.rect_p0.shape[0]):
        p0 = scene.rect_p0[m]
        e1 = scene.rect_e1[m]
        e2 = scene.rect_e2[m]
        nrm = np.cross(e1, e2)
        denom = dirs @ nrm
        safe = np.abs(denom) > 1e-14
        s = np.where(safe, ((p0 - origin) @ nrm) / np.where(safe, denom, 1.0), np.inf)
        hit = origin + s[:, None] * dirs
        rel = hit - p0
        a = (rel @ e1) / (e1 @ e1)
        b = (rel @ e2) / (e2 @ e2)
        ok = safe & (s > RAY_EPS) & (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
        best = np.where(ok & (s < best), s, best)
    for m in range(scene.sphere_c.shape[0]):
        oc = origin - scene.sphere_c[m]
        aq = np.sum(dirs * dirs, axis=1)
        bq = dirs @ oc
        cq = oc @ oc - scene.sphere_r[m] ** 2
        disc = bq * bq - aq * cq
        has = disc > 0
        root = np.sqrt(np.where(has, disc, 0.0))
        s1 = (-bq - root) / aq
        s2 = (-bq + root) / aq
        s = np.where(s1 > RAY_EPS, s1, s2)
        ok = has & (s > RAY_EPS)
        best = np.where(ok & (s < best), s, best)
    return best


def exact_depth(scene: GroundTruthScene, view: int, xs, ys) -> np.ndarray:
    """Analytic depth at continuous pixels (no grid interpolation involved)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_1d(np.asarray(ys, dtype=np.float64))
    rays = pixel_rays(scene.intrinsics[view], xs, ys)
    pose = scene.poses[view]
    dirs = rays @ pose.rotation.T
    # Ray parameter equals camera-frame z because the camera ray has z = 1.
    return _raycast_world(scene, pose.translation, dirs)


def _look_at(eye: np.ndarray, target: np.ndarray) -> PoseSE3:
    z = target - eye
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 1.0, 0.0])
    if abs(z @ up) > 0.99:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(up, z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return PoseSE3(np.stack([x, y, z], axis=1), eye, _validate=False)


def generate_scene(view_count: int, resolution: tuple[int, int] = (64, 48), seed: int = 0) -> GroundTruthScene:
    """Random bounded world (closed box, rectangles, spheres) plus a camera arc.

    Deterministic in ``seed``; re-samples internally on degenerate layouts
    (camera inside a primitive) with a bounded retry budget.
    """
    if view_count < 2:
        raise ValueError("need at least 2 views")
    w, h = resolution
    rng = np.random.default_rng(seed)
    for _ in range(20):
        scene = _try_generate(view_count, w, h, rng)
        if scene is not None:
            return scene
    raise SceneError("could not generate a non-degenerate scene layout")


def _try_generate(view_count, w, h, rng) -> GroundTruthScene | None:
    half = rng.uniform(3.0, 4.0, size=3)
    hx, hy, hz = half
    # Closed box: 6 inward faces guarantee every pixel ray terminates.
    corners = np.array(
        [
            [-hx, -hy, -hz],
            [+hx, -hy, -hz],
            [-hx, +hy, -hz],
            [-hx, -hy, +hz],
        ]
    )
    ex = np.array([2 * hx, 0, 0])
    ey = np.array([0, 2 * hy, 0])
    ez = np.array([0, 0, 2 * hz])
    rect_p0 = [corners[0], corners[0], corners[0], corners[1], corners[2], corners[3]]
    rect_e1 = [ex, ey, ez, ey, ex, ex]
    rect_e2 = [ey, ez, ex, ez, ez, ey]

    n_planes = int(rng.integers(3, 7))
    for _ in range(n_planes):
        center = rng.uniform(-0.5, 0.5, size=3) * half
        frame = np.linalg.qr(rng.normal(size=(3, 3)))[0]
        a = frame[:, 0] * rng.uniform(0.7, 1.6)
        b = frame[:, 1] * rng.uniform(0.7, 1.6)
        rect_p0.append(center - a - b)
        rect_e1.append(2 * a)
        rect_e2.append(2 * b)

    n_spheres = int(rng.integers(1, 4))
    sphere_c = rng.uniform(-0.55, 0.55, size=(n_spheres, 3)) * half
    sphere_r = rng.uniform(0.35, 0.8, size=n_spheres)

    # Camera arc, 10-30 degree sweep, looking inward at a jittered target.
    sweep = math.radians(rng.uniform(10.0, 30.0))
    radius = rng.uniform(0.55, 0.7) * min(hx, hz)
    base = rng.uniform(0.0, 2.0 * math.pi)
    target = rng.uniform(-0.3, 0.3, size=3)
    y0 = rng.uniform(-0.4, 0.4)
    fov = math.radians(rng.uniform(48.0, 62.0))
    f = 0.5 * w / math.tan(0.5 * fov)
    intr = CameraIntrinsics(f, f, (w - 1) / 2.0, (h - 1) / 2.0, w, h)

    poses = []
    angles = base + np.linspace(-0.5 * sweep, 0.5 * sweep, view_count)
    for k, ang in enumerate(angles):
        eye = np.array(
            [
                radius * math.cos(ang),
                y0 + 0.15 * math.sin(2.5 * ang),
                radius * math.sin(ang),
            ]
        )
        poses.append(_look_at(eye, target))

    sphere_cs = np.asarray(sphere_c)
    for p in poses:
        d = np.linalg.norm(sphere_cs - p.translation, axis=1)
        if np.any(d < sphere_r + 0.3):
            return None  # camera inside / touching a sphere

    scene = GroundTruthScene(
        intrinsics=[intr] * view_count,
        poses=poses,
        depths=[],
        rect_p0=np.asarray(rect_p0, dtype=np.float64),
        rect_e1=np.asarray(rect_e1, dtype=np.float64),
        rect_e2=np.asarray(rect_e2, dtype=np.float64),
        sphere_c=np.asarray(sphere_c, dtype=np.float64),
        sphere_r=np.asarray(sphere_r, dtype=np.float64),
        box_diag=float(2.0 * np.linalg.norm(half)),
    )
    ys, xs = np.mgrid[0:h, 0:w]
    for v in range(view_count):
        d = exact_depth(scene, v, xs.ravel().astype(np.float64), ys.ravel().astype(np.float64))
        if not np.all(np.isfinite(d)) or d.min() <= 0 or d.max() >= scene.box_diag:
            return None
        scene.depths.append(d.reshape(h, w))
    return scene


def _value_noise(shape: tuple[int, int], lattice: int, rng) -> np.ndarray:
    """Bilinear interpolation of an iid uniform lattice over the pixel grid."""
    h, w = shape
    nodes = rng.uniform(-1.0, 1.0, size=lattice * lattice)
    tables = upsample_tables(h, w, lattice)
    return kernels.upsample_apply(np.ascontiguousarray(nodes), *tables).reshape(h, w)


def corrupt_depth(gt: np.ndarray, cfg: CorruptionConfig, seed) -> np.ndarray:
    """Pseudo label: gt x per-view scale x exp(smooth log-space field).

    The field is octave value noise normalized so its 3-sigma point sits at
    the configured amplitude, then hard-clipped there; the clip makes the
    documented bound max|log(pseudo/gt) - log(scale)| <= amplitude exact.
    """
    rng = np.random.default_rng(seed)
    lo, hi = cfg.scale_range
    s_view = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    out = gt * s_view
    if cfg.field_amplitude > 0:
        lattices = [4, 6, 16]
        raw = np.zeros_like(gt)
        for k in range(cfg.octaves):
            raw += 0.5 ** k * _value_noise(gt.shape, lattices[min(k, 2)], rng)
        std = float(raw.std())
        if std > 0:
            fld = raw * (cfg.field_amplitude / (3.0 * std))
            np.clip(fld, -cfg.field_amplitude, cfg.field_amplitude, out=fld)
            out = out * np.exp(fld)
    if cfg.outlier_fraction > 0:
        h, w = gt.shape
        mask = np.zeros((h, w), dtype=bool)
        while mask.mean() < cfg.outlier_fraction:
            rw = int(rng.uniform(0.1, 0.3) * w) + 1
            rh = int(rng.uniform(0.1, 0.3) * h) + 1
            x0 = int(rng.integers(0, max(w - rw, 1)))
            y0 = int(rng.integers(0, max(h - rh, 1)))
            mask[y0 : y0 + rh, x0 : x0 + rw] = True
        out = np.where(mask, out * 3.0, out)
    return out


def _world_points_bilinear(scene, view, us):
    """Back-projection using bilinear reads of the gt depth grid, with the
    Jacobian w.r.t. the pixel coordinates (what the loss will see)."""
    intr = scene.intrinsics[view]
    pose = scene.poses[view]
    dmap = scene.depths[view]
    h, w = dmap.shape
    xs = us[:, 0]
    ys = us[:, 1]
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 2)
    tx = xs - x0
    ty = ys - y0
    v00 = dmap[y0, x0]
    v01 = dmap[y0, x0 + 1]
    v10 = dmap[y0 + 1, x0]
    v11 = dmap[y0 + 1, x0 + 1]
    d = v00 * (1 - tx) * (1 - ty) + v01 * tx * (1 - ty) + v10 * (1 - tx) * ty + v11 * tx * ty
    ddx = (v01 - v00) * (1 - ty) + (v11 - v10) * ty
    ddy = (v10 - v00) * (1 - tx) + (v11 - v01) * tx
    rays = pixel_rays(intr, xs, ys)
    pts = (d[:, None] * rays) @ pose.rotation.T + pose.translation
    # dP/dux = R (dd/dux * ray + d * dray/dux), dray/dux = (1/fx, 0, 0).
    drx = np.zeros_like(rays)
    drx[:, 0] = 1.0 / intr.fx
    dry = np.zeros_like(rays)
    dry[:, 1] = 1.0 / intr.fy
    jx = (ddx[:, None] * rays + d[:, None] * drx) @ pose.rotation.T
    jy = (ddy[:, None] * rays + d[:, None] * dry) @ pose.rotation.T
    return pts, jx, jy, d


def _refine_matches(scene, i, j, ui, uj, iters=16, tol=2e-13):
    """Gauss-Newton refinement of pixel pairs until the two bilinearly-read
    back-projections coincide. Returns refined (ui, uj, converged mask)."""
    ui = ui.copy()
    uj = uj.copy()
    for _ in range(iters):
        pi, jxi, jyi, _ = _world_points_bilinear(scene, i, ui)
        pj, jxj, jyj, _ = _world_points_bilinear(scene, j, uj)
        res = pi - pj
        if np.max(np.abs(res)) < tol:
            break
        jac = np.stack([jxi, jyi, -jxj, -jyj], axis=2)  # (K, 3, 4)
        jjt = jac @ jac.transpose(0, 2, 1)
        jjt += 1e-14 * np.eye(3)
        y = np.linalg.solve(jjt, res[:, :, None])
        delta = -(jac.transpose(0, 2, 1) @ y)[:, :, 0]  # min-norm step
        ui += delta[:, :2]
        uj += delta[:, 2:]
    pi = _world_points_bilinear(scene, i, ui)[0]
    pj = _world_points_bilinear(scene, j, uj)[0]
    ok = np.max(np.abs(pi - pj), axis=1) < tol * 100
    return ui, uj, ok


def sample_correspondences(
    scene: GroundTruthScene,
    pair: tuple[int, int],
    cfg: MatchNoiseConfig,
    seed,
) -> CorrespondenceSet:
    """Exact matches between two views: visible, unoccluded, bilinear-consistent.

    Pixel noise (view j only) and uniform outliers are applied after the
    geometric construction. Returns fewer matches with ``complete=False``
    when visibility rejection exhausts the sampling budget.
    """
    i, j = pair
    rng = np.random.default_rng(seed)
    intr_i = scene.intrinsics[i]
    intr_j = scene.intrinsics[j]
    pose_j = scene.poses[j]
    w_i, h_i = intr_i.width, intr_i.height
    w_j, h_j = intr_j.width, intr_j.height
    want = cfg.matches_per_pair
    got_ui: list[np.ndarray] = []
    got_uj: list[np.ndarray] = []
    total = 0
    attempts = 0
    while total < want and attempts < 30:
        attempts += 1
        n = max(2 * (want - total), 32)
        xs = rng.uniform(1.5, w_i - 2.5, size=n)
        ys = rng.uniform(1.5, h_i - 2.5, size=n)
        d = exact_depth(scene, i, xs, ys)
        rays = pixel_rays(intr_i, xs, ys)
        pts = (d[:, None] * rays) @ scene.poses[i].rotation.T + scene.poses[i].translation
        cam_j = (pts - pose_j.translation) @ pose_j.rotation
        ok = cam_j[:, 2] > RAY_EPS
        uijx = np.where(ok, intr_j.fx * cam_j[:, 0] / np.where(ok, cam_j[:, 2], 1.0) + intr_j.cx, -1)
        uijy = np.where(ok, intr_j.fy * cam_j[:, 1] / np.where(ok, cam_j[:, 2], 1.0) + intr_j.cy, -1)
        ok &= (uijx > 1.5) & (uijx < w_j - 2.5) & (uijy > 1.5) & (uijy < h_j - 2.5)
        if not np.any(ok):
            continue
        # Occlusion: the point must be the first surface along view j's ray.
        dj = exact_depth(scene, j, uijx[ok], uijy[ok])
        zj = cam_j[ok, 2]
        vis = np.abs(zj - dj) <= 0.01 * dj
        ui = np.stack([xs[ok][vis], ys[ok][vis]], axis=1)
        uj = np.stack([uijx[ok][vis], uijy[ok][vis]], axis=1)
        if ui.shape[0] == 0:
            continue
        ui0 = ui.copy()
        uj0 = uj.copy()
        ui, uj, conv = _refine_matches(scene, i, j, ui, uj)
        moved = np.maximum(
            np.max(np.abs(ui - ui0), axis=1), np.max(np.abs(uj - uj0), axis=1)
        )
        keep = (
            conv
            & (moved < 0.75)
            & (ui[:, 0] > 1.0)
            & (ui[:, 0] < w_i - 2.0)
            & (ui[:, 1] > 1.0)
            & (ui[:, 1] < h_i - 2.0)
            & (uj[:, 0] > 1.0)
            & (uj[:, 0] < w_j - 2.0)
            & (uj[:, 1] > 1.0)
            & (uj[:, 1] < h_j - 2.0)
        )
        ui = ui[keep]
        uj = uj[keep]
        take = min(want - total, ui.shape[0])
        got_ui.append(ui[:take])
        got_uj.append(uj[:take])
        total += take
    if total == 0:
        return CorrespondenceSet(i, j, np.zeros((0, 2)), np.zeros((0, 2)), complete=False)
    ui = np.concatenate(got_ui)
    uj = np.concatenate(got_uj)
    if cfg.sigma > 0:
        uj = uj + rng.normal(0.0, cfg.sigma, size=uj.shape)
        uj[:, 0] = np.clip(uj[:, 0], 0.0, w_j - 1.0)
        uj[:, 1] = np.clip(uj[:, 1], 0.0, h_j - 1.0)
    if cfg.outlier_rate > 0:
        n_out = int(round(cfg.outlier_rate * ui.shape[0]))
        if n_out:
            idx = rng.choice(ui.shape[0], size=n_out, replace=False)
            uj[idx, 0] = rng.uniform(0.0, w_j - 1.0, size=n_out)
            uj[idx, 1] = rng.uniform(0.0, h_j - 1.0, size=n_out)
    return CorrespondenceSet(i, j, ui, uj, complete=total >= want)


def pair_topology(n_views: int, pair_distance: int) -> list[tuple[int, int]]:
    return [
        (i, j)
        for i in range(n_views)
        for j in range(i + 1, min(i + pair_distance, n_views - 1) + 1)
    ]


def build_problem(
    scene: GroundTruthScene,
    corruption: CorruptionConfig | None = None,
    matches: MatchNoiseConfig | None = None,
    seed: int = 0,
    hyperparams: HyperParams | None = None,
) -> tuple[Problem, GroundTruthScene]:
    """Corrupt the ground truth into a weakly-supervised problem instance."""
    corruption = corruption or CorruptionConfig()
    matches = matches or MatchNoiseConfig()
    pairs = pair_topology(scene.n_views, matches.pair_distance)
    children = np.random.SeedSequence(seed).spawn(scene.n_views + len(pairs))
    pseudo = [
        corrupt_depth(scene.depths[i], corruption, children[i]) for i in range(scene.n_views)
    ]
    corrs = [
        sample_correspondences(scene, pair, matches, children[scene.n_views + k])
        for k, pair in enumerate(pairs)
    ]
    problem = Problem(
        intrinsics=list(scene.intrinsics),
        pseudo_depths=pseudo,
        correspondences=corrs,
        hyperparams=hyperparams or HyperParams(),
    )
    problem.validate()
    return problem, scene


def gt_equivalent_state(problem: Problem, scene: GroundTruthScene, grid_size: int = 16) -> SceneState:
    """State whose poses/depths reproduce the ground truth up to gauge.

    Assumes per-view corruption is a pure scale (no field): depth scales
    come from the pseudo/gt ratio, poses are expressed in view-0's frame
    with the world rescaled to match view-0's absorbed scale.
    """
    state = init_state(problem, grid_size)
    ratios = [
        float(np.median(problem.pseudo_depths[i] / scene.depths[i]))
        for i in range(scene.n_views)
    ]
    s0 = ratios[0]
    anchor = scene.poses[0]
    r0t = anchor.rotation.T
    for i in range(scene.n_views):
        rel_rot = r0t @ scene.poses[i].rotation
        rel_t = s0 * (r0t @ (scene.poses[i].translation - anchor.translation))
        state.tangent(i)[:] = se3_log(PoseSE3(rel_rot, rel_t, _validate=False))
        state.set_log_scale(i, math.log(s0 / ratios[i]))
    return apply_gauge_fix(state)
