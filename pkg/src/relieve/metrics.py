"""Evaluation protocol: similarity alignment, trajectory and depth metrics.

All estimate-side metrics are gauge-respecting: a global similarity
transform of the estimates changes nothing, because the objective itself
cannot determine that gauge. Definitions follow the field's conventions
(median-scale depth alignment, Sim(3)-aligned ATE normalized by trajectory
spread, pairwise relative-pose AUC) and are the normative contract of this
package; absolute cross-paper comparison is out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PoseSE3
from .robust import weighted_median


class DegenerateInputError(ValueError):
    """Not enough structure to compute a metric (collinear points, etc.)."""


@dataclass(frozen=True)
class Sim3:
    """Similarity transform x -> scale * rotation @ x + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return self.scale * (pts @ self.rotation.T) + self.translation

    @staticmethod
    def identity() -> "Sim3":
        return Sim3(1.0, np.eye(3), np.zeros(3))


@dataclass
class EvalReport:
    point_rel: float
    point_tau: float
    depth_rel: float
    depth_tau: float
    ate: float
    auc30: float
    per_view_depth_rel: list[float]
    per_view_depth_tau: list[float]
    per_view_point_rel: list[float]
    per_view_point_tau: list[float]

    def lines(self) -> list[str]:
        out = [
            f"point_rel {self.point_rel:.17g}",
            f"point_tau {self.point_tau:.17g}",
            f"depth_rel {self.depth_rel:.17g}",
            f"depth_tau {self.depth_tau:.17g}",
            f"ate {self.ate:.17g}",
            f"auc30 {self.auc30:.17g}",
        ]
        for i, (dr, dt, pr, pt) in enumerate(
            zip(
                self.per_view_depth_rel,
                self.per_view_depth_tau,
                self.per_view_point_rel,
                self.per_view_point_tau,
            )
        ):
            out.append(f"view{i}_depth_rel {dr:.17g}")
            out.append(f"view{i}_depth_tau {dt:.17g}")
            out.append(f"view{i}_point_rel {pr:.17g}")
            out.append(f"view{i}_point_tau {pt:.17g}")
        return out


def umeyama_align(source: np.ndarray, target: np.ndarray) -> Sim3:
    """Least-squares Sim(3) minimizing sum ||s R x + t - y||^2.

    Closed form via the centered cross-covariance SVD, with the reflection
    guard on the last singular direction.
    """
    x = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if x.shape != y.shape or x.shape[0] < 3:
        raise DegenerateInputError("need >= 3 point pairs of equal count")
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    xc = x - mx
    yc = y - my
    cov = yc.T @ xc / x.shape[0]
    u, d, vt = np.linalg.svd(cov)
    if d[1] <= 1e-12 * max(d[0], 1e-300):
        raise DegenerateInputError("degenerate configuration: rank-deficient covariance")
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2, 2] = -1.0
    rotation = u @ s_fix @ vt
    var_x = float(np.mean(np.sum(xc * xc, axis=1)))
    scale = float(np.trace(np.diag(d) @ s_fix)) / var_x
    if scale <= 0:
        raise DegenerateInputError("alignment produced a non-positive scale")
    translation = my - scale * rotation @ mx
    return Sim3(scale, rotation, translation)


def ate(est_poses: list[PoseSE3], gt_poses: list[PoseSE3]) -> float:
    """Sim(3)-aligned RMSE of camera centers over the gt trajectory spread.

    Dimensionless: the RMSE is divided by the RMS distance of the gt
    centers from their centroid.
    """
    if len(est_poses) != len(gt_poses) or len(gt_poses) < 3:
        raise DegenerateInputError("need >= 3 pose pairs of equal count")
    est = np.stack([p.translation for p in est_poses])
    gt = np.stack([p.translation for p in gt_poses])
    aligned = umeyama_align(est, gt).apply(est)
    rmse = float(np.sqrt(np.mean(np.sum((aligned - gt) ** 2, axis=1))))
    spread = float(np.sqrt(np.mean(np.sum((gt - gt.mean(axis=0)) ** 2, axis=1))))
    if spread <= 0:
        raise DegenerateInputError("gt trajectory has zero spread")
    return rmse / spread


def rotation_angle_deg(R: np.ndarray) -> float:
    c = (float(np.trace(R)) - 1.0) / 2.0
    return float(np.degrees(np.arccos(min(1.0, max(-1.0, c)))))


def pair_pose_errors(est_poses: list[PoseSE3], gt_poses: list[PoseSE3]) -> np.ndarray:
    """Per unordered pair: max of relative-rotation angle error and
    relative-translation direction error, in degrees."""
    n = len(est_poses)
    errs = []
    for a in range(n):
        for b in range(a + 1, n):
            r_est = est_poses[a].rotation.T @ est_poses[b].rotation
            r_gt = gt_poses[a].rotation.T @ gt_poses[b].rotation
            rot_err = rotation_angle_deg(r_est.T @ r_gt)
            t_est = est_poses[a].rotation.T @ (est_poses[b].translation - est_poses[a].translation)
            t_gt = gt_poses[a].rotation.T @ (gt_poses[b].translation - gt_poses[a].translation)
            n_gt = np.linalg.norm(t_gt)
            n_est = np.linalg.norm(t_est)
            if n_gt <= 1e-12:
                dir_err = 0.0 if n_est <= 1e-9 else 90.0
            elif n_est <= 1e-12:
                dir_err = 90.0
            else:
                cross = np.linalg.norm(np.cross(t_est, t_gt))
                dir_err = float(np.degrees(np.arctan2(cross, float(t_est @ t_gt))))
            errs.append(max(rot_err, dir_err))
    return np.asarray(errs)


def auc_from_errors(errors_deg: np.ndarray, threshold_deg: float = 30.0) -> float:
    """Exact area under the cumulative accuracy curve, as a percentage.

    The accuracy curve acc(t) = fraction of errors <= t is a step
    function; its integral over [0, threshold] accumulates piecewise
    linearly between the sorted errors, giving the closed form
    mean(max(0, 1 - err/threshold)).
    """
    errors_deg = np.asarray(errors_deg, dtype=np.float64)
    if errors_deg.size == 0:
        raise DegenerateInputError("no pair errors")
    return float(100.0 * np.mean(np.maximum(0.0, 1.0 - errors_deg / threshold_deg)))


def pose_auc(est_poses: list[PoseSE3], gt_poses: list[PoseSE3], threshold_deg: float = 30.0) -> float:
    """AUC of pairwise relative-pose accuracy up to ``threshold_deg``."""
    if len(est_poses) != len(gt_poses) or len(gt_poses) < 2:
        raise DegenerateInputError("need >= 2 pose pairs of equal count")
    return auc_from_errors(pair_pose_errors(est_poses, gt_poses), threshold_deg)


def depth_rel_tau(
    est_depths: list[np.ndarray], gt_depths: list[np.ndarray], threshold: float = 0.1
) -> tuple[float, float]:
    """Median-scale aligned absolute relative depth error and inlier ratio.

    One scene-wide scale (the median of gt/est over all pixels) is applied
    to the estimates; rel is the mean of |m*est - gt|/gt and tau the
    fraction of pixels below ``threshold``.
    """
    if len(est_depths) != len(gt_depths):
        raise DegenerateInputError("view count mismatch")
    for e, g in zip(est_depths, gt_depths):
        if e.shape != g.shape:
            raise DegenerateInputError(f"depth shape mismatch: {e.shape} vs {g.shape}")
    est = np.concatenate([e.ravel() for e in est_depths])
    gt = np.concatenate([g.ravel() for g in gt_depths])
    m = weighted_median(gt / est, np.ones_like(est))
    err = np.abs(m * est - gt) / gt
    return float(err.mean()), float(np.mean(err < threshold))


def _per_view_depth(est_depths, gt_depths, m, threshold):
    rels, taus = [], []
    for e, g in zip(est_depths, gt_depths):
        err = np.abs(m * e - g) / g
        rels.append(float(err.mean()))
        taus.append(float(np.mean(err < threshold)))
    return rels, taus


def score_pointmaps(
    est_maps: list[np.ndarray],
    gt_maps: list[np.ndarray],
    gt_centers: list[np.ndarray],
    transform: Sim3,
    threshold: float = 0.1,
):
    """Per-point errors of transformed estimates against gt point maps.

    Each point's error is normalized by its gt distance to the gt camera
    center of its view. Returns (rel, tau, per-view rels, per-view taus).
    """
    rels, taus = [], []
    all_err = []
    for e, g, c in zip(est_maps, gt_maps, gt_centers):
        aligned = transform.apply(e.reshape(-1, 3))
        gt_flat = g.reshape(-1, 3)
        dist = np.linalg.norm(gt_flat - c, axis=1)
        err = np.linalg.norm(aligned - gt_flat, axis=1) / np.maximum(dist, 1e-12)
        rels.append(float(err.mean()))
        taus.append(float(np.mean(err < threshold)))
        all_err.append(err)
    err = np.concatenate(all_err)
    return float(err.mean()), float(np.mean(err < threshold)), rels, taus


def pointmap_rel_tau(
    est_maps: list[np.ndarray],
    gt_maps: list[np.ndarray],
    gt_centers: list[np.ndarray],
    threshold: float = 0.1,
    max_align_points: int = 10000,
    seed: int = 0,
) -> tuple[float, float]:
    """Point-map accuracy after Sim(3) alignment on a uniform subsample."""
    est = np.concatenate([m.reshape(-1, 3) for m in est_maps])
    gt = np.concatenate([m.reshape(-1, 3) for m in gt_maps])
    if est.shape != gt.shape:
        raise DegenerateInputError("point map shape mismatch")
    if est.shape[0] > max_align_points:
        idx = np.random.default_rng(seed).choice(est.shape[0], size=max_align_points, replace=False)
        tf = umeyama_align(est[idx], gt[idx])
    else:
        tf = umeyama_align(est, gt)
    rel, tau, _, _ = score_pointmaps(est_maps, gt_maps, gt_centers, tf, threshold)
    return rel, tau


def evaluate(
    est_poses: list[PoseSE3],
    est_depths: list[np.ndarray],
    est_pointmaps: list[np.ndarray],
    gt_poses: list[PoseSE3],
    gt_depths: list[np.ndarray],
    gt_pointmaps: list[np.ndarray],
    seed: int = 0,
) -> EvalReport:
    """Full evaluation protocol on one scene."""
    centers = [p.translation for p in gt_poses]
    est_flat = np.concatenate([m.reshape(-1, 3) for m in est_pointmaps])
    gt_flat = np.concatenate([m.reshape(-1, 3) for m in gt_pointmaps])
    if est_flat.shape[0] > 10000:
        idx = np.random.default_rng(seed).choice(est_flat.shape[0], size=10000, replace=False)
        tf = umeyama_align(est_flat[idx], gt_flat[idx])
    else:
        tf = umeyama_align(est_flat, gt_flat)
    p_rel, p_tau, pv_rel, pv_tau = score_pointmaps(est_pointmaps, gt_pointmaps, centers, tf)

    est_cat = np.concatenate([e.ravel() for e in est_depths])
    gt_cat = np.concatenate([g.ravel() for g in gt_depths])
    m = weighted_median(gt_cat / est_cat, np.ones_like(est_cat))
    d_rel, d_tau = depth_rel_tau(est_depths, gt_depths)
    dv_rel, dv_tau = _per_view_depth(est_depths, gt_depths, m, 0.1)

    return EvalReport(
        point_rel=p_rel,
        point_tau=p_tau,
        depth_rel=d_rel,
        depth_tau=d_tau,
        ate=ate(est_poses, gt_poses),
        auc30=pose_auc(est_poses, gt_poses),
        per_view_depth_rel=dv_rel,
        per_view_depth_tau=dv_tau,
        per_view_point_rel=pv_rel,
        per_view_point_tau=pv_tau,
    )
