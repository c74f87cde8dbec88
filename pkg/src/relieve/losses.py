"""Training objective: depth shape loss, angular registration loss, total.

The depth term compares normalized depth maps (weighted-median centered,
weighted-MAD scaled) under a per-pixel confidence W in (0, 2), with a
-alpha*log(W) barrier so ignoring everything is not free. Normalization
statistics are treated as constants during differentiation: they are
recomputed on every forward pass but no gradient flows through them, and
the finite-difference checker validates against that same contract.

The registration term back-projects matched pixels to world points and
penalizes, for each ordered view pair, the angle at the anchor camera
center between the two rays to the matched points. Angles avoid both
failure modes of naive alternatives: 3D point distances shrink the scene
toward the camera, and pixel-space reprojection has no usable gradient
once a point falls behind the image plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import pixel_rays
from .robust import wmad_stats
from .state import (
    CorrespondenceSet,
    HyperParams,
    Problem,
    SceneState,
    ValidationError,
    ViewDerived,
    derive_views,
    pullback_gradient,
)

__all__ = [
    "LossBreakdown",
    "depth_loss",
    "vector_angle",
    "registration_loss",
    "registration_angles",
    "total_loss",
    "capture_stats",
    "finite_difference_check",
    "random_check_instance",
]


@dataclass
class LossBreakdown:
    """Loss value split into its terms, plus the flat state gradient."""

    depth_term: float
    registration_term: float
    total: float
    gradient: np.ndarray


@dataclass
class DepthLossResult:
    value: float
    grad_depth: np.ndarray
    grad_logits: np.ndarray


def confidence_from_logits(logits: np.ndarray) -> np.ndarray:
    """W = 2*sigmoid(logit), strictly inside (0, 2)."""
    from .state import sigmoid

    return 2.0 * sigmoid(np.asarray(logits, dtype=np.float64))


def depth_loss(
    pred: np.ndarray,
    pseudo: np.ndarray,
    logits: np.ndarray,
    alpha: float = 1.0,
    charbonnier_eps: float = 1e-6,
    frozen=None,
) -> DepthLossResult:
    """Confidence-weighted comparison of normalized depth maps.

    Per pixel: ``W * rho(norm(pred) - norm(pseudo)) - alpha * log(W)``
    averaged over the map, where rho is the Charbonnier-smoothed absolute
    value and norm the weighted-median/MAD normalizer with statistics
    frozen (``frozen`` overrides them, otherwise they are computed from
    the current W). Gradients are returned w.r.t. pred values and logits.
    """
    pred = np.asarray(pred, dtype=np.float64)
    pseudo = np.asarray(pseudo, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if pred.shape != pseudo.shape or pred.shape != logits.shape:
        raise ValidationError(
            f"shape mismatch: pred {pred.shape}, pseudo {pseudo.shape}, logits {logits.shape}"
        )
    if np.any(pseudo <= 0):
        raise ValidationError("pseudo depth must be positive")
    conf = confidence_from_logits(logits)
    if frozen is None:
        m1, s1 = wmad_stats(pred, conf)
        m2, s2 = wmad_stats(pseudo, conf)
    else:
        m1, s1, m2, s2 = frozen
    loss_sum, g_pred, g_conf = kernels.depth_loss_terms(
        np.ascontiguousarray(pred.ravel()),
        np.ascontiguousarray(pseudo.ravel()),
        np.ascontiguousarray(conf.ravel()),
        m1,
        s1,
        m2,
        s2,
        alpha,
        charbonnier_eps,
    )
    n = pred.size
    grad_logits = (g_conf * conf.ravel() * (1.0 - 0.5 * conf.ravel())) / n
    return DepthLossResult(
        loss_sum / n,
        (g_pred / n).reshape(pred.shape),
        grad_logits.reshape(pred.shape),
    )


def vector_angle(a, b) -> float:
    """Angle in [0, pi] between two non-zero 3-vectors, atan2 form."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("vector_angle requires non-zero vectors")
    c = np.cross(a, b)
    return float(np.arctan2(np.linalg.norm(c), float(a @ b)))


def _depth_part(state: SceneState, problem: Problem, derived, hp: HyperParams, frozen):
    """Mean-over-views depth term and gradients on shape maps / confidences.

    The term is evaluated on the scale-stripped shape maps; by scale
    invariance of the normalizer the value equals evaluating the full
    depth maps (see derive_views for why the gradient must not).
    """
    n_views = problem.n_views
    term = 0.0
    g_shape = []
    g_conf = []
    for i in range(n_views):
        dv = derived[i]
        if frozen is None:
            m1, s1 = wmad_stats(dv.shape_map, dv.conf)
            m2, s2 = wmad_stats(problem.pseudo_depths[i], dv.conf)
        else:
            m1, s1, m2, s2 = frozen[i]
        loss_sum, g_pred, g_c = kernels.depth_loss_terms(
            np.ascontiguousarray(dv.shape_map.ravel()),
            np.ascontiguousarray(problem.pseudo_depths[i].ravel()),
            np.ascontiguousarray(dv.conf.ravel()),
            m1,
            s1,
            m2,
            s2,
            hp.alpha,
            hp.charbonnier_eps,
        )
        scale = 1.0 / (dv.shape_map.size * n_views)
        term += loss_sum * scale
        g_shape.append((g_pred * scale).reshape(dv.shape_map.shape))
        g_conf.append((g_c * scale).reshape(dv.shape_map.shape))
    return term, g_shape, g_conf


def _reg_part(problem: Problem, derived: list[ViewDerived], hp: HyperParams):
    """Mean angle term over all ordered pairs, with gradients.

    Returns (term, g_depth, g_rot, g_center, per_term_angles).
    """
    n_views = problem.n_views
    g_depth = [np.zeros(problem.shape(i)) for i in range(n_views)]
    g_rot = [np.zeros((3, 3)) for _ in range(n_views)]
    g_center = [np.zeros(3) for _ in range(n_views)]
    angle_chunks = []
    total_terms = 0
    theta_sum = 0.0
    for cs in problem.correspondences:
        if cs.count == 0:
            continue
        i, j = cs.view_i, cs.view_j
        rays_i = pixel_rays(problem.intrinsics[i], cs.ui[:, 0], cs.ui[:, 1])
        rays_j = pixel_rays(problem.intrinsics[j], cs.uj[:, 0], cs.uj[:, 1])
        di = kernels.bilinear_gather(derived[i].depth, cs.ui[:, 0], cs.ui[:, 1])
        dj = kernels.bilinear_gather(derived[j].depth, cs.uj[:, 0], cs.uj[:, 1])
        # Both ordered directions: each view anchors once.
        for (a, b, ra, rb, da, db, ua, ub) in (
            (i, j, rays_i, rays_j, di, dj, cs.ui, cs.uj),
            (j, i, rays_j, rays_i, dj, di, cs.uj, cs.ui),
        ):
            thetas, g_da, g_db, G_Ra, G_Rb, g_ta, g_tb = kernels.reg_terms(
                ra,
                rb,
                da,
                db,
                derived[a].rotation,
                derived[a].center,
                derived[b].rotation,
                derived[b].center,
                hp.angle_eps,
            )
            theta_sum += float(thetas.sum())
            total_terms += cs.count
            angle_chunks.append(thetas)
            g_rot[a] += G_Ra
            g_rot[b] += G_Rb
            g_center[a] += g_ta
            g_center[b] += g_tb
            kernels.bilinear_scatter(g_depth[a], ua[:, 0], ua[:, 1], g_da)
            kernels.bilinear_scatter(g_depth[b], ub[:, 0], ub[:, 1], g_db)
    if total_terms == 0:
        return 0.0, g_depth, g_rot, g_center, np.empty(0)
    inv = 1.0 / total_terms
    for i in range(n_views):
        g_depth[i] *= inv
        g_rot[i] *= inv
        g_center[i] *= inv
    return theta_sum * inv, g_depth, g_rot, g_center, np.concatenate(angle_chunks)


def registration_angles(state: SceneState, problem: Problem) -> np.ndarray:
    """All individual angle terms at the given state (diagnostics/tests)."""
    derived = derive_views(state, problem)
    return _reg_part(problem, derived, problem.hyperparams)[4]


def registration_loss(state: SceneState, problem: Problem) -> tuple[float, np.ndarray]:
    """Mean angular consistency term and its flat state gradient."""
    derived = derive_views(state, problem)
    hp = problem.hyperparams
    term, g_depth, g_rot, g_center, _ = _reg_part(problem, derived, hp)
    zeros = [np.zeros(problem.shape(i)) for i in range(problem.n_views)]
    grad = pullback_gradient(state, problem, derived, g_depth, zeros, zeros, g_rot, g_center)
    return term, grad


def capture_stats(state: SceneState, problem: Problem):
    """Per-view normalization statistics at the current state.

    Passing the result back into total_loss freezes them, which is the
    detach contract the analytic gradient is defined under.
    """
    derived = derive_views(state, problem)
    frozen = []
    for i in range(problem.n_views):
        m1, s1 = wmad_stats(derived[i].shape_map, derived[i].conf)
        m2, s2 = wmad_stats(problem.pseudo_depths[i], derived[i].conf)
        frozen.append((m1, s1, m2, s2))
    return frozen


def total_loss(
    state: SceneState,
    problem: Problem,
    hp: HyperParams | None = None,
    frozen=None,
) -> LossBreakdown:
    """Full objective: depth term + lam * registration term, with gradient."""
    hp = problem.hyperparams if hp is None else hp
    derived = derive_views(state, problem)
    depth_term, g_shape, g_conf = _depth_part(state, problem, derived, hp, frozen)
    reg_term, gr_depth, g_rot, g_center, _ = _reg_part(problem, derived, hp)
    g_depth = [hp.lam * gr for gr in gr_depth]
    g_rot = [hp.lam * g for g in g_rot]
    g_center = [hp.lam * g for g in g_center]
    grad = pullback_gradient(state, problem, derived, g_depth, g_shape, g_conf, g_rot, g_center)
    return LossBreakdown(depth_term, reg_term, depth_term + hp.lam * reg_term, grad)


def finite_difference_check(
    state: SceneState,
    problem: Problem,
    hp: HyperParams | None = None,
    probe_count: int = 12,
    step: float = 1e-6,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Both sides are evaluated with normalization statistics frozen at the
    base state, matching the detach contract of the analytic gradient.
    Probes are drawn from every parameter block so pose, scale, residual
    and confidence coordinates are all exercised.
    """
    if probe_count < 1:
        raise ValidationError("probe_count must be >= 1")
    hp = problem.hyperparams if hp is None else hp
    frozen = capture_stats(state, problem)
    base = total_loss(state, problem, hp, frozen)
    rng = np.random.default_rng(seed)
    layout = state.layout
    pools = []
    for i in range(layout.n_views):
        t = layout.tangent_slice(i)
        pools.extend(range(t.start, t.stop))
        pools.append(layout.scale_index(i))
    pools = np.asarray(pools, dtype=np.int64)
    blocks = [pools]
    blocks.append(
        np.concatenate(
            [np.arange(layout.grid_slice(i).start, layout.grid_slice(i).stop) for i in range(layout.n_views)]
        )
    )
    blocks.append(
        np.concatenate(
            [np.arange(layout.logit_slice(i).start, layout.logit_slice(i).stop) for i in range(layout.n_views)]
        )
    )
    probes = []
    for k in range(probe_count):
        block = blocks[k % len(blocks)]
        probes.append(int(block[rng.integers(block.size)]))

    worst = 0.0
    work = state.copy()
    for p in probes:
        orig = work.params[p]
        work.params[p] = orig + step
        f_plus = total_loss(work, problem, hp, frozen).total
        work.params[p] = orig - step
        f_minus = total_loss(work, problem, hp, frozen).total
        work.params[p] = orig
        fd = (f_plus - f_minus) / (2.0 * step)
        err = abs(base.gradient[p] - fd) / max(1.0, abs(fd))
        worst = max(worst, err)
    return worst


def random_check_instance(
    seed: int,
    n_views: int | None = None,
    height: int = 8,
    width: int = 8,
    max_matches: int = 20,
    grid_size: int = 4,
):
    """Small random (state, problem) pair for gradient validation.

    Views get random intrinsics and positive pseudo depths; matches are
    random in-image pixel pairs along a chain topology (no geometric
    consistency needed to check gradients). The state is perturbed away
    from zero in every block.
    """
    from .geometry import CameraIntrinsics
    from .state import init_state

    rng = np.random.default_rng(seed)
    if n_views is None:
        n_views = int(rng.integers(2, 5))
    intrinsics = []
    depths = []
    for _ in range(n_views):
        f = rng.uniform(0.8, 1.5) * width
        intrinsics.append(
            CameraIntrinsics(f, f * rng.uniform(0.9, 1.1), (width - 1) / 2, (height - 1) / 2, width, height)
        )
        base = rng.uniform(2.0, 4.0)
        depths.append(base * np.exp(rng.normal(0.0, 0.2, size=(height, width))))
    corrs = []
    for i in range(n_views - 1):
        k = int(rng.integers(1, max_matches + 1))
        ui = np.stack(
            [rng.uniform(0, width - 1, size=k), rng.uniform(0, height - 1, size=k)], axis=1
        )
        uj = np.stack(
            [rng.uniform(0, width - 1, size=k), rng.uniform(0, height - 1, size=k)], axis=1
        )
        corrs.append(CorrespondenceSet(i, i + 1, ui, uj))
    problem = Problem(intrinsics, depths, corrs, HyperParams())
    problem.validate()
    state = init_state(problem, grid_size)
    state.params[:] = 0.0
    for i in range(n_views):
        state.tangent(i)[:3] = rng.normal(0.0, 0.15, size=3)
        state.tangent(i)[3:] = rng.normal(0.0, 0.4, size=3)
        state.params[state.layout.scale_index(i)] = rng.normal(0.0, 0.3)
        state.residual_grid(i)[:] = rng.normal(0.0, 0.15, size=(grid_size, grid_size))
        state.confidence_logits(i)[:] = rng.normal(0.0, 0.8, size=(height, width))
    return state, problem
