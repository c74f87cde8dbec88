"""First-order minimization of the registration objective.

Adam with per-block learning rates and a cosine schedule does the bulk of
the work; an optional deterministic backtracking line-search polish grinds
the last few digits out of the angular term, whose graph is a cone rather
than a parabola near an exact optimum (Adam alone orbits such minima at
the final learning-rate scale).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PoseSE3, pixel_rays
from .losses import total_loss
from .state import (
    Problem,
    SceneState,
    ValidationError,
    apply_gauge_fix,
    derive_views,
    gauge_project_gradient,
    init_state,
)


class NumericalError(RuntimeError):
    """Non-finite gradients or loss during optimization."""


@dataclass
class OptimConfig:
    max_iters: int = 2000
    lr_pose: float = 1e-2
    lr_scale: float = 1e-2
    lr_residual: float = 1e-3
    lr_conf: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    cosine_floor: float = 1e-2  # final lr as a fraction of the initial
    conv_rel_change: float = 1e-7
    conv_patience: int = 50
    grid_size: int = 16
    seed: int = 0
    threads: int | None = None
    polish: bool = True
    polish_steps: int = 200

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if min(self.lr_pose, self.lr_scale, self.lr_residual, self.lr_conf) <= 0:
            raise ValidationError("learning rates must be positive")


@dataclass
class AdamMoments:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def zeros(size: int) -> "AdamMoments":
        return AdamMoments(np.zeros(size), np.zeros(size))


def cosine_factor(iteration: int, config: OptimConfig) -> float:
    """Schedule multiplier: 1.0 at iteration 0, cosine_floor at max_iters."""
    phase = 0.5 * (1.0 + np.cos(np.pi * min(iteration, config.max_iters) / config.max_iters))
    return config.cosine_floor + (1.0 - config.cosine_floor) * phase


def step(
    state: SceneState,
    gradient: np.ndarray,
    moments: AdamMoments,
    config: OptimConfig,
    iteration: int,
    lr_vec: np.ndarray | None = None,
) -> None:
    """One Adam update in place, with gauge projection.

    ``lr_vec`` is the per-coordinate block learning rate vector; it is
    rebuilt from the config when not supplied.
    """
    if not np.all(np.isfinite(gradient)):
        bad = int(np.flatnonzero(~np.isfinite(gradient))[0])
        raise NumericalError(f"non-finite gradient entry at parameter {bad}")
    if lr_vec is None:
        lr_vec = state.layout.block_rates(
            config.lr_pose, config.lr_scale, config.lr_residual, config.lr_conf
        )
    g = gauge_project_gradient(state.layout, gradient.copy())
    moments.t += 1
    moments.m *= config.beta1
    moments.m += (1.0 - config.beta1) * g
    moments.v *= config.beta2
    moments.v += (1.0 - config.beta2) * g * g
    mhat = moments.m / (1.0 - config.beta1 ** moments.t)
    vhat = moments.v / (1.0 - config.beta2 ** moments.t)
    factor = cosine_factor(iteration, config)
    state.params -= factor * lr_vec * mhat / (np.sqrt(vhat) + config.adam_eps)
    apply_gauge_fix(state)


@dataclass
class Solution:
    poses: list[PoseSE3]
    depths: list[np.ndarray]
    confidences: list[np.ndarray]
    point_maps: list[np.ndarray]
    loss_history: np.ndarray  # (n, 3): depth term, registration term, total
    converged: bool
    iterations: int
    diverged: bool = False
    state: SceneState | None = field(default=None, repr=False)


def export_pointmap(state: SceneState, problem: Problem) -> list[np.ndarray]:
    """Dense per-view world-frame point grids (H, W, 3).

    Every pixel is back-projected at its derived depth and moved to world
    coordinates with the view's pose.
    """
    derived = derive_views(state, problem)
    maps = []
    for i in range(problem.n_views):
        intr = problem.intrinsics[i]
        h, w = problem.shape(i)
        ys, xs = np.mgrid[0:h, 0:w]
        rays = pixel_rays(intr, xs.astype(np.float64), ys.astype(np.float64))
        pts_cam = derived[i].depth[..., None] * rays
        maps.append(pts_cam @ derived[i].rotation.T + derived[i].center)
    return maps


def _polish(state, problem, lr_vec, steps, history):
    """Backtracking line search along the scaled negative gradient."""
    lb = total_loss(state, problem)
    scale = 1.0
    for _ in range(steps):
        g = gauge_project_gradient(state.layout, lb.gradient.copy())
        if not np.all(np.isfinite(g)):
            break
        direction = -lr_vec * g
        improved = False
        while scale > 1e-12:
            trial = SceneState(state.layout, state.params + scale * direction)
            lb_trial = total_loss(trial, problem)
            if np.isfinite(lb_trial.total) and lb_trial.total < lb.total:
                state.params[:] = trial.params
                lb = lb_trial
                history.append((lb.depth_term, lb.registration_term, lb.total))
                scale *= 1.5
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
    return lb


def solve(problem: Problem, config: OptimConfig | None = None) -> Solution:
    """Minimize the objective from the zero state; deterministic."""
    config = config or OptimConfig()
    problem.validate()
    state = apply_gauge_fix(init_state(problem, config.grid_size))
    lr_vec = state.layout.block_rates(
        config.lr_pose, config.lr_scale, config.lr_residual, config.lr_conf
    )
    moments = AdamMoments.zeros(state.layout.size)
    history: list[tuple[float, float, float]] = []
    converged = False
    diverged = False
    still = 0
    prev_total = None
    last_finite = state.copy()
    iterations = 0
    for it in range(config.max_iters):
        lb = total_loss(state, problem)
        if not np.isfinite(lb.total):
            diverged = True
            state = last_finite
            break
        last_finite = state.copy()
        history.append((lb.depth_term, lb.registration_term, lb.total))
        iterations = it + 1
        if prev_total is not None:
            rel = abs(lb.total - prev_total) / max(abs(prev_total), 1e-12)
            still = still + 1 if rel < config.conv_rel_change else 0
            if still >= config.conv_patience:
                converged = True
                break
        prev_total = lb.total
        try:
            step(state, lb.gradient, moments, config, it, lr_vec)
        except NumericalError:
            diverged = True
            state = last_finite
            break

    if config.polish and not diverged:
        _polish(state, problem, lr_vec, config.polish_steps, history)

    if not history:
        lb = total_loss(state, problem)
        history.append((lb.depth_term, lb.registration_term, lb.total))

    derived = derive_views(state, problem)
    point_maps = export_pointmap(state, problem)
    return Solution(
        poses=[PoseSE3(dv.rotation, dv.center, _validate=False) for dv in derived],
        depths=[dv.depth for dv in derived],
        confidences=[dv.conf for dv in derived],
        point_maps=point_maps,
        loss_history=np.asarray(history, dtype=np.float64),
        converged=converged,
        iterations=iterations,
        diverged=diverged,
        state=state,
    )
