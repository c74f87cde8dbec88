"""Scene parameterization: what the optimizer actually moves.

Per view the state holds a 6-vector pose tangent (pose = se3_exp), a
log-scale, a coarse log-residual grid bilinearly upsampled to image size,
and per-pixel confidence logits. The derived depth map is

    depth_i(u) = pseudo_i(u) * exp(scale_i + center(upsample(residual_i))(u))

which is positive by construction and equals the pseudo labels exactly at
the zero state. Confidence is W = 2*sigmoid(logit), strictly inside (0, 2).

``center`` subtracts the per-view mean of the upsampled field. Without it
the grid's constant component duplicates the log-scale exactly, and that
null space is not harmless under a per-coordinate optimizer with different
block learning rates: the redundant pair drifts coherently, depths inflate
until the angular term's restoring gradient (which decays like 1/depth)
lets go, and the solve escapes into a rotation-only degenerate basin.
Centering gives the constant direction an identically zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import CameraIntrinsics, se3_exp_with_grads


class ValidationError(ValueError):
    """Invalid problem or state input."""


@dataclass(frozen=True)
class HyperParams:
    """Loss weights: confidence barrier alpha, registration weight lam."""

    alpha: float = 1.0
    lam: float = 0.5
    charbonnier_eps: float = 1e-6
    angle_eps: float = 1e-12

    def __post_init__(self):
        if min(self.alpha, self.lam, self.charbonnier_eps, self.angle_eps) <= 0:
            raise ValidationError("hyperparameters must be positive")


@dataclass
class CorrespondenceSet:
    """Matched pixel pairs between two views.

    ``ui``/``uj`` are (K, 2) arrays of continuous (x=col, y=row) pixels.
    ``complete`` is False when the simulator could not fill the requested
    match budget for this pair.
    """

    view_i: int
    view_j: int
    ui: np.ndarray
    uj: np.ndarray
    complete: bool = True

    def __post_init__(self):
        self.ui = np.ascontiguousarray(np.asarray(self.ui, dtype=np.float64).reshape(-1, 2))
        self.uj = np.ascontiguousarray(np.asarray(self.uj, dtype=np.float64).reshape(-1, 2))
        if self.view_i == self.view_j:
            raise ValidationError("correspondence set must link two distinct views")
        if self.ui.shape != self.uj.shape:
            raise ValidationError("ui/uj must have matching shapes")

    @property
    def count(self) -> int:
        return self.ui.shape[0]


@dataclass
class Problem:
    """Inputs of one registration run: intrinsics, pseudo depths, matches."""

    intrinsics: list[CameraIntrinsics]
    pseudo_depths: list[np.ndarray]
    correspondences: list[CorrespondenceSet]
    hyperparams: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self):
        self.pseudo_depths = [
            np.ascontiguousarray(np.asarray(d, dtype=np.float64)) for d in self.pseudo_depths
        ]

    @property
    def n_views(self) -> int:
        return len(self.intrinsics)

    def shape(self, i: int) -> tuple[int, int]:
        return self.pseudo_depths[i].shape

    def validate(self) -> None:
        """Raise ValidationError naming the first offending view/file/field."""
        if self.n_views < 2:
            raise ValidationError(f"need at least 2 views, got {self.n_views}")
        if len(self.pseudo_depths) != self.n_views:
            raise ValidationError("one pseudo depth map per view required")
        for i, (intr, dep) in enumerate(zip(self.intrinsics, self.pseudo_depths)):
            if dep.ndim != 2 or dep.shape != (intr.height, intr.width):
                raise ValidationError(
                    f"view {i}: depth shape {dep.shape} does not match "
                    f"intrinsics {(intr.height, intr.width)}"
                )
            bad = ~(np.isfinite(dep) & (dep > 0))
            if np.any(bad):
                idx = int(np.flatnonzero(bad.ravel())[0])
                raise ValidationError(
                    f"view {i}: pseudo depth must be positive and finite, "
                    f"offending pixel index {idx} (value {dep.ravel()[idx]})"
                )
        for k, cs in enumerate(self.correspondences):
            for v in (cs.view_i, cs.view_j):
                if not (0 <= v < self.n_views):
                    raise ValidationError(f"correspondence set {k} references view {v}")
            for tag, u, v in (("ui", cs.ui, cs.view_i), ("uj", cs.uj, cs.view_j)):
                intr = self.intrinsics[v]
                if u.size and (
                    u[:, 0].min() < 0
                    or u[:, 1].min() < 0
                    or u[:, 0].max() > intr.width - 1
                    or u[:, 1].max() > intr.height - 1
                ):
                    raise ValidationError(
                        f"correspondence set {k}: {tag} pixel outside view {v} image"
                    )
        # A problem with matches must have a connected view-pair graph;
        # no matches at all degenerates to per-view depth fitting, which
        # is allowed.
        if self.correspondences and not self._connected():
            raise ValidationError("correspondence graph does not connect all views")

    def _connected(self) -> bool:
        adj: list[set[int]] = [set() for _ in range(self.n_views)]
        for cs in self.correspondences:
            if cs.count > 0:
                adj[cs.view_i].add(cs.view_j)
                adj[cs.view_j].add(cs.view_i)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.n_views


# Upsample corner tables, cached per (height, width, grid_size).
_UPSAMPLE_CACHE: dict[tuple[int, int, int], tuple] = {}


def upsample_tables(height: int, width: int, grid: int) -> tuple:
    """Corner indices and weights mapping a (grid x grid) lattice onto pixels.

    Lattice nodes span the full pixel extent [0, W-1] x [0, H-1]; a 1x1
    lattice is a constant field.
    """
    key = (height, width, grid)
    hit = _UPSAMPLE_CACHE.get(key)
    if hit is not None:
        return hit
    ys, xs = np.mgrid[0:height, 0:width]
    xs = xs.ravel().astype(np.float64)
    ys = ys.ravel().astype(np.float64)
    if grid == 1:
        n = xs.size
        zeros = np.zeros(n, dtype=np.int64)
        ones_w = np.ones(n)
        zero_w = np.zeros(n)
        tables = (zeros, zeros, zeros, zeros, ones_w, zero_w, zero_w, zero_w)
    else:
        gx = xs * (grid - 1) / max(width - 1, 1)
        gy = ys * (grid - 1) / max(height - 1, 1)
        ix = np.minimum(np.floor(gx).astype(np.int64), grid - 2)
        iy = np.minimum(np.floor(gy).astype(np.int64), grid - 2)
        tx = gx - ix
        ty = gy - iy
        i00 = iy * grid + ix
        tables = (
            i00,
            i00 + 1,
            i00 + grid,
            i00 + grid + 1,
            (1.0 - tx) * (1.0 - ty),
            tx * (1.0 - ty),
            (1.0 - tx) * ty,
            tx * ty,
        )
    _UPSAMPLE_CACHE[key] = tables
    return tables


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class StateLayout:
    """Flat parameter layout: per view [tangent(6), scale(1), grid(G*G), logits(H*W)]."""

    grid_size: int
    shapes: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.grid_size < 1:
            raise ValidationError("grid size must be >= 1")
        offsets = []
        off = 0
        g2 = self.grid_size * self.grid_size
        for h, w in self.shapes:
            offsets.append((off, off + 6, off + 7, off + 7 + g2))
            off += 7 + g2 + h * w
        object.__setattr__(self, "_offsets", tuple(offsets))
        object.__setattr__(self, "size", off)

    @property
    def n_views(self) -> int:
        return len(self.shapes)

    def tangent_slice(self, i: int) -> slice:
        o = self._offsets[i]
        return slice(o[0], o[1])

    def scale_index(self, i: int) -> int:
        return self._offsets[i][1]

    def grid_slice(self, i: int) -> slice:
        o = self._offsets[i]
        return slice(o[2], o[3])

    def logit_slice(self, i: int) -> slice:
        o = self._offsets[i]
        h, w = self.shapes[i]
        return slice(o[3], o[3] + h * w)

    def gauge_indices(self) -> np.ndarray:
        """Coordinates frozen by the gauge fix: view-0 tangent and scale."""
        return np.arange(0, 7)

    def block_rates(self, pose: float, scale: float, residual: float, conf: float) -> np.ndarray:
        """Per-coordinate learning rates for the block-wise optimizer."""
        rates = np.empty(self.size)
        for i in range(self.n_views):
            rates[self.tangent_slice(i)] = pose
            rates[self.scale_index(i)] = scale
            rates[self.grid_slice(i)] = residual
            rates[self.logit_slice(i)] = conf
        return rates


@dataclass
class SceneState:
    """Flat optimization vector plus its layout."""

    layout: StateLayout
    params: np.ndarray

    @staticmethod
    def zeros(layout: StateLayout) -> "SceneState":
        return SceneState(layout, np.zeros(layout.size))

    def copy(self) -> "SceneState":
        return SceneState(self.layout, self.params.copy())

    def tangent(self, i: int) -> np.ndarray:
        return self.params[self.layout.tangent_slice(i)]

    def log_scale(self, i: int) -> float:
        return float(self.params[self.layout.scale_index(i)])

    def set_log_scale(self, i: int, value: float) -> None:
        self.params[self.layout.scale_index(i)] = value

    def residual_grid(self, i: int) -> np.ndarray:
        g = self.layout.grid_size
        return self.params[self.layout.grid_slice(i)].reshape(g, g)

    def confidence_logits(self, i: int) -> np.ndarray:
        return self.params[self.layout.logit_slice(i)].reshape(self.layout.shapes[i])


@dataclass
class ViewDerived:
    """Per-view quantities derived from the state for one evaluation."""

    rotation: np.ndarray
    center: np.ndarray
    rot_grads: np.ndarray  # (3,3,3): dR/d(omega_j)
    center_domega: np.ndarray  # (3,3): dt/d(omega_j)
    vmat: np.ndarray  # dt/dv
    depth: np.ndarray  # (H,W) derived depth map
    shape_map: np.ndarray  # depth with the per-view scale stripped
    conf: np.ndarray  # (H,W) confidence in (0,2)


def derive_views(state: SceneState, problem: Problem) -> list[ViewDerived]:
    """Expand the flat state into poses, depth maps and confidences.

    ``shape_map`` is the scale-stripped depth (pseudo * exp(field)). The
    depth term consumes it instead of the full depth: its value is
    identical by scale invariance of the normalizer, but the frozen
    statistics surrogate then has structurally zero gradient along the
    per-view scale, which the true loss cannot determine either. Feeding
    the full depth makes the near-L1 surrogate exert a full-magnitude
    artifact force on the scales at microscopic residuals, with nothing
    to restore it.
    """
    out = []
    g = state.layout.grid_size
    for i in range(problem.n_views):
        h, w = problem.shape(i)
        R, t, dR, dtdo, V = se3_exp_with_grads(state.tangent(i))
        tables = upsample_tables(h, w, g)
        fld = kernels.upsample_apply(
            np.ascontiguousarray(state.residual_grid(i).ravel()), *tables
        ).reshape(h, w)
        fld -= fld.mean()
        shape_map = problem.pseudo_depths[i] * np.exp(fld)
        depth = np.exp(state.log_scale(i)) * shape_map
        conf = 2.0 * sigmoid(state.confidence_logits(i))
        out.append(ViewDerived(R, t, dR, dtdo, V, depth, shape_map, conf))
    return out


def pullback_gradient(
    state: SceneState,
    problem: Problem,
    derived: list[ViewDerived],
    g_depth: list[np.ndarray],
    g_shape: list[np.ndarray],
    g_conf: list[np.ndarray],
    g_rot: list[np.ndarray],
    g_center: list[np.ndarray],
) -> np.ndarray:
    """Chain per-view gradients on derived quantities back to the flat state.

    ``g_depth[i]`` is dL/d(full depth map) and reaches both the scale and
    the grid; ``g_shape[i]`` is dL/d(shape_map) and reaches the grid only.
    ``g_conf[i]`` is dL/dW, ``g_rot[i]`` dL/dR as a 3x3, ``g_center[i]``
    dL/dt.
    """
    layout = state.layout
    grad = np.zeros(layout.size)
    g = layout.grid_size
    for i in range(problem.n_views):
        h, w = problem.shape(i)
        dv = derived[i]
        # Pose tangent: rotation via dR/d(omega), center via V and dt/d(omega).
        gt_slice = grad[layout.tangent_slice(i)]
        for j in range(3):
            gt_slice[j] = float(np.sum(g_rot[i] * dv.rot_grads[j])) + float(
                g_center[i] @ dv.center_domega[:, j]
            )
        gt_slice[3:] = dv.vmat.T @ g_center[i]
        # Depth chain: d(depth)/d(scale) = depth; the grid acts through the
        # mean-centered upsample, so its adjoint sees a mean-free gradient.
        gd_log = (g_depth[i] * dv.depth).ravel()
        grad[layout.scale_index(i)] = float(gd_log.sum())
        gd_log = gd_log + (g_shape[i] * dv.shape_map).ravel()
        tables = upsample_tables(h, w, g)
        gg = np.zeros(g * g)
        kernels.upsample_adjoint(
            np.ascontiguousarray(gd_log - gd_log.mean()), *tables, gg
        )
        grad[layout.grid_slice(i)] = gg
        # Confidence chain: dW/d(logit) = W (1 - W/2).
        grad[layout.logit_slice(i)] = (
            g_conf[i] * dv.conf * (1.0 - 0.5 * dv.conf)
        ).ravel()
    return grad


def init_state(problem: Problem, grid_size: int = 16) -> SceneState:
    """Zero state: identity poses, unit scales, depth = pseudo, W = 1."""
    layout = StateLayout(grid_size, tuple(problem.shape(i) for i in range(problem.n_views)))
    return SceneState.zeros(layout)


def apply_gauge_fix(state: SceneState) -> SceneState:
    """Anchor the gauge: view-0 pose tangent and log-scale forced to zero."""
    state.params[state.layout.gauge_indices()] = 0.0
    return state


def gauge_project_gradient(layout: StateLayout, grad: np.ndarray) -> np.ndarray:
    """Zero the gradient entries of the gauge-fixed coordinates (in place)."""
    grad[layout.gauge_indices()] = 0.0
    return grad
