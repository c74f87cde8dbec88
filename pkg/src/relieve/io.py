"""Bit-exact file formats and problem/solution bundles.

Formats are deliberately boring and language-neutral: PFM for float
rasters (little-endian, bottom-up rows, the format standard), CSV for
matches, JSON for manifests, TUM for trajectories, binary PLY for clouds.
All writers are canonical: identical in-memory state produces byte
identical files. Poses round-trip at full double precision (17 significant
digits); rasters are stored at the PFM-mandated float32 width, which is
their canonical precision on disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, PoseSE3, pixel_rays
from .optim import OptimConfig, Solution
from .state import CorrespondenceSet, HyperParams, Problem, ValidationError

FORMAT_VERSION = "1"

MATCH_HEADER = "ui_x,ui_y,uj_x,uj_y"


# ---------------------------------------------------------------------------
# PFM rasters


def write_pfm(path, data: np.ndarray) -> None:
    """Grayscale ``Pf`` for (H, W) arrays, color ``PF`` for (H, W, 3)."""
    data = np.asarray(data)
    path = Path(path)
    if data.ndim == 2:
        magic = b"Pf"
        h, w = data.shape
    elif data.ndim == 3 and data.shape[2] == 3:
        magic = b"PF"
        h, w = data.shape[:2]
    else:
        raise ValidationError(f"PFM supports (H,W) or (H,W,3) arrays, got {data.shape}")
    payload = np.ascontiguousarray(data[::-1].astype("<f4")).tobytes()
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(payload)


def read_pfm(path) -> np.ndarray:
    """Load a PFM raster as float64, honoring the endianness scale field."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise ValidationError(f"{path.name}: not a PFM file (magic {magic!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise ValidationError(f"{path.name}: malformed PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        channels = 3 if magic == b"PF" else 1
        count = w * h * channels
        dtype = "<f4" if scale < 0 else ">f4"
        raw = np.frombuffer(f.read(count * 4), dtype=dtype)
        if raw.size != count:
            raise ValidationError(f"{path.name}: truncated PFM payload")
    arr = raw.reshape((h, w) if channels == 1 else (h, w, channels))
    return arr[::-1].astype(np.float64)


# ---------------------------------------------------------------------------
# TUM trajectories


def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """(qx, qy, qz, qw) with canonical sign (qw >= 0)."""
    m = np.asarray(R, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s, 0.25 * s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s, (m[2, 1] - m[1, 2]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s, (m[0, 2] - m[2, 0]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s, (m[1, 0] - m[0, 1]) / s])
    q /= np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    elif q[3] == 0:
        nz = np.flatnonzero(q)
        if nz.size and q[nz[0]] < 0:
            q = -q
    return q


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    x, y, z, w = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def write_trajectory(path, poses: list[PoseSE3]) -> None:
    """TUM format, timestamps are view indices: idx tx ty tz qx qy qz qw."""
    lines = []
    for i, pose in enumerate(poses):
        t = pose.translation
        q = rotation_to_quat(pose.rotation)
        vals = " ".join(f"{v:.17g}" for v in (*t, *q))
        lines.append(f"{i} {vals}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_trajectory(path) -> list[PoseSE3]:
    poses = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 8:
            raise ValidationError(f"{Path(path).name}: malformed trajectory row {line!r}")
        vals = np.array([float(v) for v in parts[1:]])
        poses.append(PoseSE3(quat_to_rotation(vals[3:]), vals[:3], _validate=False))
    return poses


# ---------------------------------------------------------------------------
# Correspondence CSV


def write_matches(path, cs: CorrespondenceSet) -> None:
    rows = [MATCH_HEADER]
    for (uix, uiy), (ujx, ujy) in zip(cs.ui, cs.uj):
        rows.append(f"{uix:.17g},{uiy:.17g},{ujx:.17g},{ujy:.17g}")
    Path(path).write_text("\n".join(rows) + "\n", encoding="ascii")


def read_matches(path, view_i: int, view_j: int) -> CorrespondenceSet:
    text = Path(path).read_text(encoding="ascii").splitlines()
    if not text or text[0].strip() != MATCH_HEADER:
        raise ValidationError(f"{Path(path).name}: missing '{MATCH_HEADER}' header")
    vals = []
    for row in text[1:]:
        if not row.strip():
            continue
        parts = row.split(",")
        if len(parts) != 4:
            raise ValidationError(f"{Path(path).name}: malformed row {row!r}")
        vals.append([float(p) for p in parts])
    arr = np.asarray(vals, dtype=np.float64).reshape(-1, 4)
    return CorrespondenceSet(view_i, view_j, arr[:, :2], arr[:, 2:])


# ---------------------------------------------------------------------------
# Problem directories


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def save_problem(directory, problem: Problem) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    views = []
    for i, intr in enumerate(problem.intrinsics):
        name = f"pseudo_{i:03d}.pfm"
        write_pfm(directory / name, problem.pseudo_depths[i])
        views.append(
            {
                "width": intr.width,
                "height": intr.height,
                "fx": intr.fx,
                "fy": intr.fy,
                "cx": intr.cx,
                "cy": intr.cy,
                "depth_file": name,
            }
        )
    corrs = []
    for k, cs in enumerate(problem.correspondences):
        name = f"matches_{cs.view_i:03d}_{cs.view_j:03d}_{k:03d}.csv"
        write_matches(directory / name, cs)
        corrs.append({"view_i": cs.view_i, "view_j": cs.view_j, "file": name})
    manifest = {
        "version": FORMAT_VERSION,
        "views": views,
        "correspondences": corrs,
        "hyperparams": {"alpha": problem.hyperparams.alpha, "lambda": problem.hyperparams.lam},
    }
    (directory / "problem.json").write_text(_canonical_json(manifest), encoding="ascii")


def load_problem(directory, alpha: float | None = None, lam: float | None = None) -> Problem:
    """Load and fully validate a problem directory.

    ``alpha``/``lam`` override the manifest's hyperparameters when given.
    """
    directory = Path(directory)
    manifest_path = directory / "problem.json"
    if not manifest_path.is_file():
        raise ValidationError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="ascii"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"problem.json: invalid JSON ({exc})") from exc
    if manifest.get("version") != FORMAT_VERSION:
        raise ValidationError(f"problem.json: unsupported version {manifest.get('version')!r}")
    intrinsics = []
    depths = []
    for i, view in enumerate(manifest.get("views", [])):
        for key in ("width", "height", "fx", "fy", "cx", "cy", "depth_file"):
            if key not in view:
                raise ValidationError(f"problem.json: view {i} missing field '{key}'")
        intr = CameraIntrinsics(
            view["fx"], view["fy"], view["cx"], view["cy"], view["width"], view["height"]
        )
        dep_path = directory / view["depth_file"]
        if not dep_path.is_file():
            raise ValidationError(f"view {i}: depth file missing: {view['depth_file']}")
        dep = read_pfm(dep_path)
        if dep.ndim != 2 or dep.shape != (intr.height, intr.width):
            raise ValidationError(
                f"{view['depth_file']}: raster {dep.shape} does not match manifest "
                f"size {(intr.height, intr.width)}"
            )
        intrinsics.append(intr)
        depths.append(dep)
    corrs = []
    for k, entry in enumerate(manifest.get("correspondences", [])):
        for key in ("view_i", "view_j", "file"):
            if key not in entry:
                raise ValidationError(f"problem.json: correspondence {k} missing '{key}'")
        cpath = directory / entry["file"]
        if not cpath.is_file():
            raise ValidationError(f"correspondence file missing: {entry['file']}")
        corrs.append(read_matches(cpath, entry["view_i"], entry["view_j"]))
    hp = manifest.get("hyperparams", {})
    hyper = HyperParams(
        alpha=alpha if alpha is not None else hp.get("alpha", 1.0),
        lam=lam if lam is not None else hp.get("lambda", 0.5),
    )
    problem = Problem(intrinsics, depths, corrs, hyper)
    problem.validate()
    return problem


# ---------------------------------------------------------------------------
# Ground-truth directories (written by `simulate`, consumed by `eval`)


def save_ground_truth(directory, intrinsics, poses, depths) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    views = []
    for i, intr in enumerate(intrinsics):
        name = f"depth_{i:03d}.pfm"
        write_pfm(directory / name, depths[i])
        views.append(
            {
                "width": intr.width,
                "height": intr.height,
                "fx": intr.fx,
                "fy": intr.fy,
                "cx": intr.cx,
                "cy": intr.cy,
                "depth_file": name,
            }
        )
    write_trajectory(directory / "trajectory.txt", poses)
    manifest = {"version": FORMAT_VERSION, "views": views, "trajectory_file": "trajectory.txt"}
    (directory / "gt.json").write_text(_canonical_json(manifest), encoding="ascii")


def load_ground_truth(directory):
    """Returns (intrinsics, poses, depths, point_maps)."""
    directory = Path(directory)
    manifest_path = directory / "gt.json"
    if not manifest_path.is_file():
        raise ValidationError(f"manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="ascii"))
    if manifest.get("version") != FORMAT_VERSION:
        raise ValidationError(f"gt.json: unsupported version {manifest.get('version')!r}")
    intrinsics = []
    depths = []
    for i, view in enumerate(manifest["views"]):
        intr = CameraIntrinsics(
            view["fx"], view["fy"], view["cx"], view["cy"], view["width"], view["height"]
        )
        dep = read_pfm(directory / view["depth_file"])
        intrinsics.append(intr)
        depths.append(dep)
    poses = read_trajectory(directory / manifest["trajectory_file"])
    if len(poses) != len(intrinsics):
        raise ValidationError("gt trajectory row count does not match view count")
    point_maps = [
        dense_pointmap(intr, pose, dep) for intr, pose, dep in zip(intrinsics, poses, depths)
    ]
    return intrinsics, poses, depths, point_maps


def dense_pointmap(intr: CameraIntrinsics, pose: PoseSE3, depth: np.ndarray) -> np.ndarray:
    h, w = depth.shape
    ys, xs = np.mgrid[0:h, 0:w]
    rays = pixel_rays(intr, xs.astype(np.float64), ys.astype(np.float64))
    return (depth[..., None] * rays) @ pose.rotation.T + pose.translation


# ---------------------------------------------------------------------------
# Solution bundles


@dataclass
class SolutionBundle:
    poses: list[PoseSE3]
    depths: list[np.ndarray]
    confidences: list[np.ndarray]
    point_maps: list[np.ndarray]
    loss_history: np.ndarray
    meta: dict


def save_solution(directory, solution: Solution, config: OptimConfig | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = len(solution.poses)
    write_trajectory(directory / "trajectory.txt", solution.poses)
    for i in range(n):
        write_pfm(directory / f"depth_{i:03d}.pfm", solution.depths[i])
        write_pfm(directory / f"conf_{i:03d}.pfm", solution.confidences[i])
        write_pfm(directory / f"points_{i:03d}.pfm", solution.point_maps[i])
    rows = ["iter,depth_term,registration_term,total"]
    for it, (d, r, t) in enumerate(solution.loss_history):
        rows.append(f"{it},{d:.17g},{r:.17g},{t:.17g}")
    (directory / "loss_history.csv").write_text("\n".join(rows) + "\n", encoding="ascii")
    meta = {
        "version": FORMAT_VERSION,
        "views": n,
        "iterations": solution.iterations,
        "converged": solution.converged,
        "diverged": solution.diverged,
    }
    if config is not None:
        meta["config"] = {
            "max_iters": config.max_iters,
            "lr_pose": config.lr_pose,
            "lr_scale": config.lr_scale,
            "lr_residual": config.lr_residual,
            "lr_conf": config.lr_conf,
            "grid_size": config.grid_size,
            "seed": config.seed,
            "threads": config.threads,
        }
    (directory / "meta.json").write_text(_canonical_json(meta), encoding="ascii")


def load_solution(directory) -> SolutionBundle:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise ValidationError(f"manifest not found: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="ascii"))
    if meta.get("version") != FORMAT_VERSION:
        raise ValidationError(f"meta.json: unsupported version {meta.get('version')!r}")
    n = meta.get("views")
    poses = read_trajectory(directory / "trajectory.txt")
    if len(poses) != n:
        raise ValidationError("trajectory row count does not match view count")
    depths = []
    confs = []
    pts = []
    for i in range(n):
        for name, sink in (
            (f"depth_{i:03d}.pfm", depths),
            (f"conf_{i:03d}.pfm", confs),
            (f"points_{i:03d}.pfm", pts),
        ):
            path = directory / name
            if not path.is_file():
                raise ValidationError(f"partial solution bundle: missing {name}")
            sink.append(read_pfm(path))
    hist_path = directory / "loss_history.csv"
    if not hist_path.is_file():
        raise ValidationError("partial solution bundle: missing loss_history.csv")
    hist_rows = hist_path.read_text(encoding="ascii").splitlines()[1:]
    hist = np.asarray(
        [[float(v) for v in row.split(",")[1:]] for row in hist_rows if row.strip()],
        dtype=np.float64,
    )
    return SolutionBundle(poses, depths, confs, pts, hist, meta)


# ---------------------------------------------------------------------------
# PLY clouds


def export_ply(point_maps, conf_maps, path, confidence_floor: float = 0.5) -> None:
    """Binary little-endian PLY of xyz vertices with W >= confidence_floor."""
    pts = []
    for pm, cm in zip(point_maps, conf_maps):
        mask = cm.ravel() >= confidence_floor
        pts.append(pm.reshape(-1, 3)[mask])
    cloud = np.concatenate(pts) if pts else np.zeros((0, 3))
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {cloud.shape[0]}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(cloud.astype("<f4")).tobytes())


def read_ply_count(path) -> int:
    """Vertex count declared in a PLY header (for verification)."""
    with open(path, "rb") as f:
        for _ in range(16):
            line = f.readline().decode("ascii", errors="replace").strip()
            if line.startswith("element vertex"):
                return int(line.split()[-1])
            if line == "end_header":
                break
    raise ValidationError(f"{path}: no vertex element in PLY header")
