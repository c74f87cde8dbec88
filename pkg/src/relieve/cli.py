"""Command-line surface: simulate, solve, eval, grad-check, export-ply.

Exit codes: 0 success, 1 validation/usage error, 2 numerical failure.
``RELIEVE_THREADS`` overrides ``--threads`` when the flag is absent.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io as bundleio
from .geometry import GeometryError
from .losses import finite_difference_check, random_check_instance, total_loss
from .metrics import DegenerateInputError, evaluate
from .optim import NumericalError, OptimConfig, solve
from .sim import CorruptionConfig, MatchNoiseConfig, build_problem, generate_scene
from .state import ValidationError

GRAD_TOL = 1e-6


class _Parser(argparse.ArgumentParser):
    # Spec'd behavior: unknown flags print usage and exit 1, not argparse's 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="relieve", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", parents=[], help="optimize a problem directory")
    ps.add_argument("problem_dir")
    ps.add_argument("-o", "--out", required=True, dest="out_dir")
    ps.add_argument("--alpha", type=float, default=None)
    ps.add_argument("--lambda", type=float, default=None, dest="lam")
    ps.add_argument("--iters", type=int, default=2000)
    ps.add_argument("--lr", type=float, default=1e-2)
    ps.add_argument("--grid", type=int, default=16)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--threads", type=int, default=None)

    pm = sub.add_parser("simulate", help="write a synthetic problem directory")
    pm.add_argument("-o", "--out", required=True, dest="out_dir")
    pm.add_argument("--views", type=int, default=8)
    pm.add_argument("--res", type=str, default="64x48")
    pm.add_argument("--corruption", type=float, default=0.1)
    pm.add_argument("--match-noise", type=float, default=0.5)
    pm.add_argument("--seed", type=int, default=42)

    pe = sub.add_parser("eval", help="evaluate a solution against ground truth")
    pe.add_argument("solution_dir")
    pe.add_argument("gt_dir")

    pg = sub.add_parser("grad-check", help="verify analytic gradients")
    pg.add_argument("--probes", type=int, default=12)
    pg.add_argument("--step", type=float, default=1e-6)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--instances", type=int, default=5)

    pp = sub.add_parser("export-ply", help="write a confidence-filtered point cloud")
    pp.add_argument("solution_dir")
    pp.add_argument("-o", "--out", required=True, dest="out_file")
    pp.add_argument("--conf-floor", type=float, default=0.5)
    return p


def _threads(flag_value):
    if flag_value is not None:
        return flag_value
    env = os.environ.get("RELIEVE_THREADS")
    return int(env) if env else None


def _cmd_solve(args) -> int:
    problem = bundleio.load_problem(args.problem_dir, alpha=args.alpha, lam=args.lam)
    config = OptimConfig(
        max_iters=args.iters,
        lr_pose=args.lr,
        lr_scale=args.lr,
        lr_residual=args.lr / 10.0,
        lr_conf=args.lr,
        grid_size=args.grid,
        seed=args.seed,
        threads=_threads(args.threads),
    )
    solution = solve(problem, config)
    bundleio.save_solution(args.out_dir, solution, config)
    last = solution.loss_history[-1]
    print(
        f"solved: iterations={solution.iterations} converged={solution.converged} "
        f"total={last[2]:.6g} (depth={last[0]:.6g}, registration={last[1]:.6g})"
    )
    if solution.diverged:
        print("optimization diverged; wrote last finite state", file=sys.stderr)
        return 2
    return 0


def _cmd_simulate(args) -> int:
    try:
        w, h = (int(v) for v in args.res.lower().split("x"))
    except ValueError:
        raise ValidationError(f"--res expects WxH, got {args.res!r}")
    amp = args.corruption
    corruption = CorruptionConfig(
        scale_range=(max(1.0 - 3.0 * amp, 0.05), 1.0 + 3.0 * amp),
        field_amplitude=amp,
    )
    matches = MatchNoiseConfig(sigma=args.match_noise)
    scene = generate_scene(args.views, (w, h), seed=args.seed)
    problem, scene = build_problem(scene, corruption, matches, seed=args.seed)
    bundleio.save_problem(args.out_dir, problem)
    gt_dir = os.path.join(args.out_dir, "gt")
    bundleio.save_ground_truth(gt_dir, scene.intrinsics, scene.poses, scene.depths)
    total_matches = sum(cs.count for cs in problem.correspondences)
    print(
        f"simulated {args.views} views at {w}x{h}: "
        f"{len(problem.correspondences)} pairs, {total_matches} matches -> {args.out_dir}"
    )
    return 0


def _cmd_eval(args) -> int:
    sol = bundleio.load_solution(args.solution_dir)
    _, gt_poses, gt_depths, gt_points = bundleio.load_ground_truth(args.gt_dir)
    report = evaluate(
        sol.poses, sol.depths, sol.point_maps, gt_poses, gt_depths, gt_points
    )
    for line in report.lines():
        print(line)
    return 0


def _cmd_grad_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for k in range(args.instances):
        state, problem = random_check_instance(int(rng.integers(2**31)))
        err = finite_difference_check(
            state, problem, probe_count=args.probes, step=args.step, seed=args.seed + k
        )
        print(f"instance {k}: max relative gradient error {err:.3e}")
        worst = max(worst, err)
    print(f"worst over {args.instances} instances: {worst:.3e} (tolerance {GRAD_TOL:.0e})")
    if not np.isfinite(worst) or worst >= GRAD_TOL:
        return 2
    return 0


def _cmd_export_ply(args) -> int:
    sol = bundleio.load_solution(args.solution_dir)
    bundleio.export_ply(sol.point_maps, sol.confidences, args.out_file, args.conf_floor)
    print(f"wrote {bundleio.read_ply_count(args.out_file)} vertices to {args.out_file}")
    return 0


_COMMANDS = {
    "solve": _cmd_solve,
    "simulate": _cmd_simulate,
    "eval": _cmd_eval,
    "grad-check": _cmd_grad_check,
    "export-ply": _cmd_export_ply,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, GeometryError, DegenerateInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
