"""
Command-line surface: python -m app {plan,ik,graph,bench,validate}.

Exit codes: 0 on success, 1 when planning or validation fails, 2 on usage
errors and unreadable or inconsistent documents.
"""
import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from app import schemas
from app.bench import BENCH_MODES, load_problem, run_benchmark
from app.config import load_config
from app.exceptions import MotionGenError
from app.geometric_planner import plan
from app.logger_service import LoggerService
from app.models import Pose
from app.motion_gen import plan_motion, solve_ik_detailed
from app.robot_model import forward_kinematics
from app.validations import validate_trajectory

logger = LoggerService(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default MOTIONGEN_SEED or 0)")
    common.add_argument("--config", default=None, help="JSON config override document")
    common.add_argument("--out", default=None, help="output file (plan, ik, graph, validate) or directory (bench)")

    parser = argparse.ArgumentParser(prog="python -m app", description="Parallel motion generation toolkit")
    commands = parser.add_subparsers(dest="command", required=True)

    command = commands.add_parser("plan", parents=[common], help="run the full pipeline on one problem")
    command.add_argument("--problem", required=True)
    command.add_argument("--execution", action="store_true", help="also emit the execution-rate trajectory")

    command = commands.add_parser("ik", parents=[common], help="collision-free IK for a problem's goal")
    command.add_argument("--problem", required=True)
    command.add_argument("--seeds", type=int, default=None)

    command = commands.add_parser("graph", parents=[common], help="geometric planner only")
    command.add_argument("--problem", required=True)

    command = commands.add_parser("bench", parents=[common], help="run a problem set and write reports")
    command.add_argument("--set", dest="problem_set", required=True)
    command.add_argument("--mode", choices=BENCH_MODES, default="full")
    command.add_argument("--jobs", type=int, default=1)
    command.add_argument("--no-timing", action="store_true", help="leave compute_time out of the report")

    command = commands.add_parser("validate", parents=[common], help="re-check a result document")
    command.add_argument("--problem", required=True)
    command.add_argument("--result", required=True)
    return parser


def _config(args):
    overrides = {"seed": args.seed} if args.seed is not None else None
    return load_config(args.config, overrides)


def _emit(document, out: Optional[str]):
    text = json.dumps(document, indent=2)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _plan(args) -> int:
    problem = load_problem(args.problem, _config(args))
    result = plan_motion(problem.robot, problem.world, problem.start, problem.goal, problem.config,
                         execution=args.execution)
    _emit(schemas.ResultDocument.from_result(result).model_dump(), args.out)
    if not result.success:
        print(f"planning failed: {result.failure_reason}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def _ik(args) -> int:
    problem = load_problem(args.problem, _config(args))
    goal = problem.goal if isinstance(problem.goal, Pose) else forward_kinematics(problem.robot, problem.goal).ee_pose(0)
    solutions = solve_ik_detailed(problem.robot, problem.world, goal, args.seeds or problem.config.ik_seeds,
                                  problem.config, current=problem.start)
    document = schemas.IkResultDocument(solutions=[
        schemas.IkSolutionDocument(q=s.q.tolist(), position_error=s.position_error,
                                   orientation_error=s.orientation_error)
        for s in solutions
    ])
    _emit(document.model_dump(), args.out)
    return EXIT_OK if solutions else EXIT_FAILED


def _graph(args) -> int:
    problem = load_problem(args.problem, _config(args))
    config = problem.config
    if isinstance(problem.goal, Pose):
        solutions = solve_ik_detailed(problem.robot, problem.world, problem.goal, config.ik_seeds, config,
                                      current=problem.start)
        if not solutions:
            print("planning failed: no_ik", file=sys.stderr)
            return EXIT_FAILED
        goal_q = solutions[0].q
    else:
        goal_q = problem.goal
    planner = replace(config.planner, seed=config.planner.seed + config.seed)
    result = plan(problem.robot, problem.world, problem.start[None], goal_q[None], planner)[0]
    _emit({
        "found": result.found,
        "length": result.length if result.found else None,
        "path": result.path.tolist() if result.found else [],
        "diagnostic": result.diagnostic,
    }, args.out)
    return EXIT_OK if result.found else EXIT_FAILED


def _bench(args) -> int:
    out = args.out or "bench_results"
    report = run_benchmark(args.problem_set, _config(args), out, mode=args.mode, jobs=max(args.jobs, 1),
                           record_timing=not args.no_timing)
    print(f"{report.problems} problems, success {report.success_percent}, reports in {out}")
    return EXIT_OK


def _validate(args) -> int:
    problem = load_problem(args.problem, _config(args))
    try:
        result = schemas.ResultDocument.model_validate_json(Path(args.result).read_text())
    except (OSError, ValidationError) as e:
        raise MotionGenError(f"Cannot read result document {args.result}: {e}")
    if not result.positions:
        print(f"result has no trajectory (failure_reason {result.failure_reason})", file=sys.stderr)
        return EXIT_FAILED
    config = problem.config
    report = validate_trajectory(result.positions, result.interpolation_dt or config.interpolation_dt,
                                 problem.robot, problem.world, problem.goal, config.position_threshold,
                                 config.rotation_threshold, config.limit_tolerance)
    _emit(schemas.ValidationDocument.from_report(report).model_dump(), args.out)
    if not report.ok:
        print(f"invalid trajectory: {report.first_violation()}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


COMMANDS = {
    "plan": _plan,
    "ik": _ik,
    "graph": _graph,
    "bench": _bench,
    "validate": _validate,
}


def cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        code = COMMANDS[args.command](args)
    except MotionGenError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logger.debug(f"[CLI] {args.command} finished with exit code {code}")
    return code


def main():
    sys.exit(cli())
