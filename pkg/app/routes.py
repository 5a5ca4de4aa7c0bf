from typing import List

from fastapi import APIRouter, Depends, HTTPException

from app import schemas
from app.bench import LoadedProblem, load_problem
from app.config import data_dir, load_config
from app.exceptions import DocumentNotFoundError, MotionGenError
from app.logger_service import LoggerService, get_logger_service
from app.models import Pose
from app.motion_gen import plan_motion, solve_ik_detailed
from app.robot_model import forward_kinematics, load_robot, robot_summary
from app.validations import validate_trajectory
from app.world_geometry import load_scene, scene_summary

router = APIRouter()


def _load(problem: schemas.ProblemDocument, seed, logger: LoggerService) -> LoadedProblem:
    try:
        config = load_config(overrides={"seed": seed} if seed is not None else None)
        return load_problem(problem, config, base_dir=data_dir())
    except DocumentNotFoundError as e:
        logger.warning(f"Problem references a missing document: {e}")
        raise HTTPException(status_code=404, detail=str(e))
    except MotionGenError as e:
        raise HTTPException(status_code=400, detail=str(e))


def _bundled(kind: str) -> List[str]:
    folder = data_dir() / kind
    if not folder.is_dir():
        return []
    return sorted(path.stem for path in folder.glob("*.json"))


@router.get("/robots")
def list_robots(logger: LoggerService = Depends(get_logger_service)):
    robots = []
    for name in _bundled("robots"):
        try:
            robots.append({"file": name, **robot_summary(load_robot(data_dir() / "robots" / f"{name}.json"))})
        except MotionGenError as e:
            logger.error(f"Bundled robot {name} failed to load: {e}")
    logger.info(f"Listed {len(robots)} robots")
    return robots


@router.get("/scenes")
def list_scenes(logger: LoggerService = Depends(get_logger_service)):
    scenes = []
    for name in _bundled("scenes"):
        try:
            scenes.append({"file": name, **scene_summary(load_scene(data_dir() / "scenes" / f"{name}.json"))})
        except MotionGenError as e:
            logger.error(f"Bundled scene {name} failed to load: {e}")
    logger.info(f"Listed {len(scenes)} scenes")
    return scenes


@router.post("/plan", response_model=schemas.ResultDocument)
def plan(request: schemas.PlanRequest, logger: LoggerService = Depends(get_logger_service)):
    problem = _load(request.problem, request.seed, logger)
    try:
        result = plan_motion(problem.robot, problem.world, problem.start, problem.goal, problem.config,
                             execution=True)
    except MotionGenError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Error planning problem {problem.id}: {str(e)}")
        raise HTTPException(status_code=500, detail="Error planning motion")
    logger.info(f"Planned problem {problem.id}: success={result.success} ({result.failure_reason})")
    return schemas.ResultDocument.from_result(result)


@router.post("/ik", response_model=schemas.IkResultDocument)
def inverse_kinematics(request: schemas.PlanRequest, logger: LoggerService = Depends(get_logger_service)):
    problem = _load(request.problem, request.seed, logger)
    goal = problem.goal
    if not isinstance(goal, Pose):
        goal = forward_kinematics(problem.robot, goal).ee_pose(0)
    try:
        solutions = solve_ik_detailed(problem.robot, problem.world, goal, problem.config.ik_seeds,
                                      problem.config, current=problem.start)
    except MotionGenError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Error solving IK for problem {problem.id}: {str(e)}")
        raise HTTPException(status_code=500, detail="Error solving IK")
    logger.info(f"Solved IK for problem {problem.id}: {len(solutions)} solutions")
    return schemas.IkResultDocument(solutions=[
        schemas.IkSolutionDocument(q=s.q.tolist(), position_error=s.position_error,
                                   orientation_error=s.orientation_error)
        for s in solutions
    ])


@router.post("/validate", response_model=schemas.ValidationDocument)
def validate(request: schemas.ValidateRequest, logger: LoggerService = Depends(get_logger_service)):
    problem = _load(request.problem, None, logger)
    result = request.result
    if not result.positions:
        raise HTTPException(status_code=400, detail="Result document has no positions to validate")
    try:
        report = validate_trajectory(result.positions, result.interpolation_dt or problem.config.interpolation_dt,
                                     problem.robot, problem.world, problem.goal,
                                     problem.config.position_threshold, problem.config.rotation_threshold,
                                     problem.config.limit_tolerance)
    except MotionGenError as e:
        raise HTTPException(status_code=400, detail=str(e))
    logger.info(f"Validated result for problem {problem.id}: {len(report.violations)} violations")
    return schemas.ValidationDocument.from_report(report)
