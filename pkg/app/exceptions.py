class MotionGenError(Exception):
    """Base class for errors raised by the motion generation service."""


class ConfigError(MotionGenError):
    pass


class RobotConfigError(MotionGenError):
    pass


class SceneConfigError(MotionGenError):
    pass


class ProblemError(MotionGenError):
    pass


class ShapeMismatchError(MotionGenError, ValueError):
    def __init__(self, what: str, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(str(self))

    def __str__(self):
        return f"{self.what}: expected shape {self.expected}, got {self.actual}"


class SolverError(MotionGenError, ArithmeticError):
    pass


class TrajectoryError(MotionGenError, ValueError):
    pass


class DocumentNotFoundError(ProblemError):
    pass
