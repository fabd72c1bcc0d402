"""Exception hierarchy shared by all qsslab modules."""


class QSSLabError(Exception):
    """Base class for all toolkit errors."""


class LayoutError(QSSLabError):
    """State vectors do not match the model layout."""


class SolverError(QSSLabError):
    """Base class for numerical solver failures."""


class MaxIterations(SolverError):
    """Newton iteration did not converge within the iteration cap."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class SingularJacobian(SolverError):
    """A factorization pivot fell below the singularity threshold."""


class SingularDyg(SingularJacobian):
    """The algebraic block D_y g is singular."""


class NonFiniteEntry(SolverError):
    """A residual evaluation produced NaN or inf."""


class NoConvergence(SolverError):
    """The eigenvalue iteration did not converge."""


class SolverFailure(SolverError):
    """An integration step failed even after step-size halving."""


class Diverged(SolverError):
    """A simulated state left the admissible bound."""


class EmptyOverlap(QSSLabError):
    """Two trajectories share no common time interval."""


class Undecided(QSSLabError):
    """A terminal behaviour could not be classified."""


class ParseError(QSSLabError):
    """A configuration document is not well-formed JSON."""

    def __init__(self, message, line=None, path=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        super().__init__(f"{': '.join(loc)}: {message}" if loc else message)
        self.line = line
        self.path = path


class ValidationError(QSSLabError):
    """A configuration document violates the schema; ``key`` names the culprit."""

    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
