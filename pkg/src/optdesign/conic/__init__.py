from .model import ConicProgram, Expr, VarHandle, append_bounds
from .solver import ConicSolution, SolverConfig, Status, solve, solve_standard


def solve_data(data, cfg=None):
    """Solve already-compiled program data (see :meth:`ConicProgram.compile`)."""
    return solve_standard(data["c"], data["A"], data["b"], data["G"], data["h"], data["dims"], cfg)


__all__ = ["ConicProgram", "Expr", "VarHandle", "append_bounds", "ConicSolution", "SolverConfig",
           "Status", "solve", "solve_data", "solve_standard"]
