"""Exception hierarchy.

Everything a user can trigger with a bad kernel, a bad flag or an infeasible
configuration derives from ``WarpSpecError`` (CLI exit code 1).  Broken
internal invariants raise ``InternalError`` (exit code 2).
"""


class WarpSpecError(Exception):
    """Base class for user-facing errors."""

    module = "warpspec"

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class InternalError(Exception):
    """A compiler or simulator invariant did not hold."""


class KernelSyntaxError(WarpSpecError):
    module = "tile-ir"

    def __init__(self, msg, line=None, col=None):
        self.line, self.col = line, col
        where = f"line {line}" + (f", col {col}" if col is not None else "") if line else ""
        super().__init__(f"{where}: {msg}" if where else msg)


class KernelTypeError(WarpSpecError):
    """Raised by parse_kernel when validation produced diagnostics."""

    module = "tile-ir"

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class KernelRuntimeError(WarpSpecError):
    module = "tile-ir"


class ProtocolViolation(WarpSpecError):
    module = "aref"


class UnsupportedKernel(WarpSpecError):
    module = "partitioner"


class PipelineInfeasible(WarpSpecError):
    module = "pipeliner"


class StagePlanAmbiguous(WarpSpecError):
    module = "pipeliner"


class UnloweredAref(WarpSpecError):
    module = "lowering"


class SmemOverflow(WarpSpecError):
    module = "lowering"


class IndivisibleTile(WarpSpecError):
    module = "grid-opt"


class RegisterBudgetExceeded(WarpSpecError):
    module = "grid-opt"


class ConfigError(WarpSpecError):
    module = "machine-sim"
