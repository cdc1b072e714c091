"""Exception types shared across the simulator."""


class UabsimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(UabsimError):
    """Invalid or inconsistent run configuration."""


class TraceError(UabsimError):
    """Problem with a ground-user trace file or trace set."""


class TraceParseError(TraceError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


class TraceCoverageError(TraceError):
    pass


class TraceBoundsError(TraceError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


class PlacementError(UabsimError):
    """Could not place agents at the required mutual separation."""


class ContractViolation(UabsimError):
    """A caller broke an API contract (illegal action, bad dimensions)."""


class CheckpointMismatch(UabsimError):
    """Checkpoint was produced under a different configuration."""


class MetricUndefined(UabsimError):
    """A metric was requested before enough data exists to define it."""


class TrainingDiverged(UabsimError):
    """Loss became non-finite; training aborted."""
