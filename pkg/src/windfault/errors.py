"""Exception types shared across the pipeline."""


class InvalidArgument(ValueError):
    """Raised when an operation receives an argument outside its contract."""


class SimulationDiverged(RuntimeError):
    """The closed-loop integration produced a non-physical state."""

    def __init__(self, run_id, t, detail=""):
        self.run_id = run_id
        self.t = t
        msg = f"simulation diverged in run {run_id!r} at t={t:.4f}s"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ChecksumError(RuntimeError):
    """A persisted artifact failed its integrity check."""


class SpecMismatch(RuntimeError):
    """A checkpoint was loaded against a model spec it was not trained with."""


class StageFailed(RuntimeError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


class NonFiniteLoss(RuntimeError):
    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
