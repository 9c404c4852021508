"""Exception types shared across the package.

The CLI maps these onto process exit codes (see ``l80lab.cli``):
config problems -> 2, numerical blow-up -> 3, insufficient data -> 4.
"""


class L80Error(Exception):
    """Base class for all l80lab errors."""


class ConfigError(L80Error):
    """Bad preset/config file or inconsistent experiment settings."""


class BlowUpError(L80Error):
    """Integration diverged (non-finite state or |component| > threshold).

    Attributes
    ----------
    step : int
        Global step index at which divergence was detected.
    partial : Trajectory or None
        Samples recorded before the blow-up, when available.
    """

    def __init__(self, step, partial=None):
        super().__init__(f"blow-up at step {step}")
        self.step = int(step)
        self.partial = partial


class InsufficientDataError(L80Error):
    """Input series too short / too sparse for the requested operation."""


class NoGravityWavePeakError(InsufficientDataError):
    """No dominant sub-daily spectral peak found (e.g. slow regime)."""

    def __init__(self, msg="no gravity-wave peak"):
        super().__init__(msg)


class TrainingDivergedError(L80Error):
    """Training loss became non-finite; carries the partial loss history."""

    def __init__(self, epoch, history):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = int(epoch)
        self.history = history
