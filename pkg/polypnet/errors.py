"""
Exception hierarchy for polypnet.

Library code raises these; main.py is the only place that catches them and
turns them into log lines and exit codes.
"""


class PolypNetError(Exception):
    """Base class for every error raised by the package"""


class ShapeError(PolypNetError, ValueError):
    """Tensor shapes do not satisfy an operation's contract"""


class ConfigError(PolypNetError, ValueError):
    """Invalid or unknown configuration key/value"""


class DatasetError(PolypNetError):
    """Unreadable image, bad directory layout or unknown source"""


class CurveError(PolypNetError, ValueError):
    """ROC/PR curve requested on a degenerate label set"""


class CheckpointError(PolypNetError):
    """Corrupt or unsupported checkpoint file"""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint tensors do not match the parameters built from its config"""

    def __init__(self, missing, unexpected, mismatched):
        self.missing = list(missing)
        self.unexpected = list(unexpected)
        self.mismatched = list(mismatched)
        lines = []
        for name in self.missing:
            lines.append(f"  missing:    {name}")
        for name in self.unexpected:
            lines.append(f"  unexpected: {name}")
        for name, want, got in self.mismatched:
            lines.append(f"  shape:      {name} expected {want}, found {got}")
        super().__init__("checkpoint does not match model parameters:\n" + "\n".join(lines))


class TrainingDivergedError(PolypNetError):
    """Loss became NaN/Inf during training"""

    def __init__(self, phase, epoch):
        self.phase = phase
        self.epoch = epoch
        super().__init__(f"training diverged (non-finite loss) in phase {phase}, epoch {epoch}")


class GradientMissingError(PolypNetError):
    """A registered parameter has no gradient at optimizer step time"""
