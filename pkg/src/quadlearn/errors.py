"""Exception hierarchy shared by the simulator, trainer and harness."""


class QuadLearnError(Exception):
    """Base class for all package errors."""


class GimbalLock(QuadLearnError):
    """Pitch approached +-pi/2 where the Euler-rate kinematics are singular."""


class NonFinite(QuadLearnError):
    """A NaN or infinity appeared in a state, derivative or network quantity."""


class OutOfRange(QuadLearnError):
    """A trajectory was sampled outside [0, duration]."""


class EmptyBatch(QuadLearnError):
    pass


class EmptyLog(QuadLearnError):
    pass


class EmptySeries(QuadLearnError):
    pass


class ZeroBaseline(QuadLearnError):
    pass


class Unstable(QuadLearnError):
    """A data-collection flight hit gimbal lock; the dataset is rejected."""


class VersionMismatch(QuadLearnError):
    pass


class CorruptFile(QuadLearnError):
    pass


class ConfigError(QuadLearnError):
    pass
