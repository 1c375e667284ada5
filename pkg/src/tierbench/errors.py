"""Exception taxonomy for the suite.

Benchmark code raises these instead of bare OSError/ValueError so the
runner can distinguish "environment cannot support this experiment"
(recorded as a skip) from genuine failures.
"""


class TierbenchError(Exception):
    """Base class for all suite errors."""


# timing
class NonInvariantTsc(TierbenchError):
    pass


class CalibrationUnstable(TierbenchError):
    pass


class CounterUnavailable(TierbenchError):
    pass


class MockScheduleExhausted(TierbenchError):
    pass


# topology / placement
class TopologyUnreadable(TierbenchError):
    pass


class PinFailed(TierbenchError):
    pass


class OutOfMemory(TierbenchError):
    pass


class HugepageUnavailable(TierbenchError):
    pass


class DaxOpenFailed(TierbenchError):
    pass


class KernelTooOld(TierbenchError):
    pass


class MsrUnavailable(TierbenchError):
    pass


class ResctrlUnavailable(TierbenchError):
    pass


class NonContiguousMask(TierbenchError):
    pass


# patterns
class RegionTooSmall(TierbenchError):
    pass


class BadStride(TierbenchError):
    pass


# benchmarks
class NotEnoughCores(TierbenchError):
    pass


class NoPlateau(TierbenchError):
    pass


class SingleSocket(TierbenchError):
    pass


class InvalidWorkingSet(TierbenchError):
    pass


class PlacementUnrealizable(TierbenchError):
    pass


class EngineUnavailable(TierbenchError):
    pass


class SizeMismatch(TierbenchError):
    pass


class InstructionUnsupported(TierbenchError):
    pass


class StructureUnverified(TierbenchError):
    pass


# runner / reports
class ConfigInvalid(TierbenchError):
    pass


class SchemaMismatch(TierbenchError):
    pass


class UnknownFigure(TierbenchError):
    pass


class IoError(TierbenchError):
    pass
