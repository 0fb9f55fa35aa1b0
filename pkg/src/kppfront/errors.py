"""Exception types raised by the wavefront pipeline.

Each error carries a short ``code`` string so that callers (the CLI in
particular) can map failures to exit codes without parsing messages.
"""


class WavefrontError(Exception):
    code = "ERROR"


class NonalignedGrid(WavefrontError):
    code = "NONALIGNED_GRID"


class TailFitFailed(WavefrontError):
    code = "TAIL_FIT_FAILED"


class RejectedR(WavefrontError):
    code = "REJECTED_R"


class NoValidR(WavefrontError):
    code = "NO_VALID_R"


class OrderingFailed(WavefrontError):
    code = "ORDERING_FAILED"


class MonotonicityBroken(WavefrontError):
    code = "MONOTONICITY_BROKEN"

    def __init__(self, message, iteration=None, report=None):
        super().__init__(message)
        self.iteration = iteration
        self.report = report


class NotConverged(WavefrontError):
    code = "NOT_CONVERGED"

    def __init__(self, message, profile=None, report=None):
        super().__init__(message)
        self.profile = profile
        self.report = report


class NoHalfCrossing(WavefrontError):
    code = "NO_HALF_CROSSING"


class WindowTooShort(WavefrontError):
    code = "WINDOW_TOO_SHORT"


class FitRejected(WavefrontError):
    code = "FIT_REJECTED"

    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit
