"""Exception hierarchy.

Everything raised on purpose by this package derives from
:class:`AdaThreshError`, so callers (and the CLI) can separate data and
feasibility problems from programming errors.
"""


class AdaThreshError(Exception):
    """Base class for data, design and feasibility errors."""


class ParseError(AdaThreshError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IsolatedNodeError(AdaThreshError):
    def __init__(self, node):
        self.node = node
        super().__init__(
            f"node {node} has no neighbours; its exposure fraction is undefined "
            "(use the 'drop' isolated-node policy to exclude it)"
        )


class EnumerationCapError(AdaThreshError):
    def __init__(self, coins, cap):
        self.coins = coins
        self.cap = cap
        super().__init__(
            f"exact enumeration needs 2**{coins} assignments, above the cap of {cap}; "
            "use the Monte Carlo oracle / probability engine instead"
        )


class PositivityError(AdaThreshError):
    def __init__(self, unit, h, arm):
        self.unit = unit
        self.h = h
        self.arm = arm
        super().__init__(
            f"exposure probability of unit {unit} is zero for the {arm} arm at h={h}"
        )


class EmptyArmError(AdaThreshError):
    def __init__(self, arm, h):
        self.arm = arm
        self.h = h
        super().__init__(f"no units in the {arm} arm at h={h}")


class DegenerateFitError(AdaThreshError):
    """Least-squares design matrix is rank deficient on the requested window."""


class VarianceInconsistencyError(AdaThreshError):
    def __init__(self, i, j, h, kind):
        self.pair = (i, j)
        self.h = h
        super().__init__(
            f"joint probability pi^{kind} of units ({i}, {j}) at h={h} is zero but both "
            "exposures were observed; the probability table needs more draws"
        )


class NoFeasibleThresholdError(AdaThreshError):
    pass


class ConfigError(AdaThreshError):
    pass
