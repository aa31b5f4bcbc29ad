"""Exception hierarchy shared by every stage of the search."""


class AccelMineError(Exception):
    """Base class for all package errors."""


class GraphError(AccelMineError, ValueError):
    pass


class ParseError(GraphError):
    """Graph or config file is malformed."""


class CycleError(GraphError):
    """Edges do not form a DAG."""


class UnknownNodeError(CycleError):
    """An edge names an operator that does not exist."""


class AffinityError(GraphError):
    """Operator kind and core affinity disagree."""


class NonForwardInput(GraphError):
    """Training-graph synthesis received non-forward operators."""


class InvalidDesign(AccelMineError, ValueError):
    pass


class InfeasibleBudget(AccelMineError):
    """Not even the smallest core configuration fits the area/power budget."""


class NoCoreForAffinity(AccelMineError):
    """An operator needs a core type that has zero instances."""


class HorizonTooSmall(AccelMineError, ValueError):
    pass


class UnpartitionableModel(AccelMineError):
    """Some operator's training footprint alone exceeds HBM capacity."""


class IndivisibleShape(AccelMineError, ValueError):
    pass


class ConfigError(AccelMineError, ValueError):
    pass
