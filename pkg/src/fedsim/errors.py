"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Invalid configuration: bad key, bad value or violated constraint."""


class ContractError(ValueError):
    """An operation was called with inputs that break its preconditions."""


class LayoutError(ContractError):
    """Two parameter vectors (or a vector and a model) disagree on layout."""


class SkipClient(Exception):
    """Raised by local training when a client has no data to train on."""


class EmptyAggregationError(RuntimeError):
    def __init__(self, defense: str):
        super().__init__(f"defense {defense!r} removed every client update; nothing to aggregate")
        self.defense = defense


class SingletonError(RuntimeError):
    """A second attacker or defender was registered for the same run."""


class ReconstructionError(RuntimeError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"gradient-matching loss became non-finite ({value}) at iteration {iteration}")
        self.iteration = iteration
        self.value = value
