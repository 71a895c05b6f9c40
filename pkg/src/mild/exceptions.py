class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite objective."""

    def __init__(self, epoch, value):
        super().__init__(f"objective became {value!r} at epoch {epoch}")
        self.epoch = epoch
        self.value = value


class BudgetExceededError(RuntimeError):
    """An exhaustive check would enumerate more points than allowed."""

    def __init__(self, n_points, limit):
        super().__init__(
            f"exhaustive grid needs {n_points} score vectors, limit is {limit}"
        )
        self.n_points = n_points
        self.limit = limit
