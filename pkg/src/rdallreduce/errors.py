"""Exception hierarchy shared by the models, engine, collectives and CLI."""


class InvalidArgument(ValueError):
    """A precondition on an argument was violated."""


class InvalidTopology(InvalidArgument):
    """The topology is unusable for the requested algorithm or model."""


class ProtocolFault(RuntimeError):
    """A rank broke the communication protocol (bad region, stale flags, ...)."""

    def __init__(self, message, rank=None):
        super().__init__(message)
        self.rank = rank


class DeadlockError(RuntimeError):
    """Some ranks can never make progress.

    ``blocked`` holds one :class:`~rdallreduce.engine.core.BlockedTask` per
    waiting task, in rank order.
    """

    def __init__(self, message, blocked=()):
        self.blocked = list(blocked)
        lines = [message] + [f"  {b.describe()}" for b in self.blocked]
        super().__init__("\n".join(lines))

    @property
    def blocked_ranks(self):
        return sorted({b.rank for b in self.blocked})
