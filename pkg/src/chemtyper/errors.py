"""Exceptions shared across modules."""


class ContractError(Exception):
    """A caller broke an operation's documented precondition."""
