"""Exception types shared across the package."""


class CacheInvalError(Exception):
    """Base class for all package errors."""


class NoPredicates(CacheInvalError):
    """Query has no selection predicates; caller must register coarse-grained."""


class InvalidInterval(CacheInvalError):
    """Interval lower bound exceeds upper bound."""


class ConfigMismatch(CacheInvalError):
    """Bloom filters built with different configurations were combined."""


class EmptyResult(CacheInvalError):
    """Empty query results are never cached and carry no signature."""


class UnknownTable(CacheInvalError):
    pass


class UnknownAttribute(CacheInvalError):
    pass


class MissingTuple(CacheInvalError):
    """Update/Delete targeted a primary key that does not exist."""


class DuplicatePk(CacheInvalError):
    """Insert targeted a primary key that already exists."""


class NoSuchIndex(CacheInvalError):
    """Neighbor lookup requires a secondary index on the attribute."""


class FixtureError(CacheInvalError):
    """Malformed fixture file."""
