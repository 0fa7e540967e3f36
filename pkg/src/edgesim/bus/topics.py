"""Topic and subscription-pattern syntax."""
from __future__ import annotations

from ..kernels import match_topic

MAX_LEVELS = 16


class InvalidTopicError(ValueError):
    pass


def _levels(path: str) -> list[str]:
    if not isinstance(path, str) or not path:
        raise InvalidTopicError("empty topic")
    levels = path.split("/")
    if len(levels) > MAX_LEVELS:
        raise InvalidTopicError(f"{path!r}: more than {MAX_LEVELS} levels")
    if any(lvl == "" for lvl in levels):
        raise InvalidTopicError(f"{path!r}: empty level")
    return levels


def validate_topic(topic: str) -> str:
    """Concrete publish topic: no wildcards anywhere."""
    for lvl in _levels(topic):
        if "+" in lvl or "#" in lvl:
            raise InvalidTopicError(f"{topic!r}: wildcards not allowed in a publish topic")
    return topic


def validate_pattern(pattern: str) -> str:
    levels = _levels(pattern)
    for i, lvl in enumerate(levels):
        if lvl == "#":
            if i != len(levels) - 1:
                raise InvalidTopicError(f"{pattern!r}: '#' must be the last level")
        elif lvl != "+" and ("+" in lvl or "#" in lvl):
            raise InvalidTopicError(f"{pattern!r}: wildcard must occupy a whole level")
    return pattern


def is_valid_topic(topic: str) -> bool:
    try:
        validate_topic(topic)
    except InvalidTopicError:
        return False
    return True


def is_valid_pattern(pattern: str) -> bool:
    try:
        validate_pattern(pattern)
    except InvalidTopicError:
        return False
    return True


def match(pattern: str, topic: str) -> bool:
    """True iff ``topic`` is matched by ``pattern``.

    ``+`` consumes exactly one level; a trailing ``#`` consumes all remaining
    levels, including none (``a/#`` matches ``a``).
    """
    return match_topic(pattern, topic)
