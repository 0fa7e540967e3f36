"""Topic-based publish/subscribe bus."""
from .broker import Ack, AuthError, Broker, BusError, BusMessage, NotConnectedError, Session, SubAck
from .topics import InvalidTopicError, is_valid_pattern, is_valid_topic, match, validate_pattern, validate_topic

__all__ = [
    "Ack",
    "AuthError",
    "Broker",
    "BusError",
    "BusMessage",
    "InvalidTopicError",
    "NotConnectedError",
    "Session",
    "SubAck",
    "is_valid_pattern",
    "is_valid_topic",
    "match",
    "validate_pattern",
    "validate_topic",
]
