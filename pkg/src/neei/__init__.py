"""Near-field edge robotics: channels, radio-aware planning, frame selection and fleet gating."""
from .errors import NeeiError, ParseError, ValidationError

__all__ = ["NeeiError", "ParseError", "ValidationError"]
