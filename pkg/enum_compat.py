"""
StrEnum compatibility for interpreters older than 3.11.
Import StrEnum from here instead of enum so every enumeration in the checker
(value types, verdicts, techniques, output formats) shares one base class.
"""

import enum
from typing import Type, TypeVar

from aenum import StrEnum as AEnumStrEnum

if hasattr(enum, 'StrEnum'):
    StrEnum = enum.StrEnum
else:
    StrEnum = AEnumStrEnum

E = TypeVar("E", bound=StrEnum)


def lookup(enum_cls: Type[E], text: str) -> E:
    """
    Find a member by value, ignoring case and surrounding whitespace.

    Raises:
        ValueError: if no member matches; the message lists the accepted values
    """
    wanted = text.strip().lower()
    for member in enum_cls:
        if member.value.lower() == wanted:
            return member
    choices = ", ".join(m.value for m in enum_cls)
    raise ValueError(f"'{text}' is not one of: {choices}")
