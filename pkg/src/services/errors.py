"""Exception types shared by the depth sweep services."""

from __future__ import annotations


class DepthSweepError(Exception):
    """Base class for recoverable pipeline errors."""


class DegenerateProjection(DepthSweepError):
    pass


class EpipoleDegenerate(DepthSweepError):
    pass


class InvalidCameraPlacement(DepthSweepError):
    pass


class NoValidPixels(DepthSweepError):
    pass


class ContractViolation(DepthSweepError):
    pass


class ConfigError(DepthSweepError):
    pass


class ParseError(DepthSweepError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
