"""Exception hierarchy.

Every error carries a stable ``code`` string so the CLI can report failures
in machine-readable form.
"""

from __future__ import annotations


class ChartTIRError(Exception):
    code = "Error"


# core model / records
class MalformedRecord(ChartTIRError):
    code = "MalformedRecord"


class InvariantViolation(ChartTIRError, ValueError):
    code = "InvariantViolation"


# turn parser
class NonCompliantTurn(ChartTIRError):
    code = "NonCompliantTurn"


class ArityMismatch(ChartTIRError):
    code = "ArityMismatch"


# sandbox
class SandboxUnavailable(ChartTIRError):
    code = "SandboxUnavailable"


class SpawnFailure(ChartTIRError):
    code = "SpawnFailure"


# service clients
class EndpointUnavailable(ChartTIRError):
    code = "EndpointUnavailable"


class DeadlineExceeded(ChartTIRError):
    code = "DeadlineExceeded"


class MalformedReply(ChartTIRError):
    code = "MalformedReply"


class UnparseableVerdict(ChartTIRError):
    code = "UnparseableVerdict"


class CapabilityError(ChartTIRError):
    code = "CapabilityError"


class CassetteMiss(ChartTIRError):
    code = "CassetteMiss"


# rollout
class PolicyFailure(ChartTIRError):
    """Policy endpoint failed mid-rollout; the partial rollout rides along."""

    code = "PolicyFailure"

    def __init__(self, message, trajectory=None, raw_turns=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.raw_turns = list(raw_turns or [])


class PartialGroupError(ChartTIRError):
    code = "PartialGroupError"

    def __init__(self, message, group=None):
        super().__init__(message)
        self.group = group


# reward
class JudgeRequired(ChartTIRError):
    code = "JudgeRequired"


# grpo
class GroupTooSmall(ChartTIRError, ValueError):
    code = "GroupTooSmall"


class EmptyMask(ChartTIRError, ValueError):
    code = "EmptyMask"


class LengthMismatch(ChartTIRError, ValueError):
    code = "LengthMismatch"


class KinkTooClose(ChartTIRError, ValueError):
    code = "KinkTooClose"


# data synthesis
class RenderFailed(ChartTIRError):
    code = "RenderFailed"

    def __init__(self, message, attempts=0, last_error=""):
        super().__init__(message)
        self.attempts = attempts
        self.last_error = last_error


class GenerationUnparseable(ChartTIRError):
    code = "GenerationUnparseable"


# evaluation
class DatasetMalformed(ChartTIRError):
    code = "DatasetMalformed"


class EmptyDataset(ChartTIRError, ValueError):
    code = "EmptyDataset"


# cli
class ConfigInvalid(ChartTIRError):
    code = "ConfigInvalid"


class UnknownSubcommand(ChartTIRError):
    code = "UnknownSubcommand"
