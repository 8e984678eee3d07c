"""Exception types shared across the package.

Pipeline errors are ordinary exceptions inside the library; the session
layer converts them into outcome statuses or protocol error responses,
so none of them should escape a scenario run.
"""


class GraspSimError(Exception):
    """Base class for all package-specific errors."""


class FrameError(GraspSimError):
    """A point or transform was used in the wrong coordinate frame."""


class ChainError(GraspSimError):
    """Joint vector length does not match the kinematic chain."""


class NoConvergence(GraspSimError):
    """The IK solver ran out of iterations (and restarts) without meeting tolerance."""


class Unreachable(GraspSimError):
    """Target position lies outside the arm's workspace sphere."""


class NoObjectAtPrompt(GraspSimError):
    """The segmentation prompt does not select any object."""


class BackendUnavailable(GraspSimError):
    """The external segmentation adapter did not answer in time."""


class AllInvalidDepth(GraspSimError):
    """Every masked pixel has an invalid (zero) depth reading."""


class TargetLost(GraspSimError):
    """The tracker failed to re-associate the target for too many consecutive frames."""


class DegenerateGeometry(GraspSimError):
    """Platform goal is undefined (target directly above the base position)."""


class CollisionUnavoidable(GraspSimError):
    """No collision-free trajectory was found, even after inserting a via-point."""


class UnknownObject(GraspSimError):
    """Object id not present in the scene."""


class ParseError(GraspSimError):
    """Scenario file is not valid JSON."""


class SchemaError(GraspSimError):
    """Scenario file is valid JSON but violates the scenario schema."""


class ProtocolError(GraspSimError):
    """Client message is malformed or not allowed in the current phase."""

    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail
