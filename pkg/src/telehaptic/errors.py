"""Exception types shared across the telehaptic stack."""


class TelehapticError(Exception):
    """Base class for all library errors."""


# -- geometry / volume -------------------------------------------------------

class PoseInvalid(TelehapticError):
    """Rigid transform rotation is not orthonormal within tolerance."""


class DimensionMismatch(TelehapticError):
    """Image-like inputs disagree on width/height."""


class OutOfVolume(TelehapticError):
    """Query point lies outside the sampled TSDF interior."""


class NoDominantPlane(TelehapticError):
    """Ground plane fit found fewer than the required inlier fraction."""


# -- haptics -----------------------------------------------------------------

class NoSurfaceVisible(TelehapticError):
    """Current raycast produced no valid surface sample."""


# -- segmentation ------------------------------------------------------------

class BehindCamera(TelehapticError):
    """Mark point has non-positive camera depth."""


class OutsideImage(TelehapticError):
    """Projected mark falls outside the image bounds."""


class InvalidSeed(TelehapticError):
    """Seed pixel has no valid depth."""


class UnknownLabel(TelehapticError):
    """No voxel carries the requested object label."""


class SegmentationFailed(TelehapticError):
    """Interactive segmentation produced no labelled region."""


# -- planning ----------------------------------------------------------------

class NoGroundPlane(TelehapticError):
    """Occupancy construction requires a fitted ground plane."""


class StartOccupied(TelehapticError):
    """Planner start position lies in occupied space."""


class GoalOccupied(TelehapticError):
    """Planner goal position lies in occupied space."""


class Unreachable(TelehapticError):
    """RRT exhausted its iteration budget without reaching the goal."""


# -- control -----------------------------------------------------------------

class NoCandidates(TelehapticError):
    """Goal selection called with neither a marking nor a path point."""


class NegativeDelay(TelehapticError):
    """Prediction horizon must be non-negative."""


# -- interaction -------------------------------------------------------------

class EmptyMarking(TelehapticError):
    """No proxy contact survived the floor filter."""


class OverlapsRobot(TelehapticError):
    """Virtual obstacle footprint intersects the robot disc."""


# -- networking --------------------------------------------------------------

class MalformedFrame(TelehapticError):
    """Frame buffer failed magic or length validation."""


class VersionMismatch(TelehapticError):
    """Frame carries an unsupported protocol tag."""


class ChannelTimeout(TelehapticError):
    """Blocking receive or ping expired."""


# -- simulation / orchestration ----------------------------------------------

class ScriptInvalid(TelehapticError):
    """Scripted trajectory is empty of meaning or leaves the scene bounds."""


class ScenarioFailed(TelehapticError):
    """Scenario task could not be completed."""


class BindFailed(TelehapticError):
    """Live session could not bind its socket endpoint."""
