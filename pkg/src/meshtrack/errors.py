"""Exception types shared across the package."""


class InputError(Exception):
    """Bad input data: unreadable files, malformed formats, invalid configs."""


class FormatError(InputError):
    """A file or byte stream does not match its declared format."""


class EmptySilhouetteError(InputError):
    """A silhouette mask contains no figure pixels."""


class ScenarioError(InputError):
    """A synthetic scenario is inconsistent (e.g. figure leaves the image)."""


class MeshGenerationError(InputError):
    """The silhouette cannot support the requested reference mesh."""


class NumericalError(Exception):
    """A numerical computation produced non-finite or unusable values."""

    def __init__(self, message, iteration=None, frame=None):
        super().__init__(message)
        self.iteration = iteration
        self.frame = frame


class TrackingAborted(Exception):
    """Tracking failed mid-sequence; partial results remain accessible.

    Attributes
    ----------
    frame : 1-based index of the frame that failed.
    partial_positions : (N, t, 2) array of trajectories up to the last
        completed frame, or None if the reference mesh itself failed.
    diagnostics : list of per-frame diagnostics gathered before the failure.
    """

    def __init__(self, message, frame, partial_positions=None, diagnostics=None):
        super().__init__(f"frame {frame}: {message}")
        self.frame = frame
        self.partial_positions = partial_positions
        self.diagnostics = diagnostics if diagnostics is not None else []
