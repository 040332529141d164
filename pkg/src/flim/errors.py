"""Exception hierarchy shared by all flim modules."""


class FlimError(Exception):
    """Base class for every error raised by this package."""


# --- image loading ---

class IoError(FlimError):
    """Missing or undecodable image file."""


class FormatError(FlimError):
    """Decoded raster has the wrong channel count or bit depth."""


class LayoutError(FlimError):
    """Dataset root contains no recognizable class layout."""


class DuplicateIdError(FlimError):
    """Two dataset entries claim the same image id."""


# --- markers and patches ---

class EmptyStrokeError(FlimError):
    """Stroke rasterization produced no pixels."""


class BadPatchSizeError(FlimError):
    """Patch side must be odd and no larger than twice the smallest image side."""


class ParseError(FlimError):
    """Marker file is malformed; message carries line number."""


# --- filter learning ---

class TooFewPatchesError(FlimError):
    """Statistics need at least two patches."""


class BadKError(FlimError):
    """Cluster count outside [1, number of points]."""


class InsufficientMarkersError(FlimError):
    """A class has fewer marker pixels than requested filters."""


# --- network ---

class DimMismatchError(FlimError):
    """Input band count does not match the filter bank."""


class BadWindowError(FlimError):
    """Pooling window larger than the representation."""


class EmptyInputError(FlimError):
    """Operation needs at least one feature map."""


# --- classifiers ---

class SingleClassError(FlimError):
    """Training requires at least two classes."""


class DivergenceError(FlimError):
    """Training loss became non-finite."""


class LengthMismatchError(FlimError):
    """Prediction and truth vectors differ in length."""


# --- projection ---

class BadPerplexityError(FlimError):
    """Perplexity must be positive and below N/3."""


class TooFewPointsError(FlimError):
    """Embedding needs at least four points."""
