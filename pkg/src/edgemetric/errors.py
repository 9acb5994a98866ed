"""Exception types shared across the package."""


class EdgeMetricError(Exception):
    """Base class for all edgemetric errors."""


class ImageReadError(EdgeMetricError):
    """File missing, unreadable, or not a decodable raster."""


class UnsupportedImageError(EdgeMetricError):
    """Decodable file with a channel layout or depth we do not handle."""


class ModelFormatError(EdgeMetricError):
    """Model file is malformed, has a wrong version, or inconsistent dimensions."""


class IncompatibleModelError(EdgeMetricError):
    """Model was trained against a different feature configuration."""


class DatasetError(EdgeMetricError):
    """Dataset directory violates the expected layout or contents."""


class CorpusSpecError(EdgeMetricError):
    """Synthetic corpus description contains unknown or invalid fields."""


class TrainingDivergedError(EdgeMetricError):
    """Training loss became non-finite."""
