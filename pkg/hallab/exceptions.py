# hallab/exceptions.py

"""
Exception hierarchy for the hallab package.

Every error raised on purpose by the package derives from ``HallabError`` so the
command line frontend can catch them in one place and turn them into a
structured error record.
"""

from typing import Any, Dict, Optional


class HallabError(ValueError):
    """Base class; carries an optional context dict for the CLI error record."""

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.context: Dict[str, Any] = dict(context or {})


# === fock-core ===
class SiteError(HallabError):
    """A site or mode index lies outside the torus."""


class GaugeError(HallabError):
    """An operation that needs a gauge-invariant operator got something else."""


class LatticeSizeError(HallabError):
    """The lattice is too large for a full Fock-space representation."""


# === interactions ===
class CompatibilityError(HallabError):
    """Translation tags, periodicity or T-compatibility checks failed."""


class SupportError(HallabError):
    """An operator support wraps around the torus where this is not allowed."""


# === hofstadter ===
class FluxQuantizationError(HallabError):
    """b * L is not an integer multiple of 2 pi."""


class SpectrumError(HallabError):
    """Chemical potential inside the spectrum, or a broken eigendecomposition."""


# === spectral-flow / neass ===
class GapError(HallabError):
    """The measured spectral gap is smaller than the filter parameter."""


class QuadratureError(HallabError):
    """The time quadrature did not converge below the plateau tolerance."""


class OrderError(HallabError):
    """NEASS order outside the supported range."""


# === response / cli ===
class SegmentError(HallabError):
    """Conductance segment longer than the torus side."""


class ConfigError(HallabError):
    """A run configuration could not be validated."""


class CacheError(HallabError):
    """A cache file could not be decoded."""
