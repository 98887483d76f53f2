"""Exports pretrained sentence encoders into the mqseq pipeline artifact format."""

from .errors import DimCheckFailed, ExporterError, ParityFailure, SourceUnavailable
from .export import ExportManifest, export_model, read_manifest, verify_manifest
from .parity import ParityReport, verify_parity

__version__ = "0.1.0"
