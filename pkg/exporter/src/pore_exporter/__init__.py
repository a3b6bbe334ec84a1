"""Dump last-text-token attention over visual tokens as trace files."""

from .export import ExportConfig, ExportError, ExportResult, SampleError, export_traces

__version__ = "0.1.0"

__all__ = [
    "ExportConfig",
    "ExportError",
    "ExportResult",
    "SampleError",
    "export_traces",
]
