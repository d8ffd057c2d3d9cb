"""Backbone feature exporter for the FRTM file format."""

from .exporter import ExportSpec, export_sequence, write_frtm

__version__ = "0.1.0"
