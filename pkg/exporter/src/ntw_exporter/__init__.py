"""Converter from canonical pretrained MobileNet (1.0, 224) weights to the
NTW named-tensor container."""

from .exporter import (ExportError, FetchError, build_manifest,
                       export_pretrained, expected_layers, extract_tensors,
                       load_source_model)
from .ntw_writer import write_ntw

__version__ = "0.1.0"
