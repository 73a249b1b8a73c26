"""Offline per-layer feature extraction for frozen vision classifiers."""

from .extract import (
    ExtractionSpec,
    LayerSelectorError,
    available_blocks,
    build_dataset,
    build_model,
    default_layer_selectors,
    extract_features,
    resolve_module,
    run_extraction,
    spatial_average,
    write_outputs,
)

__version__ = "0.1.0"
