"""Two-dimensional (layer x sentence) early-exit inference toolkit."""

__version__ = "0.1.0"

from .datamodel import (  # noqa: F401
    DatasetManifest,
    EmbeddingGrid,
    ProbeGrid,
    apply_adapters,
    load_dataset,
    save_dataset,
)
from .engine import (  # noqa: F401
    EEConfig,
    EEOutcome,
    TraversalStep,
    confidence,
    run_2d,
    run_full,
    run_layerwise,
    step_size,
    traversal_plan,
)
