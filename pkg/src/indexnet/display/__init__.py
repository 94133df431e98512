"""Display and formatting utilities."""

from .detailed import (
    display_checkpoint_header,
    display_evaluation,
    display_training_summary,
)
from .tables import (
    display_gradcheck_table,
    display_layers_table,
    display_manifest_table,
    display_metrics_table,
)

__all__ = [
    "display_gradcheck_table",
    "display_layers_table",
    "display_manifest_table",
    "display_metrics_table",
    "display_training_summary",
    "display_evaluation",
    "display_checkpoint_header",
]
