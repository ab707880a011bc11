"""Python bindings for the xrecap core."""

from ._xrecap import (
    XrecapError,
    __version__,
    contrastive_loss,
    knn,
    load_config,
    mean_recall,
    parse_final,
    prompt_template,
    rank_all,
    recall_report_from_ranks,
    render_prompt,
    rouge,
    run_pipeline,
    supercategory_of,
    verify_manifest,
    wrap_final,
)

__all__ = [
    "XrecapError",
    "__version__",
    "contrastive_loss",
    "knn",
    "load_config",
    "mean_recall",
    "parse_final",
    "prompt_template",
    "rank_all",
    "recall_report_from_ranks",
    "render_prompt",
    "rouge",
    "run_pipeline",
    "supercategory_of",
    "verify_manifest",
    "wrap_final",
]
