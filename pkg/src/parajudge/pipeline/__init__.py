from .config import MODES, ConfigError, RetrievalSettings, RewriterSettings, RunConfig, RunPaths
from .orchestrator import (
    GenerationRecord,
    OnlineAdapterCache,
    build_prompt,
    cmd_ablate,
    cmd_augment,
    cmd_evaluate,
    cmd_index,
    cmd_ingest,
    cmd_pretrain,
    cmd_report,
    cmd_run,
    cmd_train_offline,
    evaluate_case,
    format_context,
    load_generation_records,
    run_case,
)
from .seeds import stage_seed

__all__ = [
    "MODES",
    "ConfigError",
    "GenerationRecord",
    "OnlineAdapterCache",
    "RetrievalSettings",
    "RewriterSettings",
    "RunConfig",
    "RunPaths",
    "build_prompt",
    "cmd_ablate",
    "cmd_augment",
    "cmd_evaluate",
    "cmd_index",
    "cmd_ingest",
    "cmd_pretrain",
    "cmd_report",
    "cmd_run",
    "cmd_train_offline",
    "evaluate_case",
    "format_context",
    "load_generation_records",
    "run_case",
    "stage_seed",
]
