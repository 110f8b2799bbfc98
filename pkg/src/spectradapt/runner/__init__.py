from .config import (ExperimentConfig, OutputExists, SplitSizes,
                     config_from_dict, config_to_dict, load_config,
                     save_config)
from .experiment import (cmd_adapt, cmd_eval, cmd_explain, cmd_gap,
                         cmd_pretrain, cmd_search, cmd_synth, worker_count)
from .report import aggregate_scores, cmd_report
from .cli import main

__all__ = [
    "ExperimentConfig", "OutputExists", "SplitSizes", "config_from_dict",
    "config_to_dict", "load_config", "save_config", "cmd_adapt", "cmd_eval",
    "cmd_explain", "cmd_gap", "cmd_pretrain", "cmd_search", "cmd_synth",
    "worker_count", "aggregate_scores", "cmd_report", "main",
]
