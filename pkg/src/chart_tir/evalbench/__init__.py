from .harness import EvalConfig, EvalReport, ItemResult, run_benchmark, summarize, write_report
from .metrics import avg_pixel_entropy, chart_statistics, pixel_entropy, qa_statistics, tool_distribution

__all__ = [
    "EvalConfig",
    "EvalReport",
    "ItemResult",
    "avg_pixel_entropy",
    "chart_statistics",
    "pixel_entropy",
    "qa_statistics",
    "run_benchmark",
    "summarize",
    "tool_distribution",
    "write_report",
]
