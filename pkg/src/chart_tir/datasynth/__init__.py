"""Chart and QA data synthesis."""

from .charts import ArxivFigureRecord, GeneratedChart, QualityVerdict, filter_arxiv_record, filter_image, generate_chart
from .coldstart import ColdStartOutcome, distill_cold_start, sft_record
from .qa import CheckReport, check_qa, generate_qa
from .references import LayoutTag, ReferenceSnippet, load_reference_library, verify_snippet
from .sampling import SpecPools, sample_aspect, sample_chart_spec, sample_chart_specs

__all__ = [
    "ArxivFigureRecord", "GeneratedChart", "QualityVerdict", "filter_arxiv_record", "filter_image", "generate_chart",
    "ColdStartOutcome", "distill_cold_start", "sft_record", "CheckReport", "check_qa", "generate_qa",
    "LayoutTag", "ReferenceSnippet", "load_reference_library", "verify_snippet",
    "SpecPools", "sample_aspect", "sample_chart_spec", "sample_chart_specs",
]
