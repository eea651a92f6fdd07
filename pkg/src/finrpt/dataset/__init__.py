"""Dataset construction: filtering, summarisation, dedup, enhancement, split, export."""

from .curation import (
    DatasetStats,
    FilterDecision,
    FilterPolicy,
    SftPair,
    SplitSpec,
    dataset_stats,
    dumps_jsonl,
    export_sft_pairs,
    filter_bundle,
    load_industry_map,
    load_samples,
    read_jsonl,
    split_dataset,
    summarize_aligned,
    summarize_bundle,
    summarize_items,
)
from .dedup import DedupDecision, DedupPolicy, MinHasher, dedup_news, shingles
from .enhance import (
    EnhancementLog,
    EnhancementRecord,
    InvalidSample,
    enhance_sample,
    expert_corrector,
    polish,
    rating_corrector,
)

__all__ = [
    "DatasetStats", "DedupDecision", "DedupPolicy", "EnhancementLog", "EnhancementRecord",
    "FilterDecision", "FilterPolicy", "InvalidSample", "MinHasher", "SftPair", "SplitSpec",
    "dataset_stats", "dedup_news", "dumps_jsonl", "enhance_sample", "expert_corrector",
    "export_sft_pairs", "filter_bundle", "load_industry_map", "load_samples", "polish",
    "rating_corrector", "read_jsonl", "shingles", "split_dataset", "summarize_aligned",
    "summarize_bundle", "summarize_items",
]
