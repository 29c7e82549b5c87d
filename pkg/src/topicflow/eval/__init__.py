from .coherence import CoherenceReport, count_windows, cv_coherence
from .report import AlignmentError, aggregate, evaluate_run, per_example, rows_to_csv
from .rouge import RougeScore, lcs, rouge_l, rouge_n, rouge_scores

__all__ = [
    "AlignmentError", "CoherenceReport", "RougeScore", "aggregate", "count_windows",
    "cv_coherence", "evaluate_run", "lcs", "per_example", "rouge_l", "rows_to_csv", "rouge_n", "rouge_scores",
]
