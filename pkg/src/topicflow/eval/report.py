"""Aggregate ROUGE over aligned output/reference JSON-lines files."""
from __future__ import annotations

import csv
import io
from typing import Sequence

from ..io import read_jsonl
from .rouge import rouge_scores

METRICS = ("rouge1", "rouge2", "rougeL")


class AlignmentError(ValueError):
    pass


def per_example(outputs: dict[str, str], references: dict[str, str]) -> list[dict]:
    missing_out = sorted(set(references) - set(outputs))
    missing_ref = sorted(set(outputs) - set(references))
    if missing_out or missing_ref:
        parts = []
        if missing_out:
            parts.append(f"ids missing from outputs: {', '.join(missing_out)}")
        if missing_ref:
            parts.append(f"ids missing from references: {', '.join(missing_ref)}")
        raise AlignmentError("; ".join(parts))
    rows = []
    for key in sorted(references):
        s = rouge_scores(outputs[key], references[key])
        rows.append({"id": key, **{m: s[m].f1 for m in METRICS}})
    return rows


def aggregate(rows: Sequence[dict]) -> dict[str, float]:
    """Mean F1 x 100, rounded to two decimals."""
    if not rows:
        return {m: 0.0 for m in METRICS}
    return {m: round(100.0 * sum(r[m] for r in rows) / len(rows), 2) for m in METRICS}


def _summaries(path) -> dict[str, str]:
    out = {}
    for row in read_jsonl(path):
        key = str(row["id"])
        if key in out:
            raise AlignmentError(f"{path}: duplicate id {key}")
        out[key] = row.get("summary", "")
    return out


def evaluate_run(outputs_path, references_path) -> tuple[dict[str, float], list[dict]]:
    rows = per_example(_summaries(outputs_path), _summaries(references_path))
    return aggregate(rows), rows


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["id", *METRICS], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({"id": r["id"], **{m: repr(r[m]) for m in METRICS}})
    return buf.getvalue()
