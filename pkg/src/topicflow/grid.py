"""Flow length x topic count sweep, reported as an R1/R2/RL grid."""
from __future__ import annotations

import copy
import logging
from typing import Sequence

import numpy as np

from . import corpus as C
from . import pipeline as P
from .config import RunConfig
from .training import pretrain_ntm

log = logging.getLogger(__name__)


def run_grid(cfg: RunConfig, flow_lengths: Sequence[int], topic_counts: Sequence[int]) -> list[dict]:
    """Pretrain and jointly train one model per (topic count, flow length) cell.

    Each cell reports test ROUGE (mean over retained checkpoints, or the best one if so
    configured); without --test the validation split is scored.
    """
    train_records = C.load_records(P.require(cfg.paths.data, "data"))
    valid_records = C.load_records(P.require(cfg.paths.valid, "valid"))
    test_records = C.load_records(cfg.paths.test) if cfg.paths.test else valid_records
    vocab, bow = C.build_vocabs(train_records, cfg.corpus.min_count, P.stopwords_for(cfg),
                                cfg.corpus.bow_max_size, cfg.corpus.bow_keep_punct)
    x_bow = np.stack([e.x_bow for e in P.encode_records(train_records, vocab, bow, cfg)])
    cells = []
    for t in topic_counts:
        for k in flow_lengths:
            run = copy.deepcopy(cfg)
            run.ntm.n_topics, run.ntm.flow_length = t, k
            log.info("grid cell topics=%d flow=%d", t, k)
            pre = pretrain_ntm(x_bow, P.ntm_config(run, len(bow)), run.training)
            result = P.train_model(run, train_records, valid_records, vocab, bow, pre.model)
            scores = P.test_scores(result, run, test_records, vocab, bow)
            cells.append({"topics": t, "flow_length": k, "ntm_final_loss": pre.epoch_losses[-1],
                          **scores[run.decode.result_aggregate]})
    return cells


def format_grid(cells: Sequence[dict], flow_lengths: Sequence[int], topic_counts: Sequence[int]) -> str:
    """Markdown table: one row per topic count, one column per flow length, R1/R2/RL cells."""
    at = {(c["topics"], c["flow_length"]): c for c in cells}
    lines = ["| Topic Num./Flow length | " + " | ".join(str(k) for k in flow_lengths) + " |",
             "|---|" + "---|" * len(flow_lengths)]
    for t in topic_counts:
        row = []
        for k in flow_lengths:
            c = at[(t, k)]
            row.append(f"{c['rouge1']:.2f}/{c['rouge2']:.2f}/{c['rougeL']:.2f}")
        lines.append(f"| {t} | " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"
