import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None)
settings.load_profile("default")


OVERFIT_STEPS = 2000


def _overfit(gate_override=None, use_topic=True):
    from topicflow import corpus as C
    from topicflow.ntm import NtmConfig
    from topicflow.summarizer import TransformerConfig
    from topicflow.synthetic import copy_pairs
    from topicflow.training import TrainConfig, train_joint

    records = copy_pairs(32, seed=0)
    vocab, bow = C.build_vocabs(records, 1, set())
    examples = [C.encode(r, vocab, bow) for r in records]
    model_cfg = TransformerConfig(len(vocab), n_topics=4, layers_enc=2, layers_dec=2, d_model=32, heads=4,
                                  ffn_dim=64, max_positions=64, dropout=0.0, use_topic=use_topic)
    cfg = TrainConfig(lr_joint=3e-3, batch_size=16, max_steps=OVERFIT_STEPS, eval_interval=500,
                      warmup_steps=100, eval_rouge=False, seed=0)
    result = train_joint(examples, examples, model_cfg, cfg,
                         ntm_config=NtmConfig(len(bow), n_topics=4, hidden=32, flow_length=4),
                         gate_override=gate_override)
    return result, examples


@pytest.fixture(scope="session")
def overfit_run():
    """Joint model trained to memorise 32 synthetic copy pairs."""
    return _overfit()


@pytest.fixture(scope="session")
def gate_zero_runs():
    """The same run with gates pinned shut, and the matching topic-free baseline."""
    return _overfit(gate_override=0.0)[0], _overfit(use_topic=False)[0]
