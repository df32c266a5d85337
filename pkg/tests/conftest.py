"""Shared fixtures.

`desk_artifacts` is the expensive one: it generates the 2,000-scene corpus,
trains the language model and instance head at the desk preset, and runs the
full evaluation once per session. The directional acceptance checks all read
from it. `small_artifacts` is a fast, underpowered variant for CLI/service
plumbing tests.
"""

import time
from types import SimpleNamespace

import numpy as np
import pytest

from ctxcomplete.checkpoint import save_head, save_lm
from ctxcomplete.data import (
    ClassCatalog,
    Vocab,
    gen_synthetic,
    load_records,
    split_records,
)
from ctxcomplete.factorcell import ModelConfig
from ctxcomplete.instances import HeadConfig, head_train_config, train_instance_head
from ctxcomplete.metrics import EvalConfig, run_eval
from ctxcomplete.tensors import Rng
from ctxcomplete.training import TrainConfig, train_lm


def _build_artifacts(root, n_scenes, lm_iterations, head_iterations, run_report):
    t0 = time.monotonic()
    data_dir = root / "data"
    gen_synthetic(n_scenes, 3, Rng(0), data_dir)
    catalog = ClassCatalog.load(data_dir / "classes.txt")
    records = load_records(data_dir / "dataset.jsonl", catalog)
    splits = split_records(records, seed=0)
    vocab = Vocab.from_corpus(r.query for r in splits.train)
    model_cfg = ModelConfig.desk(vocab.size, int(records[0].features.size))
    train_cfg = TrainConfig.desk(seed=0, iterations=lm_iterations)
    lm = train_lm(splits.train, vocab, model_cfg, train_cfg, Rng(0))
    head_cfg = HeadConfig.desk(vocab.size, len(catalog))
    head_tc = head_train_config(seed=0, iterations=head_iterations)
    head = train_instance_head(splits.train, catalog, vocab, head_cfg, head_tc, Rng(0))

    lm_ckpt = root / "lm.fcqc"
    head_ckpt = root / "head.fcqc"
    save_lm(lm_ckpt, lm.params, vocab, catalog=catalog, train_cfg=train_cfg,
            adam_state=lm.adam_state, rng=lm.rng, iteration=train_cfg.iterations)
    save_head(head_ckpt, head.params, vocab, catalog, train_cfg=head_tc,
              adam_state=head.adam_state, rng=head.rng, iteration=head_tc.iterations)

    report = None
    if run_report:
        report = run_eval(lm.params, head.params, splits.test, vocab, catalog,
                          EvalConfig(seed=0))
    return SimpleNamespace(
        root=root,
        data_dir=data_dir,
        catalog=catalog,
        records=records,
        splits=splits,
        vocab=vocab,
        model_cfg=model_cfg,
        train_cfg=train_cfg,
        lm=lm,
        head=head,
        lm_ckpt=lm_ckpt,
        head_ckpt=head_ckpt,
        report=report,
        elapsed=time.monotonic() - t0,
    )


@pytest.fixture(scope="session")
def desk_artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    return _build_artifacts(root, n_scenes=2000, lm_iterations=3000,
                            head_iterations=1500, run_report=True)


@pytest.fixture(scope="session")
def small_artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    return _build_artifacts(root, n_scenes=60, lm_iterations=120,
                            head_iterations=80, run_report=False)


@pytest.fixture()
def tiny_vocab():
    return Vocab(("<PAD>", "<EOQ>", "<UNK>", "a", "b", "c", " "))


@pytest.fixture()
def tiny_model(tiny_vocab):
    """(params, rng): a small float64 model plus a fresh draw stream."""
    from ctxcomplete.factorcell import init_params

    cfg = ModelConfig(e=4, h=6, r=2, m=3, feat_dim=4,
                      vocab_size=tiny_vocab.size, max_len=10)
    return init_params(cfg, Rng(1), dtype=np.float64), Rng(2)
