"""Desk-scale end-to-end run: synthesize scenes, train both models, evaluate.

Trains the context-adapted LM on image features, then scores the held-out
split twice: once with true features, once with per-query noise contexts.
A model that actually reads its context should show lower perplexity and
higher MRR in image mode. Also trains the instance head and reports F1.

Typical runtime is a few minutes on a laptop CPU.
"""

import argparse
import json
import time
from pathlib import Path

from ctxcomplete.checkpoint import save_head, save_lm
from ctxcomplete.data import ClassCatalog, Vocab, gen_synthetic, load_records, split_records
from ctxcomplete.factorcell import ModelConfig
from ctxcomplete.instances import HeadConfig, head_train_config, train_instance_head
from ctxcomplete.metrics import EvalConfig, run_eval
from ctxcomplete.tensors import Rng
from ctxcomplete.training import TrainConfig, train_lm


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="desk_run")
    ap.add_argument("--scenes", type=int, default=2000)
    ap.add_argument("--per-scene", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lm-iterations", type=int, default=None)
    ap.add_argument("--head-iterations", type=int, default=None)
    ap.add_argument("--max-mrr", type=int, default=None)
    args = ap.parse_args()

    out = Path(args.out)
    data_dir = out / "data"
    t_start = time.time()

    gen_synthetic(args.scenes, args.per_scene, Rng(args.seed), data_dir)
    catalog = ClassCatalog.load(data_dir / "classes.txt")
    records = load_records(data_dir / "dataset.jsonl", catalog)
    splits = split_records(records, seed=0)
    vocab = Vocab.from_corpus(r.query for r in splits.train)
    print(
        f"data: {len(records)} records "
        f"({len(splits.train)}/{len(splits.val)}/{len(splits.test)} split), "
        f"vocab {vocab.size}"
    )

    model_cfg = ModelConfig.desk(vocab.size, int(records[0].features.size))
    train_cfg = TrainConfig.desk(seed=args.seed)
    if args.lm_iterations is not None:
        train_cfg.iterations = args.lm_iterations
    t0 = time.time()
    lm = train_lm(
        splits.train, vocab, model_cfg, train_cfg, Rng(args.seed),
        progress=lambda it, loss: print(f"  lm iter {it:5d}  nll {loss:.4f}")
        if it % (train_cfg.log_every * 10) == 0 else None,
    )
    print(f"lm: {train_cfg.iterations} iterations in {time.time() - t0:.0f}s, "
          f"final nll {lm.curve.values[-1]:.4f}")
    save_lm(out / "lm.fcqc", lm.params, vocab, catalog=catalog, train_cfg=train_cfg,
            adam_state=lm.adam_state, rng=lm.rng, iteration=train_cfg.iterations)
    lm.curve.to_csv(out / "lm.curve.csv")

    head_cfg = HeadConfig.desk(vocab.size, len(catalog))
    head_tc = head_train_config(seed=args.seed)
    if args.head_iterations is not None:
        head_tc.iterations = args.head_iterations
    t0 = time.time()
    head = train_instance_head(
        splits.train, catalog, vocab, head_cfg, head_tc, Rng(args.seed))
    print(f"head: {head_tc.iterations} iterations in {time.time() - t0:.0f}s, "
          f"final loss {head.curve.values[-1]:.4f}")
    save_head(out / "head.fcqc", head.params, vocab, catalog, train_cfg=head_tc,
              adam_state=head.adam_state, rng=head.rng, iteration=head_tc.iterations)
    head.curve.to_csv(out / "head.curve.csv")

    t0 = time.time()
    report = run_eval(
        lm.params, head.params, splits.test, vocab, catalog,
        EvalConfig(seed=args.seed, max_mrr_queries=args.max_mrr),
    )
    print(f"eval: {time.time() - t0:.0f}s")
    print(report.format_table())
    report.save(out / "eval_report.json")

    margin = (report.perplexity_noise - report.perplexity_image) / report.perplexity_noise
    image_mrrs = [report.mrr_by_prefix_fraction[f]["image"]
                  for f in sorted(report.mrr_by_prefix_fraction)]
    checks = {
        "perplexity_image_below_noise": report.perplexity_image < report.perplexity_noise,
        "perplexity_margin_pct": round(100 * margin, 2),
        "mrr_nondecreasing_in_prefix": all(
            a <= b + 1e-12 for a, b in zip(image_mrrs, image_mrrs[1:])
        ),
        "mrr_image_ge_noise_everywhere": all(
            m["image"] >= m["noise"] for m in report.mrr_by_prefix_fraction.values()
        ),
        "total_seconds": round(time.time() - t_start, 1),
    }
    print(json.dumps(checks, indent=2))


if __name__ == "__main__":
    main()
