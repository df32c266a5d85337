"""Operator command line: data generation, training, checks, completion,
evaluation, and serving.

Exit codes: 0 success, 1 usage error, 2 data or file error, 3 numeric
failure. Every subcommand takes its randomness from --seed; the train/test
split is keyed by a fixed split seed so training and evaluation agree on
held-out records. Set CTXCOMPLETE_LOG=error|info|debug for progress logs.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .beam import BeamParams, complete
from .checkpoint import (
    CheckpointError,
    load_head,
    load_lm,
    save_head,
    save_lm,
)
from .data import (
    ClassCatalog,
    DatasetError,
    OutOfVocabularyError,
    Vocab,
    gen_synthetic,
    load_records,
    split_records,
)
from .factorcell import ModelConfig, NumericError, grad_check
from .instances import (
    HeadConfig,
    head_grad_check,
    head_train_config,
    instance_probs,
    train_instance_head,
)
from .metrics import EvalConfig, run_eval
from .service import (
    NOISE_ID,
    build_app,
    completion_payload,
    instances_payload,
    load_bundle,
    render_json,
    resolve_context,
)
from .tensors import Rng
from .training import TrainConfig, train_lm

LOG = logging.getLogger("ctxcomplete")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

SPLIT_SEED = 0  # train/val/test membership must agree across subcommands


def _setup_logging() -> None:
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    raw = os.environ.get("CTXCOMPLETE_LOG", "error").lower()
    logging.basicConfig(
        level=levels.get(raw, logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s",
    )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _load_data(data_dir):
    data_dir = Path(data_dir)
    catalog = ClassCatalog.load(data_dir / "classes.txt")
    records = load_records(data_dir / "dataset.jsonl", catalog)
    if not records:
        raise DatasetError(f"{data_dir}: dataset is empty")
    return catalog, records, split_records(records, seed=SPLIT_SEED)


def cmd_gen_synthetic(args) -> int:
    paths = gen_synthetic(
        args.scenes, args.per_scene, Rng(args.seed), args.out,
        noise_sigma=args.noise_sigma,
    )
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_train_lm(args) -> int:
    catalog, records, splits = _load_data(args.data)
    vocab = Vocab.from_corpus(r.query for r in splits.train)
    feat_dim = int(records[0].features.size)
    if args.preset == "paper":
        model_cfg = ModelConfig.paper(vocab.size, feat_dim)
        train_cfg = TrainConfig.paper(seed=args.seed)
    else:
        model_cfg = ModelConfig.desk(vocab.size, feat_dim)
        train_cfg = TrainConfig.desk(seed=args.seed)
    if args.iterations is not None:
        train_cfg.iterations = args.iterations
    LOG.info(
        "training lm: %d records, vocab %d, %d iterations",
        len(splits.train), vocab.size, train_cfg.iterations,
    )
    result = train_lm(
        splits.train, vocab, model_cfg, train_cfg, Rng(args.seed),
        context_mode=args.context,
        progress=lambda it, loss: LOG.info("iter %d nll %.4f", it, loss),
    )
    save_lm(
        args.out, result.params, vocab, catalog=catalog, train_cfg=train_cfg,
        adam_state=result.adam_state, rng=result.rng,
        iteration=train_cfg.iterations,
    )
    curve_path = args.curve or str(Path(args.out).with_suffix(".curve.csv"))
    result.curve.to_csv(curve_path)
    print(f"saved {args.out} (final nll {result.curve.values[-1]:.4f})")
    return EXIT_OK


def cmd_train_instances(args) -> int:
    catalog, records, splits = _load_data(args.data)
    vocab = Vocab.from_corpus(r.query for r in splits.train)
    if args.preset == "paper":
        head_cfg = HeadConfig(e=24, h=256, vocab_size=vocab.size, n_classes=len(catalog))
        train_cfg = head_train_config(
            lr=5e-5, iterations=80_000, preset="paper", seed=args.seed
        )
    else:
        head_cfg = HeadConfig.desk(vocab.size, len(catalog))
        train_cfg = head_train_config(seed=args.seed)
    if args.iterations is not None:
        train_cfg.iterations = args.iterations
    LOG.info(
        "training head: %d records, %d classes, %d iterations",
        len(splits.train), len(catalog), train_cfg.iterations,
    )
    result = train_instance_head(
        splits.train, catalog, vocab, head_cfg, train_cfg, Rng(args.seed),
        progress=lambda it, loss: LOG.info("iter %d loss %.4f", it, loss),
    )
    save_head(
        args.out, result.params, vocab, catalog, train_cfg=train_cfg,
        adam_state=result.adam_state, rng=result.rng,
        iteration=train_cfg.iterations,
    )
    curve_path = args.curve or str(Path(args.out).with_suffix(".curve.csv"))
    result.curve.to_csv(curve_path)
    print(f"saved {args.out} (final loss {result.curve.values[-1]:.4f})")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    ok = True
    for label, report in (
        ("lm", grad_check(tolerance=args.tolerance)),
        ("head", head_grad_check(tolerance=args.tolerance)),
    ):
        for name in sorted(report.errors):
            print(f"{label:5s} {name:12s} {report.errors[name]:.3e}")
        ok = ok and report.passed
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


def _print_completions(comps) -> None:
    for comp in comps:
        print(f"{comp.rank:3d}  {comp.logprob:9.4f}  {comp.text}")


def cmd_complete(args) -> int:
    bundle = load_bundle(args.ckpt, data_dir=args.data, seed=args.seed)
    image_id = NOISE_ID if args.noise else args.image_id
    if image_id != NOISE_ID and not bundle.scenes:
        raise ValueError("--image-id needs --data DIR containing scenes.jsonl")
    try:
        c = resolve_context(bundle, image_id)
    except KeyError:
        raise DatasetError(f"unknown image id {image_id!r}")
    beam = BeamParams(width=args.width, k=args.k)

    if args.interactive:
        print("type a prefix per line (empty line quits)")
        while True:
            try:
                prefix = input("prefix> ")
            except EOFError:
                break
            if not prefix:
                break
            try:
                _print_completions(complete(prefix, c, bundle.lm, bundle.vocab, beam))
            except (OutOfVocabularyError, ValueError) as exc:
                print(f"error: {exc}", file=sys.stderr)
        return EXIT_OK

    comps = complete(args.prefix, c, bundle.lm, bundle.vocab, beam)
    if args.json:
        print(render_json(completion_payload(comps)))
    else:
        _print_completions(comps)
    return EXIT_OK


def cmd_instances(args) -> int:
    bundle = load_bundle(head_ckpt=args.ckpt, seed=args.seed)
    probs = instance_probs(args.query, bundle.head, bundle.vocab)
    payload = instances_payload(probs, bundle.catalog, args.top, bundle.threshold)
    if args.json:
        print(render_json(payload))
    else:
        for entry in payload["probs"]:
            print(f"{entry['class']:<24s} {entry['p']:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ck = load_lm(args.ckpt)
    head = load_head(args.instances_ckpt).params if args.instances_ckpt else None
    catalog, records, splits = _load_data(args.data)
    part = getattr(splits, args.split) if args.split != "all" else splits.all
    if not part:
        raise DatasetError(f"split {args.split!r} is empty")
    cfg = EvalConfig(seed=args.seed, max_mrr_queries=args.max_mrr)
    report = run_eval(ck.params, head, part, ck.vocab, catalog, cfg)
    print(report.format_table())
    report.save(args.out)
    LOG.info("wrote %s", args.out)
    return EXIT_OK


def cmd_serve(args) -> int:
    host, _, port_text = args.addr.rpartition(":")
    if not host or not port_text.isdigit():
        raise ValueError(f"--addr must be HOST:PORT, got {args.addr!r}")
    bundle = load_bundle(args.ckpt, args.instances_ckpt, args.data, args.seed)
    app = build_app(bundle)
    import uvicorn

    uvicorn.run(app, host=host, port=int(port_text), log_level="warning")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="ctxcomplete", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synthetic", help="write a synthetic scene/query dataset")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--per-scene", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train-lm", help="train the context-adapted language model")
    p.add_argument("--data", required=True)
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--context", choices=("image", "noise"), default="image")
    p.add_argument("--curve", default=None, help="loss curve CSV path")
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("train-instances", help="train the instance-probability head")
    p.add_argument("--data", required=True)
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--curve", default=None, help="loss curve CSV path")
    p.set_defaults(func=cmd_train_instances)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("complete", help="top-k completions for a prefix")
    p.add_argument("--ckpt", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--image-id")
    group.add_argument("--noise", action="store_true")
    p.add_argument("--prefix", default="")
    p.add_argument("--width", type=int, default=10)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--data", default=None, help="dataset dir with scenes.jsonl")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.add_argument("--interactive", action="store_true")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("instances", help="instance probabilities for a query")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--top", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_instances)

    p = sub.add_parser("evaluate", help="perplexity, MRR, F1 over a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--instances-ckpt", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="eval_report.json")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-mrr", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--instances-ckpt", default=None)
    p.add_argument("--addr", default="127.0.0.1:8000")
    p.add_argument("--data", default=None, help="dataset dir with scenes.jsonl")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DatasetError, OutOfVocabularyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
