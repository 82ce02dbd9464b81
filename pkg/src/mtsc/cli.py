"""Command-line entry point: ``mtsc <command> [options]``.

Global options (accepted before or after the command): ``--config`` YAML
experiment config, ``--seed`` integer seed, ``--out`` output directory.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np

from .compression import ClientProfile, compress, is_weight, optimize_plan
from .experiments.config import ARMS, ExperimentConfig, load_config
from .experiments.metrics import METRIC_FOR_TASK, mean_iw_distortion, task_metrics
from .experiments.pipeline import (
    arm_model_config,
    checkpoint_path,
    finetune_arm,
    load_model,
    make_data,
    pretrain_arm,
    round_config,
    save_model,
)
from .experiments.sweep import MetricRecord, eval_draws, run_id_for, run_snr_sweep, write_metrics_csv
from .experiments.baselines import run_baseline1
from .federation import TrainLog, run_training
from .models import run_batch
from .rag import KnowledgeBase, kb_retrieve, load_kb, save_kb
from .rng import RngHandle


def _floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")], dtype=np.float64)


def _global_flags(parser: argparse.ArgumentParser, top: bool):
    # subcommand copies use SUPPRESS so they only override when given
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    parser.add_argument("--config", default=d(None), help="YAML experiment config")
    parser.add_argument("--seed", type=int, default=d(0), help="experiment seed")
    parser.add_argument("--out", default=d("runs"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtsc", description=__doc__.splitlines()[0])
    _global_flags(parser, top=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, top=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="Phase I training on public data")
    p.add_argument("--arm", choices=ARMS, default="proposed")

    p = sub.add_parser("fed-train", parents=[common], help="federated split fine-tuning")
    p.add_argument("--arm", choices=ARMS, default="proposed")
    p.add_argument("--init", help="Phase I checkpoint (default: <out>/pretrained_<arm>_seed<seed>.mtsc)")
    p.add_argument("--trace", help="write a binary protocol trace here")

    p = sub.add_parser("compress", parents=[common], help="choose and apply a compression plan")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--arm", choices=ARMS, default="proposed")
    p.add_argument("--mem-budget", type=int, required=True, help="bytes")
    p.add_argument("--mac-budget", type=int, required=True)
    p.add_argument("--min-accuracy", type=float, default=0.0)

    p = sub.add_parser("sweep", parents=[common], help="SNR sweep over all arms and seeds")
    p.add_argument("--checkpoints", help="directory with <arm>_seed<k>.mtsc files; trains when omitted")

    p = sub.add_parser("eval", parents=[common], help="evaluate one checkpoint at one SNR")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--arm", choices=ARMS, default="proposed")
    p.add_argument("--snr", type=float, default=0.0)
    p.add_argument("--budget", type=int, default=None)

    p = sub.add_parser("kb", parents=[common], help="knowledge-base tools")
    kb = p.add_subparsers(dest="kb_command", required=True)
    q = kb.add_parser("insert", parents=[common])
    q.add_argument("--kb", required=True)
    q.add_argument("--scope", choices=("local", "global"), default="local")
    q.add_argument("--key", required=True, help="comma-separated floats")
    q.add_argument("--value", help="comma-separated floats (default: key)")
    q.add_argument("--tag", default="")
    q = kb.add_parser("retrieve", parents=[common])
    q.add_argument("--kb", required=True)
    q.add_argument("--query", required=True, help="comma-separated floats")
    q.add_argument("-k", type=int, default=3)
    q = kb.add_parser("bench", parents=[common])
    q.add_argument("--sizes", default="10,100,10000")
    q.add_argument("--queries", type=int, default=100)
    q.add_argument("-k", type=int, default=5)
    return parser


# -- commands ------------------------------------------------------------------


def cmd_pretrain(args, cfg: ExperimentConfig):
    data = make_data(cfg, args.seed)
    t0 = time.time()
    model = pretrain_arm(cfg, args.arm, args.seed, data)
    path = os.path.join(args.out, f"pretrained_{args.arm}_seed{args.seed}.mtsc")
    save_model(path, model)
    print(f"{args.arm}: Phase I done in {time.time() - t0:.1f}s -> {path}")


def cmd_fed_train(args, cfg: ExperimentConfig):
    data = make_data(cfg, args.seed)
    init = args.init or os.path.join(args.out, f"pretrained_{args.arm}_seed{args.seed}.mtsc")
    mcfg = arm_model_config(cfg, args.arm)
    if os.path.exists(init) or args.init:
        model = load_model(init, mcfg)
    else:
        print(f"no Phase I checkpoint at {init}; pre-training first")
        model = pretrain_arm(cfg, args.arm, args.seed, data)
    if args.trace:
        if args.arm == "baseline1_traditional":
            raise SystemExit("the traditional arm is fine-tuned centrally; there is no protocol to trace")
        if args.arm == "proposed":
            model.prepare_finetune()
        with open(args.trace, "wb") as f:
            log = run_training(model, data.shards, round_config(cfg, RngHandle(args.seed).child(args.arm).child("federation")), f)
    else:
        log = finetune_arm(cfg, args.arm, args.seed, model, data)
    path = checkpoint_path(args.out, args.arm, args.seed)
    save_model(path, model)
    trainlog = os.path.join(args.out, "trainlog.csv")
    if isinstance(log, TrainLog):
        log.to_csv(trainlog)
        last = log.rounds[-1].loss if log.rounds else float("nan")
        print(f"{len(log.rounds)} rounds, final loss {last:.4f}, {log.total_bytes} bytes exchanged")
    else:
        with open(trainlog, "w") as f:
            f.write("step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(log)))
    print(f"checkpoint -> {path}; log -> {trainlog}")


def _load_arm(args, cfg, path):
    return load_model(path, arm_model_config(cfg, args.arm))


def cmd_compress(args, cfg: ExperimentConfig):
    model = _load_arm(args, cfg, args.checkpoint)
    data = make_data(cfg, args.seed)
    device = {k: t.data for k, t in model.side_tensors("device").items() if is_weight(k)}
    inputs, labels = data.test.inputs(), data.test.label

    def accuracy(plan):
        trial = model.clone()
        tensors = dict(trial.side_tensors("device"))
        for k, w in compress(device, plan).params.items():
            tensors[k].data = w
        out = run_batch(trial, inputs, np.inf, cfg.sweep.budget, None, ("classify",))
        return float(np.mean(out["classify"].argmax(axis=1) == labels))

    profile = ClientProfile(args.mem_budget, args.mac_budget, args.min_accuracy)
    choice = optimize_plan(profile, device, accuracy)
    packed = compress(device, choice.plan)
    path = os.path.join(args.out, "compressed.mtsc")
    with open(path, "wb") as f:
        f.write(packed.to_bytes())
    table = os.path.join(args.out, "plans.csv")
    with open(table, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["prune_rate", "quant_bits", "mem_bytes", "mac_count", "accuracy"])
        for plan, mem, mac, acc in choice.table:
            w.writerow([plan.prune_rate, plan.quant_bits, mem, mac, acc])
    flag = "" if choice.meets_accuracy else " (accuracy floor not reachable; best feasible plan)"
    print(
        f"plan prune={choice.plan.prune_rate} bits={choice.plan.quant_bits} "
        f"acc={choice.accuracy:.3f} mem={choice.mem_bytes}B mac={choice.mac_count}{flag}"
    )
    print(f"compressed model -> {path}; plan table -> {table}")


def cmd_sweep(args, cfg: ExperimentConfig):
    models = None
    if args.checkpoints:
        models = {
            s: {a: load_model(checkpoint_path(args.checkpoints, a, s), arm_model_config(cfg, a)) for a in cfg.sweep.arms}
            for s in cfg.sweep.seeds
        }
    records = run_snr_sweep(cfg, models, args.out)
    print(f"{len(records)} records -> {os.path.join(args.out, 'metrics.csv')}")


def cmd_eval(args, cfg: ExperimentConfig):
    model = _load_arm(args, cfg, args.checkpoint)
    data = make_data(cfg, args.seed)
    test = data.test
    sem, raw = eval_draws(cfg, args.seed, test, model.cfg.max_total_symbols)
    budget = args.budget if args.budget is not None else cfg.sweep.budget
    if args.arm == "baseline1_traditional":
        out = run_baseline1(model, test.inputs(), args.snr, raw, cfg.sweep.tasks)
    else:
        out = run_batch(model, test.inputs(), args.snr, budget, sem, cfg.sweep.tasks)
    values = task_metrics(out, test.targets(), cfg.sweep.tasks)
    values["semantic"] = mean_iw_distortion(out["sv"], out["sv_hat"], out["scores"])
    run_id = run_id_for(cfg)
    records = [MetricRecord(run_id, args.seed, args.snr, args.arm, t, METRIC_FOR_TASK[t], v) for t, v in values.items()]
    write_metrics_csv(os.path.join(args.out, "metrics.csv"), records)
    for r in records:
        print(f"{r.task:12s} {r.metric:14s} {r.value:.4f}")


def cmd_kb(args, cfg: ExperimentConfig):
    if args.kb_command == "insert":
        kb = load_kb(args.kb, args.scope) if os.path.exists(args.kb) else KnowledgeBase(args.scope)
        key = _floats(args.key)
        entry = kb.insert(key, _floats(args.value) if args.value else key, args.tag)
        save_kb(kb, args.kb)
        print(f"inserted #{entry.insert_index} ({len(kb)} entries)")
    elif args.kb_command == "retrieve":
        kb = load_kb(args.kb)
        hits = kb_retrieve(kb, _floats(args.query), args.k)
        if not hits:
            print("knowledge base is empty")
        for h in hits:
            print(f"{h.entry.insert_index}\t{h.similarity:.6f}\t{h.entry.tag}")
    else:
        gen = RngHandle(args.seed).child("kb-bench").generator()
        for n in (int(s) for s in args.sizes.split(",")):
            kb = KnowledgeBase("local")
            keys = gen.standard_normal((n, kb.dim))
            kb.extend(keys, keys)
            queries = gen.standard_normal((args.queries, kb.dim))
            t0 = time.perf_counter()
            mismatches = 0
            unit = keys / np.linalg.norm(keys, axis=1, keepdims=True)
            for q in queries:
                got = [h.entry.insert_index for h in kb_retrieve(kb, q, args.k)]
                sims = unit @ (q / np.linalg.norm(q))
                want = sorted(range(n), key=lambda i: (-sims[i], i))[: args.k]
                mismatches += got != want
            dt = time.perf_counter() - t0
            print(f"n={n:6d}  {args.queries} queries  {1e3 * dt / args.queries:.3f} ms/query (incl. check)  mismatches={mismatches}")


COMMANDS = {
    "pretrain": cmd_pretrain,
    "fed-train": cmd_fed_train,
    "compress": cmd_compress,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "kb": cmd_kb,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    COMMANDS[args.command](args, cfg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
