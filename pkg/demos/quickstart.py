"""Train all three arms on a small config and print one SNR sweep.

Run from the repository root:  python demos/quickstart.py
Takes under a minute on one core; the default config is the full-size run.
"""

import os

from mtsc.experiments.config import load_config
from mtsc.experiments.pipeline import make_data, train_arms
from mtsc.experiments.sweep import evaluate_seed, summarize

cfg = load_config(os.path.join(os.path.dirname(__file__), "small.yaml"))
seed = 0

data = make_data(cfg, seed)
print(f"public {len(data.public)}, clients {[len(s) for s in data.shards]}, test {len(data.test)}")

# pretrain on public data, then federated split fine-tuning of the adapters
models = train_arms(cfg, seed, data)
for arm, m in models.items():
    n = sum(t.data.size for t in m.named_parameters().values())
    print(f"{arm:24s} trainable params {n}")

records = summarize(evaluate_seed(cfg, seed, models, data))
print(f"\n{'arm':24s} {'task':12s} " + " ".join(f"{s:>7g}" for s in cfg.sweep.snr_grid))
for arm in cfg.sweep.arms:
    for task in (*cfg.sweep.tasks, "semantic"):
        row = {r.snr_db: r.value for r in records if r.seed == "mean" and r.arm == arm and r.task == task}
        print(f"{arm:24s} {task:12s} " + " ".join(f"{row[s]:7.3f}" for s in cfg.sweep.snr_grid))
