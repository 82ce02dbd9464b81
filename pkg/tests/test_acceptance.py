"""Acceptance suite: one test per numbered criterion, each printing PASS/FAIL.

The trend criteria (8-10) share the session fixtures in conftest.py, which
train every arm for the five default seeds once (a few minutes on one core).
"""

import hashlib
import os
import time

import numpy as np
import pytest

from acceptance_log import report
from netgen import random_network
from oracles import brute_force_plan, greedy_allocation, lr_targets

from mtsc import nn
from mtsc.adaptive import allocate_from_lambda, score_importance
from mtsc.channel import apply_channel_batch, empirical_snr_db, rician_gain
from mtsc.compression import (
    PRUNE_RATES,
    ClientProfile,
    CompressionPlan,
    InfeasiblePlanError,
    compress,
    estimate_cost,
    optimize_plan,
    plan_grid,
    quantize_uniform,
    dequantize,
)
from mtsc.data import SyntheticDatasetSpec, generate_dataset
from mtsc.experiments.baselines import qpsk_ber_awgn, qpsk_ber_rician, transmit_payload
from mtsc.experiments.sweep import confidence_interval, mean_accuracy_by_seed, per_seed
from mtsc.federation import RoundConfig, aggregate, fedavg, run_training, UpdateMessage
from mtsc.io import save_checkpoint
from mtsc.models import LinkDraws, MTSCModel, run_batch
from mtsc.nn import OptimizerConfig
from mtsc.rag import KnowledgeBase, augment_batch, kb_retrieve, load_kb, save_kb
from mtsc.rng import RngHandle
from mtsc.training import centralized_train

TINY = os.path.join(os.path.dirname(__file__), "data", "tiny.yaml")


# 1 ---------------------------------------------------------------------------


def test_c01_autodiff_grad_check():
    gen = np.random.default_rng(2024)
    t0 = time.perf_counter()
    errs = []
    for _ in range(100):
        f, theta = random_network(gen)
        errs.append(nn.grad_check(f, theta, eps=1e-5))
    dt = time.perf_counter() - t0
    worst = max(errs)
    ok = worst < 1e-4 and dt < 10.0
    assert report(1, ok, f"100 random networks, max rel err {worst:.2e}, {dt:.2f} s")


# 2 ---------------------------------------------------------------------------


def _payload_batch(gen, n):
    # one byte per modality keeps many independent fades per symbol budget
    return {
        "image": gen.integers(0, 256, size=(n, 1)) / 255.0,
        "text": gen.integers(0, 64, size=(n, 1)),
        "audio": gen.integers(0, 256, size=(n, 1)) / 127.5 - 1.0,
    }


def test_c02_channel_fidelity():
    gen = RngHandle(2).child("acceptance").generator()
    x = np.exp(2j * np.pi * gen.random((1000, 1000)))
    snr_err = {}
    for snr in (-6.0, 0.0, 6.0, 12.0):
        y, h, _ = apply_channel_batch(x, snr, gen)
        snr_err[snr] = abs(empirical_snr_db(x, y, h) - snr)
    h = rician_gain(3.0, gen, 10**6)
    power = float(np.mean(np.abs(h) ** 2))

    ber_rel = {}
    n = 100_000  # 12 QPSK symbols each -> 1.2e6 symbols
    for fading, oracle in ((False, qpsk_ber_awgn), (True, lambda s: qpsk_ber_rician(s, 3.0))):
        for snr in (0.0, 6.0):
            draws = LinkDraws.draw(gen, n, 12, 3.0, fading)
            _, ber = transmit_payload(_payload_batch(gen, n), snr, draws)
            ber_rel[("rician" if fading else "awgn", snr)] = abs(ber / oracle(snr) - 1.0)

    ok = max(snr_err.values()) <= 0.2 and 0.995 <= power <= 1.005 and max(ber_rel.values()) <= 0.10
    detail = (
        f"max SNR error {max(snr_err.values()):.3f} dB, E|h|^2 {power:.4f}, "
        + ", ".join(f"BER {k[0]}@{k[1]:g}dB {100 * v:.1f}%" for k, v in ber_rel.items())
    )
    assert report(2, ok, detail)


# 3 ---------------------------------------------------------------------------


def test_c03_split_equivalence():
    shard = generate_dataset(SyntheticDatasetSpec(64, 0, 0, seed=31))["train"]
    cfg = RoundConfig(
        num_clients=1, local_steps=1, rounds=1, batch_size=16, train_with_channel_noise=False,
        optimizer=OptimizerConfig("adam", 2e-3), seed=7,
    )
    init = MTSCModel(rng=RngHandle(3))
    init.prepare_finetune()
    worst = []
    for steps in range(1, 11):
        split, mono = init.clone(), init.clone()
        run_training(split, [shard], RoundConfig(**{**cfg.__dict__, "rounds": steps}))
        centralized_train(mono, shard, steps, RngHandle(7).child("client", 0), cfg.link(), cfg.optimizer, 16)
        a, b = dict(split.named_tensors()), dict(mono.named_tensors())
        worst.append(max(float(np.max(np.abs(a[k].data - b[k].data))) for k in a))
    ok = max(worst) <= 1e-6
    assert report(3, ok, f"10 steps, max |split - monolithic| per step {max(worst):.2e}")


# 4 ---------------------------------------------------------------------------


def test_c04_fedavg_algebra():
    gen = np.random.default_rng(4)
    failures = 0
    cases = 0
    for _ in range(1000):
        c = int(gen.integers(1, 7))
        shape = tuple(int(s) for s in gen.integers(1, 5, size=int(gen.integers(1, 3))))
        scale = 10.0 ** gen.uniform(-3, 3)
        ups = [UpdateMessage(i, {"w": scale * gen.standard_normal(shape), "b": gen.standard_normal(3)}, 1) for i in range(c)]
        w = gen.dirichlet(np.ones(c))
        w[-1] = 1.0 - w[:-1].sum()
        if w[-1] < 0:
            w = np.full(c, 1.0 / c)
        order = gen.permutation(c)

        same = aggregate([UpdateMessage(i, ups[0].params, 1) for i in range(c)], w)  # identity
        failures += any(same[k].tobytes() != ups[0].params[k].tobytes() for k in same)

        avg = aggregate(ups, w)  # convexity
        stacked = {k: np.stack([u.params[k] for u in ups]) for k in avg}
        failures += any(np.any(avg[k] < stacked[k].min(0)) or np.any(avg[k] > stacked[k].max(0)) for k in avg)

        j = int(gen.integers(c))  # one-hot weights
        onehot = np.eye(c)[j]
        out = aggregate(ups, onehot)
        failures += any(out[k].tobytes() != ups[j].params[k].tobytes() for k in out)

        perm = aggregate([ups[i] for i in order], [w[i] for i in order])  # order independence
        failures += any(perm[k].tobytes() != avg[k].tobytes() for k in avg)
        cases += 4
    assert report(4, failures == 0, f"{cases} randomized checks (1000 draws x 4 properties), {failures} failures")


# 5 ---------------------------------------------------------------------------


def test_c05_compression_oracle():
    gen = np.random.default_rng(5)
    mismatches = 0
    pairs = 0
    for _ in range(300):
        n_layers = int(gen.integers(1, 4))
        params = {f"l{i}.W": gen.standard_normal(tuple(gen.integers(1, 12, size=2))) for i in range(n_layers)}
        if gen.random() < 0.5:
            params["emb.text_emb"] = gen.standard_normal(int(gen.integers(1, 20)))
        accs = {p: float(np.round(gen.random(), 1)) for p in plan_grid()}
        mem_hi = estimate_cost(params, CompressionPlan(0.0, 32))[0]
        mac_hi = max(1, estimate_cost(params, CompressionPlan(0.0, 32))[1])
        profile = ClientProfile(int(gen.integers(1, mem_hi + 2)), int(gen.integers(1, mac_hi + 2)), float(gen.random()))
        rows = []
        for plan in plan_grid():
            mem, mac = estimate_cost(params, plan)
            rows.append(dict(plan=plan, acc=accs[plan], mac=mac, bits=plan.quant_bits, rate=plan.prune_rate,
                             fits=mem <= profile.mem_budget_bytes and mac <= profile.compute_budget_mac))
        want = brute_force_plan(rows, profile.min_accuracy)
        try:
            got = optimize_plan(profile, params, accs.__getitem__)
            mismatches += want is None or got.plan != want[0]["plan"] or got.meets_accuracy != want[1]
        except InfeasiblePlanError:
            mismatches += want is not None
        pairs += 1

    bad_tensors = 0
    for _ in range(1000):
        w = gen.standard_normal(int(gen.integers(1, 200))) * 10.0 ** gen.uniform(-4, 4)
        rate = PRUNE_RATES[int(gen.integers(4))]
        bits = (4, 8, 16)[int(gen.integers(3))]
        packed = compress({"t.W": w}, CompressionPlan(rate, 32))
        zeros_ok = np.count_nonzero(packed.params["t.W"] == 0) >= int(np.ceil(rate * w.size))
        zeros_ok &= np.count_nonzero(~packed.masks["t.W"]) == int(np.ceil(rate * w.size))
        codes, scale = quantize_uniform(w, bits)
        err = np.max(np.abs(dequantize(codes, scale, bits) - w))
        bad_tensors += not (zeros_ok and err <= scale / 2 * (1 + 1e-12))
    ok = mismatches == 0 and bad_tensors == 0
    assert report(5, ok, f"{pairs} profile/model pairs, {mismatches} plan mismatches; 1000 tensors, {bad_tensors} violations")


# 6 ---------------------------------------------------------------------------


def test_c06_allocation_oracle():
    import itertools

    gen = np.random.default_rng(6)
    n = 10_000
    raw = gen.random((n, 8)) ** gen.uniform(0.2, 6, size=(n, 1))  # from near-flat to spiky
    raw[gen.random(n) < 0.05] = 0.0  # some all-zero semantic vectors
    lam = gen.random(n)
    lam[gen.random(n) < 0.1] = 1.0
    lam[gen.random(n) < 0.1] = 0.0
    budget = gen.integers(0, 33, size=n)

    cand = np.array(list(itertools.product(range(5), repeat=8)), dtype=np.float64)
    sums = cand.sum(axis=1)
    got = np.empty((n, 8))
    targets = np.empty((n, 8))
    for i in range(n):
        scores = score_importance(np.repeat(raw[i], 4))
        got[i] = allocate_from_lambda(scores, lam[i], int(budget[i])).s
        targets[i] = lr_targets(scores, lam[i], int(budget[i]))

    conservation = int(np.sum(got.sum(axis=1) != budget))
    greedy_mismatch = sum(not np.array_equal(got[i], greedy_allocation(targets[i], int(budget[i]))) for i in range(n))
    not_optimal = 0
    for b in range(33):
        rows = np.flatnonzero(budget == b)
        pool = cand[sums == b]
        sq = (pool**2).sum(axis=1)
        for chunk in np.array_split(rows, max(1, rows.size // 64)):
            if chunk.size == 0:
                continue
            t = targets[chunk]
            best = (sq[:, None] - 2 * pool @ t.T).min(axis=0)
            mine = (got[chunk] ** 2).sum(axis=1) - 2 * (got[chunk] * t).sum(axis=1)
            not_optimal += int(np.sum(mine > best + 1e-9))
    ok = conservation == 0 and greedy_mismatch == 0 and not_optimal == 0
    assert report(
        6, ok,
        f"{n} triples: {not_optimal} off the brute-force optimum, {greedy_mismatch} differ from the "
        f"reference rule, {conservation} budget violations",
    )


# 7 ---------------------------------------------------------------------------


def _scan(keys, q, k):
    sims = np.einsum("ij,j->i", keys, q) / (np.sqrt(np.einsum("ij,ij->i", keys, keys)) * np.sqrt(q @ q))
    order = np.lexsort((np.arange(keys.shape[0]), -sims))[:k]
    return order, sims[order]


def test_c07_rag_exactness(tmp_path):
    gen = np.random.default_rng(7)
    mismatches = 0
    for size in (10, 100, 10_000):
        keys = gen.standard_normal((size, 32))
        kb = KnowledgeBase("global")
        kb.extend(keys, gen.standard_normal((size, 32)))
        for _ in range(1000):
            q = gen.standard_normal(32)
            k = int(gen.integers(1, 9))
            hits = kb_retrieve(kb, q, k)
            idx, sims = _scan(keys, q, k)
            mismatches += [h.entry.insert_index for h in hits] != idx.tolist()
            mismatches += not np.allclose([h.similarity for h in hits], sims, rtol=0, atol=1e-12)

    model = MTSCModel(rng=RngHandle(7))
    path = tmp_path / "model.mtsc"
    save_checkpoint(path, model.state_dict())
    before = hashlib.sha256(path.read_bytes()).hexdigest()
    test = generate_dataset(SyntheticDatasetSpec(0, 0, 20, seed=7))["test"]
    kb = KnowledgeBase("local")
    sv = run_batch(model, test.inputs(), 6.0, 16, None)["sv"]
    kb.extend(sv, sv)
    kb.insert(np.ones(32), np.ones(32), "extra")
    save_kb(kb, tmp_path / "kb.bin")
    kb = load_kb(tmp_path / "kb.bin")
    augment_batch(kb, sv, 0.3)
    run_batch(model, test.inputs(), 6.0, 16, None, tx_kb=kb, rx_kb=kb)
    save_checkpoint(tmp_path / "after.mtsc", model.state_dict())
    after = hashlib.sha256((tmp_path / "after.mtsc").read_bytes()).hexdigest()
    ok = mismatches == 0 and before == after
    assert report(7, ok, f"3000 queries over kb sizes 10/100/10k, {mismatches} mismatches; checkpoint hash {'unchanged' if before == after else 'CHANGED'}")


# 8-10: trained pipeline ------------------------------------------------------


def _series(table):
    snrs = sorted(table)
    return snrs, [np.mean(list(table[s].values())) for s in snrs]


def test_c08_accuracy_trend(default_sweep):
    prop = mean_accuracy_by_seed(default_sweep, "proposed")
    base = mean_accuracy_by_seed(default_sweep, "baseline1_traditional")
    snrs, means = _series(prop)
    drops = [means[i] - means[i + 1] for i in range(len(means) - 1) if means[i + 1] < means[i]]
    trend_ok = len(drops) <= 1 and all(d <= 0.01 for d in drops)
    gaps = []
    for snr in (-6.0, -3.0):
        p_lo, p_hi = confidence_interval(list(prop[snr].values()))
        b_lo, b_hi = confidence_interval(list(base[snr].values()))
        gaps.append((snr, p_lo, b_hi))
    sig_ok = all(p_lo > b_hi for _, p_lo, b_hi in gaps)
    seeds = len(next(iter(prop.values())))
    detail = (
        f"{seeds} seeds, proposed mean acc " + " ".join(f"{m:.3f}" for m in means)
        + f" ({len(drops)} inversions); "
        + ", ".join(f"{s:g} dB CI low {lo:.3f} vs baseline1 CI high {hi:.3f}" for s, lo, hi in gaps)
    )
    assert report(8, trend_ok and sig_ok and seeds >= 5, detail)


def test_c09_reconstruction_trend(default_sweep):
    _, prop = _series(per_seed(default_sweep, "proposed", "reconstruct"))
    _, base2 = _series(per_seed(default_sweep, "baseline2_no_lam", "reconstruct"))
    increasing = all(b > a for a, b in zip(prop, prop[1:]))
    above = all(p >= q for p, q in zip(prop, base2))
    detail = "proposed PSNR " + " ".join(f"{v:.3f}" for v in prop) + " | baseline2 " + " ".join(f"{v:.3f}" for v in base2)
    assert report(9, increasing and above, detail)


def test_c10_importance_aware_gain(default_config, trained_models):
    from mtsc.adaptive import importance_weighted_distortion
    from mtsc.experiments.sweep import eval_draws

    aware_all, uniform_all = {}, {}
    n_samples = 0
    for seed, (data, models) in trained_models.items():
        model = models["proposed"]
        test = data.test
        sem, _ = eval_draws(default_config, seed, test, model.cfg.max_total_symbols)
        n_samples += len(test)
        points = [("ideal", None)] + [(snr, sem) for snr in default_config.sweep.snr_grid]
        for label, draws in points:
            snr = 0.0 if draws is None else label
            for uniform, store in ((False, aware_all), (True, uniform_all)):
                out = run_batch(model, test.inputs(), snr, 8, draws, ("classify",), uniform=uniform)
                d = [importance_weighted_distortion(a, b, s) for a, b, s in zip(out["sv"], out["sv_hat"], out["scores"])]
                store.setdefault(label, []).extend(d)
    per_point = {k: (np.mean(aware_all[k]), np.mean(uniform_all[k])) for k in aware_all}
    ok = all(a <= u for a, u in per_point.values()) and n_samples >= 500
    detail = f"budget 8, {n_samples} samples per point; aware/uniform " + ", ".join(
        f"{k if k == 'ideal' else f'{k:g}dB'} {a:.1f}/{u:.1f}" for k, (a, u) in per_point.items()
    )
    assert report(10, ok, detail)


# 11 --------------------------------------------------------------------------


def test_c11_sweep_determinism(tmp_path):
    from mtsc.cli import main

    for name in ("a", "b"):
        main(["sweep", "--config", TINY, "--seed", "0", "--out", str(tmp_path / name)])
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    ok = a == b and len(a) > 0
    assert report(11, ok, f"two sweep runs, metrics.csv sha256 {hashlib.sha256(a).hexdigest()[:16]} vs {hashlib.sha256(b).hexdigest()[:16]}")
