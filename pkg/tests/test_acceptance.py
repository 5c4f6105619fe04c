"""End-to-end acceptance suite.

Each criterion records exactly one PASS/FAIL line; the lines are echoed in the
terminal summary (see conftest). Criteria 7-9 run real training/benchmark
experiments and dominate the suite's wall time.
"""

import math
import statistics
import time

import numpy as np
import pytest
import torch

from lookuplm.bench import latency_benchmark, selection_cost
from lookuplm.config import RunConfig, TrainConfig
from lookuplm.corpus import build_frequency_table, extract_tail, tokenize
from lookuplm.evaluate import perplexity
from lookuplm.memory import DictConfig, LookupDictionary, index, update_ratio
from lookuplm.model import ModelConfig, TransformerLM
from lookuplm.rescore import FusionConfig, Hypothesis, rescore
from lookuplm.sweep import SweepCell, sweep
from lookuplm.training import make_optimizer, masked_lm_loss, run_training, train_step

from oracles import scalar_select
from synthdata import make_tail_corpus

RESULTS: list[str] = []


def _record(num: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {num:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _prepare(n_train, n_eval, **corpus_kw):
    lines, info = make_tail_corpus(n_train, seed=100, **corpus_kw)
    eval_lines, _ = make_tail_corpus(n_eval, seed=200, **corpus_kw)
    vocab = info["vocab"]
    sents = [tokenize(ln, vocab, "whitespace") for ln in lines]
    esents = [tokenize(ln, vocab, "whitespace") for ln in eval_lines]
    freq = build_frequency_table(sents)
    tail1 = extract_tail(freq, 0.05, 1)
    return info, sents, esents, freq, tail1


@pytest.fixture(scope="module")
def small_corpus():
    """~200-token vocabulary with 50 designated tail tokens on bigram triggers."""
    return _prepare(1000, 300)


@pytest.fixture(scope="module")
def large_corpus():
    """~450-token vocabulary so bigram id sums wrap around U=512."""
    return _prepare(1200, 300, n_head=350, n_tail=100)


def test_criterion_01_hash_indexing():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    bad = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 6))
        u = int(rng.integers(1, 10_000))
        window = [int(x) for x in rng.integers(0, 50_000, size=n + int(rng.integers(0, 3)))]
        i = index(window, n, u)
        if i != sum(window[-n:]) % u or not (0 <= i < u):
            bad += 1
    # bigram rule: current token id plus previous token id, mod table size
    for prev, cur, u in [(3, 4, 10), (120, 7, 64), (999, 999, 512), (0, 1, 2)]:
        if index([prev, cur], 2, u) != (prev + cur) % u:
            bad += 1
    dt = time.perf_counter() - t0
    _record(1, "hash indexing", bad == 0 and dt < 1.0,
            f"0 mismatches target, got {bad}; {dt:.2f}s")


def test_criterion_02_update_semantics():
    t0 = time.perf_counter()
    d = LookupDictionary(DictConfig(U=4, M=8, N=2, warmup_steps=0, seed=5), 6,
                         dtype=torch.float64)
    d.step = 1  # past warmup

    before = d.memory[1].clone()
    e = np.linspace(-1.0, 1.0, 6)
    d.update(1, e, 1.0)
    expect = 0.5 * before + 0.5 * torch.from_numpy(e)
    ema_exact = torch.equal(d.memory[1], expect)

    before = d.memory[2].clone()
    d.update(2, e, 0.0)
    noop = torch.equal(d.memory[2], before)

    p, trials = 0.3, 10_000
    rng = np.random.default_rng(7)
    hits = 0
    for _ in range(trials):
        snap = d.memory[3].clone()
        d.update(3, rng.normal(size=6), p)
        hits += int((d.memory[3] != snap).any(dim=-1).sum())
    frac = hits / (trials * d.cfg.M)
    sigma = math.sqrt(p * (1 - p) / (trials * d.cfg.M))
    mc_ok = abs(frac - p) <= 4 * sigma
    dt = time.perf_counter() - t0
    _record(2, "stochastic EMA update", ema_exact and noop and mc_ok and dt < 10.0,
            f"EMA exact={ema_exact}, p=0 no-op={noop}, "
            f"MC |{frac:.4f}-{p}| <= 4 sigma ({4 * sigma:.4f}); {dt:.1f}s")


def test_criterion_03_update_ratio():
    exact = all(update_ratio(c) == 1.0 for c in (0, 1, 2))
    clamp_ok = (update_ratio(3) == 1.0 / math.log(3)
                and update_ratio(10**9) == 0.05
                and update_ratio(4) == min(max(1.0 / math.log(4), 0.05), 1.0))
    vals = [update_ratio(c) for c in range(3, 20_000)]
    mono = all(a >= b for a, b in zip(vals, vals[1:]))
    _record(3, "update-ratio formula", exact and clamp_ok and mono,
            f"counts<=2 -> 1.0: {exact}, clamp to [0.05, 1]: {clamp_ok}, "
            f"non-increasing: {mono}")


def test_criterion_04_attention_selection():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)

    d = LookupDictionary(DictConfig(U=16, M=8, N=2, seed=1), 12, dtype=torch.float64)
    c = torch.from_numpy(rng.normal(size=(40, 12)))
    idx = torch.from_numpy(rng.integers(0, 16, size=40))
    _, w = d.select(c, idx)
    sums_ok = bool(torch.all((w.sum(-1) - 1.0).abs() <= 1e-6))

    d1 = LookupDictionary(DictConfig(U=16, M=1, N=2, seed=1), 12, dtype=torch.float64)
    ct, _ = d1.select(c, idx)
    passthrough = torch.equal(ct, d1.memory[idx, 0])

    worst = 0.0
    for _ in range(50):
        q = rng.normal(size=12)
        rows = d.memory[int(rng.integers(0, 16))].numpy()
        ref_ct, ref_w = scalar_select(q, rows)
        got_ct, got_w = d.select(torch.from_numpy(q), torch.tensor(int(0)),
                                 memory=torch.from_numpy(rows).unsqueeze(0).repeat(16, 1, 1))
        worst = max(worst,
                    float(np.abs(got_ct.numpy() - ref_ct).max()),
                    float(np.abs(got_w.numpy() - ref_w).max()))
    oracle_ok = worst <= 1e-12

    q = torch.from_numpy(rng.normal(size=12)).requires_grad_(True)
    proj = torch.from_numpy(rng.normal(size=12))
    ct, _ = d.select(q, torch.tensor(2))
    (ct @ proj).backward()
    an = q.grad.numpy()
    h, fd = 1e-6, np.zeros(12)
    with torch.no_grad():
        for k in range(12):
            for s, sign in ((k, 1.0), (k, -1.0)):
                q[s] += sign * h
                val = float(d.select(q, torch.tensor(2))[0] @ proj)
                fd[k] += sign * val / (2 * h)
                q[s] -= sign * h
    rel = float(np.max(np.abs(fd - an) / np.maximum(np.maximum(np.abs(fd), np.abs(an)), 1e-9)))
    grad_ok = rel < 1e-4
    dt = time.perf_counter() - t0
    _record(4, "attention selection", sums_ok and passthrough and oracle_ok and grad_ok and dt < 5.0,
            f"weight sums={sums_ok}, M=1 passthrough={passthrough}, "
            f"oracle max err {worst:.2e} <= 1e-12, query-grad rel err {rel:.2e} < 1e-4; {dt:.1f}s")


def test_criterion_05_protocol_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    mcfg = ModelConfig(V=40, d_emb=16, L=1, H=2, d_ff=32, max_len=12, seed=2)
    tcfg = TrainConfig(base_lr=1e-3, lr_warmup_steps=20, max_steps=2000,
                       batch_tokens=48, data_seed=2)
    sents = [[1] + [int(x) for x in rng.integers(4, 40, size=8)] + [2] for _ in range(50)]
    freq = build_frequency_table(sents)

    model = TransformerLM(mcfg)
    d = LookupDictionary(DictConfig(U=64, M=4, N=2, warmup_steps=1000, seed=2), 16)
    opt = make_optimizer(model, tcfg)
    initial = d.checksum()
    warm_ok = True
    for step in range(1, 2001):
        batch = torch.from_numpy(
            np.stack([sents[int(rng.integers(50))] for _ in range(5)]).astype(np.int64))
        train_step(model, d, opt, batch, freq, tcfg, step)
        if step <= 1000 and d.checksum() != initial:
            warm_ok = False
            break
    changed_after = d.checksum() != initial

    d.freeze()
    at_eval = d.checksum()
    perplexity(model, d, sents[:20], None, None)
    eval_ok = d.checksum() == at_eval
    dt = time.perf_counter() - t0
    _record(5, "warmup/freeze protocol", warm_ok and changed_after and eval_ok and dt < 120.0,
            f"frozen through step 1000: {warm_ok}, updating after: {changed_after}, "
            f"frozen during eval: {eval_ok}; {dt:.0f}s")


def test_criterion_06_full_model_gradients():
    t0 = time.perf_counter()
    model = TransformerLM(
        ModelConfig(V=16, d_emb=8, L=1, H=2, d_ff=16, max_len=12, seed=3)).double()
    model.eval()
    d = LookupDictionary(DictConfig(U=8, M=4, N=2, seed=4), 8, dtype=torch.float64)
    tokens = torch.tensor([[1, 5, 7, 4, 9, 2], [1, 6, 8, 2, 0, 0]])

    loss, _ = masked_lm_loss(model, d, tokens)
    loss.backward()
    rng = np.random.default_rng(6)
    h, worst, worst_name = 1e-5, 0.0, ""
    for name, p in model.named_parameters():
        flat, grad = p.data.view(-1), p.grad.view(-1)
        coords = rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False)
        for ci in coords:
            ci = int(ci)
            vals = []
            with torch.no_grad():
                for sign in (1.0, -1.0):
                    flat[ci] += sign * h
                    vals.append(float(masked_lm_loss(model, d, tokens)[0].detach()))
                    flat[ci] -= sign * h
            fd, an = (vals[0] - vals[1]) / (2 * h), float(grad[ci])
            # additive 1e-9 term: central-difference roundoff floor (~eps/h)
            ratio = abs(fd - an) / (1e-4 * max(abs(fd), abs(an)) + 1e-9)
            if ratio > worst:
                worst, worst_name = ratio, name
    dt = time.perf_counter() - t0
    _record(6, "full-model gradient check", worst <= 1.0 and dt < 120.0,
            f"worst err = {worst:.2f}x the 1e-4 rel tolerance ({worst_name}); {dt:.0f}s")


def _train_and_eval(info, sents, esents, freq, tail1, seed, use_dict,
                    steps=700, U=4096, M=32):
    cfg = RunConfig(
        model=ModelConfig(V=info["vocab"].size, d_emb=64, L=2, H=4, d_ff=128,
                          max_len=24, seed=seed),
        memory=DictConfig(U=U, M=M, N=2, warmup_steps=50, seed=seed),
        train=TrainConfig(base_lr=5e-3, lr_warmup_steps=50, max_steps=steps,
                          batch_tokens=2048, data_seed=seed),
        use_dict=use_dict,
    )
    model, d, _ = run_training(cfg, sents, freq)
    if d is not None:
        d.freeze()
    return perplexity(model, d, esents, tail1, None)


def test_criterion_07_long_tail_benefit(small_corpus):
    info, sents, esents, freq, tail1 = small_corpus
    assert info["vocab"].size >= 150 and len(info["tail_ids"]) >= 50
    aug, base = [], []
    for seed in (0, 1, 2):
        aug.append(_train_and_eval(info, sents, esents, freq, tail1, seed, True))
        base.append(_train_and_eval(info, sents, esents, freq, tail1, seed, False))
    aug_t1 = statistics.median(r.tail1_ppl for r in aug)
    base_t1 = statistics.median(r.tail1_ppl for r in base)
    aug_ov = statistics.median(r.overall_ppl for r in aug)
    base_ov = statistics.median(r.overall_ppl for r in base)
    tail_ok = aug_t1 < base_t1
    overall_ok = aug_ov <= 1.02 * base_ov
    _record(7, "long-tail benefit", tail_ok and overall_ok,
            f"median tail ppl {aug_t1:.2f} < {base_t1:.2f}: {tail_ok}; "
            f"median overall ppl {aug_ov:.2f} <= 1.02*{base_ov:.2f}: {overall_ok}; 3 seeds")


def test_criterion_08_sweep_trends(small_corpus, large_corpus):
    info, sents, esents, freq, tail1 = large_corpus
    base_cfg = RunConfig(
        model=ModelConfig(V=info["vocab"].size, d_emb=64, L=2, H=4, d_ff=128, max_len=24),
        memory=DictConfig(U=4096, M=32, N=2, warmup_steps=50),
        train=TrainConfig(base_lr=5e-3, lr_warmup_steps=50, max_steps=400,
                          batch_tokens=2048),
        use_dict=True,
    )
    u_cells = [SweepCell(u, 2, 32, "freq") for u in (64, 512, 4096)]
    res = sweep(base_cfg, u_cells, [0, 1, 2], sents, freq, esents, tail1)
    u_medians = [res.median(c) for c in u_cells]
    u_ok = all(v is not None for v in u_medians) and all(
        a >= b for a, b in zip(u_medians, u_medians[1:]))

    info_s, sents_s, esents_s, freq_s, tail1_s = small_corpus
    small_cfg = RunConfig(
        model=ModelConfig(V=info_s["vocab"].size, d_emb=64, L=2, H=4, d_ff=128, max_len=24),
        memory=base_cfg.memory, train=base_cfg.train, use_dict=True,
    )
    pol_cells = [SweepCell(4096, 2, 32, pol) for pol in ("freq", 0.5, 1.0)]
    res_pol = sweep(small_cfg, pol_cells, [0, 1, 2], sents_s, freq_s, esents_s, tail1_s)
    freq_med = res_pol.median(pol_cells[0])
    fixed_best = min(res_pol.median(c) for c in pol_cells[1:])
    pol_ok = freq_med is not None and freq_med <= 1.01 * fixed_best

    ig_cells = [SweepCell(4096, 2, 4, "freq"), SweepCell(4096, 2, 64, "freq")]
    res_ig = sweep(small_cfg, ig_cells, [0, 1, 2], sents_s, freq_s, esents_s, tail1_s,
                   with_info_gain=True)
    ig4 = res_ig.median_info_gain(ig_cells[0])
    ig64 = res_ig.median_info_gain(ig_cells[1])
    ig_ok = ig64 is not None and ig4 is not None and ig64 > ig4 > 0.0

    _record(8, "sweep trends", u_ok and pol_ok and ig_ok,
            f"tail ppl vs U {[f'{v:.2f}' for v in u_medians]} non-increasing: {u_ok}; "
            f"freq policy {freq_med:.2f} <= 1.01*{fixed_best:.2f}: {pol_ok}; "
            f"IG(M=64)={ig64:.3f} > IG(M=4)={ig4:.3f} > 0: {ig_ok}")


def test_criterion_09_latency_overhead():
    t0 = time.perf_counter()
    mcfg = ModelConfig(V=500, d_emb=256, L=6, H=4, d_ff=2048, max_len=64, seed=0)
    model = TransformerLM(mcfg)
    d = LookupDictionary(DictConfig(U=4096, M=16, N=2, warmup_steps=0, seed=0), mcfg.d_emb)
    d.freeze()
    rng = np.random.default_rng(0)
    sents = [[1] + [int(x) for x in rng.integers(4, 500, size=46)] + [2] for _ in range(8)]
    rep = latency_benchmark(model, model, d, sents, reps=40, warmup=8)
    lat_ok = rep.reliable and rep.overhead <= 0.10

    costs = selection_cost([16, 64, 128], d_emb=64, n_queries=512)
    increasing = costs[16] < costs[64] < costs[128]
    # at most linear in M, with 30% headroom for timer noise
    sublinear = (costs[64] / costs[16] <= 4 * 1.3 and costs[128] / costs[64] <= 2 * 1.3)
    dt = time.perf_counter() - t0
    _record(9, "latency overhead", lat_ok and increasing and sublinear and dt < 600.0,
            f"per-token overhead {100 * rep.overhead:.1f}% <= 10% (reliable={rep.reliable}); "
            f"selection cost increasing={increasing}, at most linear in M={sublinear}; {dt:.0f}s")


def test_criterion_10_rescoring():
    t0 = time.perf_counter()
    hyps = [Hypothesis(tokens=[1, 10 + k, 2], base_score=s, rank=k)
            for k, s in enumerate([-1.0, -2.5, -2.5, -7.0])]
    lm = [-4.0, -1.0, -9.0, -2.0]

    out0 = rescore(hyps, lm, FusionConfig(lambda_res=0.0))
    invariance = ([s.hypothesis.rank for s in out0] == [0, 1, 2, 3]
                  and all(s.combined == s.hypothesis.base_score for s in out0))

    cfg = FusionConfig(lambda_res=0.5)
    lo = rescore(hyps, lm, cfg)
    better = [-4.0, 2.0, -9.0, -2.0]  # raise hypothesis 1's LM score only
    hi = rescore(hyps, better, cfg)
    pos_lo = [s.hypothesis.rank for s in lo].index(1)
    pos_hi = [s.hypothesis.rank for s in hi].index(1)
    mono = (pos_hi <= pos_lo
            and hi[pos_hi].combined == -2.5 + 0.5 * 2.0
            and hi[pos_hi].combined > lo[pos_lo].combined)

    expected = sorted(
        (h.base_score + 0.5 * s for h, s in zip(hyps, lm)), reverse=True)
    fixture = [s.combined for s in lo] == expected
    dt = time.perf_counter() - t0
    _record(10, "n-best rescoring", invariance and mono and fixture and dt < 1.0,
            f"lambda=0 invariance={invariance}, lm-score monotonicity={mono}, "
            f"fixture agreement={fixture}; {dt:.2f}s")
