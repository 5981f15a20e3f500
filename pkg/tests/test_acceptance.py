"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N PASS|FAIL`` line (also collected in
the terminal summary) before asserting. The training experiments (4, 5, 6)
take several minutes on one CPU core.
"""
import statistics
import time

import numpy as np
import pytest

import oracles
from genfs import checkpoint, data, fuzzy, metrics
from genfs import numerics as nx
from genfs.gradcheck import check_op, directional_check, relative_error
from genfs.model import TrainConfig, VARIANTS, _encode_records, ablate, build, fit
from genfs.tokenization import FuzzyTokenizer, basic_tokenize, zipf_stats
from genfs.transformer import pad_batch
from test_numerics import OP_CASES, make_inputs


def exact_match(hyps, refs):
    return float(np.mean([h == r for h, r in zip(hyps, refs)]))


def test_gradient_oracle(verdict):
    start = time.perf_counter()
    errors = {}
    for name, (fn, specs) in sorted(OP_CASES.items()):
        for seed in range(4):
            errors[f"{name}/{seed}"] = check_op(fn, *make_inputs(specs, 10 * seed), seed=seed)

    train = data.copy_task(40, vocab=8, max_len=6, seed=0)
    cfg = TrainConfig(rules=2, d_model=8, n_heads=2, n_layers=1, d_ff=16, dropout=0.0, max_len=16,
                      tokenizer_merges=(8, 32), seed=0)
    model, _ = build(train, cfg)
    pairs, _ = _encode_records(model, train[:6])
    model.train()
    params = model.parameters()

    def loss():
        return model.batch_loss(pairs.src, pairs.tgt)[0]

    for seed in range(8):
        errors[f"fuzzys2s/direction{seed}"] = directional_check(loss, params, seed=seed)

    # coordinate-wise: 40 randomly chosen scalar parameters per case, central differences in float64
    for seed in range(4):
        rng = np.random.default_rng(seed)
        for p in params:
            p.grad = None
        nx.backward(loss())
        picks = [(k, tuple(int(rng.integers(s)) for s in params[k].shape))
                 for k in rng.integers(0, len(params), 40)]
        analytic = [float(params[k].grad[idx]) for k, idx in picks]
        numeric = []
        for k, idx in picks:
            base = params[k].data
            vals = []
            for step in (1e-3, -1e-3):
                bumped = base.astype(np.float64)
                bumped[idx] += step
                params[k].data = bumped
                with nx.default_dtype(np.float64), nx.no_grad():
                    vals.append(float(loss().data))
            params[k].data = base
            numeric.append((vals[0] - vals[1]) / 2e-3)
        errors[f"fuzzys2s/coords{seed}"] = relative_error(analytic, numeric)

    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = len(errors) >= 100 and errors[worst] <= 1e-3 and elapsed < 60
    verdict(1, "gradient oracle", ok,
            f"{len(errors)} cases, worst rel err {errors[worst]:.2e} ({worst}), {elapsed:.1f}s")
    assert ok


def test_reduction_equivalence(verdict):
    train = data.copy_task(200, vocab=12, max_len=8, seed=5)
    cfg = TrainConfig(rules=1, d_model=16, n_heads=2, n_layers=1, d_ff=32, dropout=0.0, max_len=16,
                      tokenizer_merges=(16, 64), seed=3)
    model, _ = build(train, cfg)
    rng = np.random.default_rng(0)
    letters = list(data.LETTERS[:12])
    worst = 0.0
    for _ in range(50):
        src = " ".join(rng.choice(letters, int(rng.integers(1, 9))))
        tgt = " ".join(rng.choice(letters, int(rng.integers(0, 8))))
        H = model.forward(src, tgt)
        with nx.no_grad():
            lone = model.consequents[0].logits(pad_batch([model.encode(src)]), pad_batch([model.encode(tgt)]))
            ref = nx.softmax(lone, axis=-1).data[0]
        worst = max(worst, float(np.abs(H - ref).max()))
    ok = worst <= 1e-6
    verdict(2, "K=1 reduction", ok, f"50 inputs, max |diff| {worst:.1e}")
    assert ok


def test_fuzzy_invariants(verdict):
    worst_sum = worst_fs = 0.0
    monotone = agree = True
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((int(rng.integers(10, 40)), int(rng.integers(2, 6))))
        K = int(rng.integers(1, 5))
        state = fuzzy.fcm(pts, K, seed=seed)
        worst_sum = max(worst_sum, float(np.abs(state.memberships.sum(axis=1) - 1).max()))
        obj = np.asarray(state.objective)
        monotone &= bool(np.all(np.diff(obj) <= 1e-12 * np.abs(obj[:-1])))

        nonneg = np.abs(pts)
        dl = fuzzy.elect_delegates(nonneg, K, seed=seed)
        for x in nonneg:
            worst_fs = max(worst_fs, abs(fuzzy.fire_strengths(x, dl).normalized.sum() - 1.0))

        outs = [rng.standard_normal((3, 4)) for _ in range(K)]
        for j in range(K):
            mu = np.eye(K)[j]
            agree &= np.array_equal(fuzzy.combine(outs, mu), fuzzy.combine(outs, mu, "unaligned"))
    ok = worst_sum <= 1e-9 and worst_fs <= 1e-9 and monotone and agree
    verdict(3, "fuzzy invariants", ok,
            f"20 point sets, membership |sum-1| {worst_sum:.1e}, fire |sum-1| {worst_fs:.1e}, "
            f"objective non-increasing={monotone}, one-hot combine agree={agree}")
    assert ok


COPY_CFG = TrainConfig(epochs=30, batch_size=32, learning_rate=3e-3, lr_schedule="exponential", rules=2, seed=0,
                       max_len=16, d_model=64, n_heads=4, n_layers=2, d_ff=128, dropout=0.0)


def test_copy_task(verdict):
    train = data.copy_task(2000, vocab=20, max_len=10, seed=1)
    val = data.copy_task(200, vocab=20, max_len=10, seed=2)
    test = data.copy_task(200, vocab=20, max_len=10, seed=3)
    start = time.perf_counter()
    model, hist = fit(train, val, COPY_CFG)
    elapsed = time.perf_counter() - start
    hyps = model.translate([r.src for r in test])
    refs = [r.tgt for r in test]
    acc = metrics.token_accuracy(hyps, refs)
    exact = exact_match(hyps, refs)
    medians = [h.train_loss_median for h in hist]
    tail = medians[2:]
    monotone = all(b <= a for a, b in zip(tail, tail[1:]))
    ok = acc >= 99.0 and exact >= 0.95 and elapsed < 600 and monotone
    verdict(4, "copy task", ok, f"ACC {acc:.2f}, exact {exact:.3f}, {elapsed:.0f}s, "
            f"epoch medians non-increasing from epoch 3={monotone}")
    assert ok


REGIME_CFG = TrainConfig(epochs=30, batch_size=32, learning_rate=3e-3, rules=2, max_len=24,
                         d_model=32, n_heads=4, n_layers=1, d_ff=64, dropout=0.0)


def test_regime_routing(verdict):
    split_ok, routes, k2, k1 = True, [], [], []
    for seed in range(3):
        train = data.regime_task(2000, seed=100 + seed)
        val = data.regime_task(200, seed=200 + seed)
        test = data.regime_task(200, seed=300 + seed)
        cfg = TrainConfig(**{**REGIME_CFG.to_dict(), "seed": seed})
        model, _ = fit(train, val, cfg)

        short_rule = [k for k, d in enumerate(model.delegates) if len(train[d.source_id].src.split()) <= 8]
        long_rule = [k for k, d in enumerate(model.delegates) if len(train[d.source_id].src.split()) >= 16]
        split_ok &= len(short_rule) == 1 and len(long_rule) == 1
        if split_ok:
            ids = [model.encode(r.src) for r in test]
            winners = model.fire_matrix(ids).argmax(axis=1)
            expected = [short_rule[0] if len(r.src.split()) <= 8 else long_rule[0] for r in test]
            routes.append(float(np.mean(winners == np.asarray(expected))))

        refs = [r.tgt for r in test]
        k2.append(exact_match(model.translate([r.src for r in test]), refs))
        single, _ = fit(train, val, ablate(cfg, "genfs_trans"))
        k1.append(exact_match(single.translate([r.src for r in test]), refs))
    route_ok = split_ok and min(routes) >= 0.9
    beats = statistics.median(k2) > statistics.median(k1)
    ok = split_ok and route_ok and beats
    verdict(5, "regime routing", ok,
            f"one delegate per regime={split_ok}, routing {routes}, exact K=2 {k2} vs K=1 {k1}")
    assert ok


ABLATION_CFG = TrainConfig(epochs=30, batch_size=32, learning_rate=3e-3, rules=2, max_len=56,
                           d_model=64, n_heads=4, n_layers=1, d_ff=128, dropout=0.1,
                           tokenizer_merges=(16, 128, 1024))


def test_ablation_ordering(verdict):
    scores = {name: [] for name in VARIANTS}
    for seed in range(3):
        train = data.zipf_regime_task(4000, seed=100 + seed, n_words=6000)
        val = data.zipf_regime_task(200, seed=200 + seed, n_words=6000)
        test = data.zipf_regime_task(200, seed=300 + seed, n_words=6000)
        cfg = TrainConfig(**{**ABLATION_CFG.to_dict(), "seed": seed})
        for name, drop in VARIANTS.items():
            model, _ = fit(train, val, ablate(cfg, drop))
            scores[name].append(metrics.token_accuracy(model.translate([r.src for r in test]), [r.tgt for r in test]))
    med = {name: statistics.median(v) for name, v in scores.items()}
    ok = med["full"] >= med["no-tokenizer"] >= med["no-genfs"]
    verdict(6, "ablation ordering", ok, " ".join(f"{k} median {v:.2f} {np.round(scores[k], 2).tolist()}"
                                                for k, v in med.items()))
    assert ok


def test_low_frequency_tokens(verdict):
    corpus = data.zipf_corpus(10_000, seed=0)
    words = [basic_tokenize(s) for s in corpus]
    tok = FuzzyTokenizer.fit(words, seed=0)
    basic = zipf_stats(w for seq in words for w in seq).low_freq_fraction(5)
    fuzzy_frac = zipf_stats(t for seq in words for w in seq for t in tok.tokenize_word(w)).low_freq_fraction(5)
    ok = fuzzy_frac < basic
    verdict(7, "low-frequency tokens", ok, f"fraction below 5: basic {basic:.4f}, fuzzy {fuzzy_frac:.4f}")
    assert ok


def test_metric_oracles(verdict):
    pairs = oracles.random_pairs(np.random.default_rng(2024), 1000)
    mismatches = 0
    for h, r in pairs:
        for n in range(1, 5):
            mismatches += metrics.clipped_precision(h, r, n) != oracles.clipped_counts(h, r, n)
        for n in (1, 2):
            mismatches += metrics.rouge_n_pair(h, r, n) != oracles.rouge_n(h, r, n)
        mismatches += metrics.lcs_length(h, r) != oracles.lcs(h, r)
        mismatches += metrics.rouge_l_pair(h, r) != oracles.rouge_l(h, r)
        mismatches += sorted(metrics.align_exact(h, r)) != oracles.leftmost_alignment(h, r)
        mismatches += metrics.meteor_pair(h, r) != oracles.meteor(h, r)
    hyps, refs = [h for h, _ in pairs], [r for _, r in pairs]
    mismatches += metrics.bleu(hyps, refs) != pytest.approx(oracles.bleu(hyps, refs), rel=1e-12)
    identical = metrics.evaluate(refs, refs)
    scores = [identical.acc, identical.bleu, identical.meteor, identical.rouge1, identical.rouge2, identical.rougeL]
    all_100 = all(s == pytest.approx(100.0, abs=1e-9) for s in scores)
    ok = mismatches == 0 and all_100
    verdict(8, "metric oracles", ok, f"1000 pairs, {mismatches} mismatches, identical corpus scores {scores}")
    assert ok


def test_persistence(verdict, tmp_path):
    train = data.copy_task(400, vocab=10, max_len=8, seed=11)
    val = data.copy_task(50, vocab=10, max_len=8, seed=12)
    cfg = TrainConfig(epochs=3, rules=2, d_model=16, n_heads=2, n_layers=1, d_ff=32, max_len=16,
                      tokenizer_merges=(8, 32), seed=7)
    a, _ = fit(train, val, cfg)
    b, _ = fit(train, val, cfg)
    checkpoint.save(a, tmp_path / "a.ckpt")
    checkpoint.save(b, tmp_path / "b.ckpt")
    same_runs = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    probe = [r.src for r in data.copy_task(100, vocab=10, max_len=8, seed=13)]
    loaded = checkpoint.load(tmp_path / "a.ckpt")
    before = [" ".join(t) for t in a.generate_batch(probe)]
    after = [" ".join(t) for t in loaded.generate_batch(probe)]
    same_gen = before == after
    probs_equal = all(a.forward(s, "").tobytes() == loaded.forward(s, "").tobytes() for s in probe[:20])
    ok = same_runs and same_gen and probs_equal
    verdict(9, "persistence", ok, f"identical checkpoints={same_runs}, 100-probe generations identical={same_gen}, "
            f"forward bitwise={probs_equal}")
    assert ok
