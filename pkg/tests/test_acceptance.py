"""Acceptance checks, one per criterion, each printing a PASS/FAIL line.

Run under pytest (``pytest tests/test_acceptance.py -s`` shows the lines as
they happen) or directly with ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import functools
import json
import math
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from ttnet.audio.features import FeatureGeometry, FeatureMatrix, denormalize, istft, normalize, stft
from ttnet.audio.pipeline import analyze, enhance_features, fit_stats, utterance_dataset
from ttnet.audio.scene import MixtureScene, energy, mix_at_snr, reference_clean, simulate_multichannel, synth_noise, synth_speech
from ttnet.audio.wavio import Waveform
from ttnet.compression import compress_network, compressed_count, select_rank, svd_compress_layer
from ttnet.experiment import ExperimentConfig, judge, run_experiment
from ttnet.nn import Dense, Network, backward, build_network, count_params, forward, mlp, mse_grad, mse_loss
from ttnet.tt import (
    ModeFactorization,
    TTMatrix,
    dense_param_count,
    reconstruct,
    tt_matvec,
    tt_param_count,
    tt_random_init,
    tt_svd_decompose,
)


def report(number: int, passed: bool, detail: str) -> tuple[bool, str]:
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}", flush=True)
    return passed, detail


def criterion_1():
    fact = ModeFactorization((32, 64), (32, 64), (1, 4, 1))
    tt_n = tt_param_count(tt_random_init(fact, 0))
    dense_n = dense_param_count(fact)
    return report(1, tt_n == 20480 and dense_n == 4_194_304, f"tt_param_count={tt_n}, dense_param_count={dense_n}")


def _split(n: int, k: int, rng) -> tuple:
    """Random ordered factorization of ``n`` into ``k`` factors (ones allowed)."""
    parts, rest = [], n
    for _ in range(k - 1):
        d = int(rng.choice([d for d in range(1, rest + 1) if rest % d == 0]))
        parts.append(d)
        rest //= d
    return (*parts, rest)


def criterion_2():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        rows, cols = (int(v) for v in rng.integers(2, 65, size=2))
        k = int(rng.integers(1, 4))
        ins, outs = _split(rows, k, rng), _split(cols, k, rng)
        w = rng.normal(size=(rows, cols))
        tt = tt_svd_decompose(w, ModeFactorization(ins, outs))
        worst = max(worst, np.linalg.norm(reconstruct(tt) - w) / np.linalg.norm(w))
    kron_ok = True
    for shapes in (((2, 2), (2, 2)), ((3, 2), (4, 5)), ((2, 3), (3, 2), (2, 2))):
        factors = [rng.normal(size=s) for s in shapes]
        w = functools.reduce(np.kron, factors)
        tt = tt_svd_decompose(w, ModeFactorization([s[0] for s in shapes], [s[1] for s in shapes]))
        kron_ok &= all(r == 1 for r in tt.ranks)
        kron_ok &= np.linalg.norm(reconstruct(tt) - w) <= 1e-12 * np.linalg.norm(w)
    return report(2, worst < 1e-8 and kron_ok,
                  f"max relative error {worst:.2e} over 50 matrices (< 1e-8); Kronecker ranks all 1: {kron_ok}")


def criterion_3():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 4))
        while True:
            ins = tuple(int(v) for v in rng.integers(1, 7, size=k))
            outs = tuple(int(v) for v in rng.integers(1, 7, size=k))
            if math.prod(ins) <= 256 and math.prod(outs) <= 256:
                break
        ranks = [1] + [int(v) for v in rng.integers(1, 5, size=k - 1)] + [1]
        tt = TTMatrix([rng.normal(size=(ranks[i], ins[i], outs[i], ranks[i + 1])) for i in range(k)])
        x = rng.normal(size=ins)
        dense = x.ravel() @ reconstruct(tt)
        got = tt_matvec(tt, x).ravel()
        worst = max(worst, np.linalg.norm(got - dense) / max(np.linalg.norm(dense), 1e-300))
    return report(3, worst < 1e-10, f"max relative error {worst:.2e} over 100 pairs (< 1e-10)")


def criterion_4():
    rng = np.random.default_rng(4)
    net = build_network(
        [
            dict(kind="tt", input_modes=(2, 3, 4), output_modes=(2, 2, 4), ranks=(1, 3, 2, 1)),
            dict(kind="dense", in_dim=16, out_dim=12),
            dict(kind="tt", input_modes=(3, 4), output_modes=(2, 4), ranks=(1, 3, 1), activation="identity"),
        ],
        seed=rng,
    )
    x = rng.normal(size=(5, 24))
    t = rng.normal(size=(5, 8))
    cache = forward(net, x)
    grads = backward(net, cache, mse_grad(cache.output, t))
    h = 1e-5
    worst, checked = 0.0, 0
    for p, g in zip(net.parameters(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = mse_loss(net.predict(x), t)
            flat[i] = orig - h
            down = mse_loss(net.predict(x), t)
            flat[i] = orig
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-6))
            checked += 1
    return report(4, worst < 1e-5, f"max relative error {worst:.2e} over {checked} parameters (< 1e-5)")


def criterion_5():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(30):
        rows, cols = (int(v) for v in rng.integers(2, 40, size=2))
        w = rng.normal(size=(rows, cols))
        rank = int(rng.integers(1, min(rows, cols) + 1))
        a, b = svd_compress_layer(Dense(w, np.zeros(cols)), rank)
        resid2 = np.linalg.norm(w - a.weights @ b.weights) ** 2
        eig = np.sort(np.clip(np.linalg.eigvalsh(w.T @ w), 0, None))[::-1]
        worst = max(worst, abs(resid2 - eig[rank:].sum()))
    budgets_ok = True
    net = mlp([40, 32, 24, 8], 0)
    full = count_params(net)
    for budget in range(compressed_count(net, 1), full + 1, 97):
        small = compress_network(net, budget)
        rank = select_rank(net, budget)
        budgets_ok &= count_params(small) == compressed_count(net, rank) <= budget
        budgets_ok &= rank == 32 or compressed_count(net, rank + 1) > budget
    toy = Network([Dense(rng.normal(size=(64, 64)), np.zeros(64))])
    budgets_ok &= select_rank(toy, 1350) == 10 and count_params(compress_network(toy, 1350)) == 1344
    return report(5, worst < 1e-8 and budgets_ok,
                  f"|residual^2 - tail energy| max {worst:.2e} (< 1e-8); budgets exact and maximal: {budgets_ok}")


def criterion_6():
    rng = np.random.default_rng(6)
    w = Waveform(0.1 * rng.normal(size=16000))
    back = istft(stft(w))
    stft_err = float(np.max(np.abs(back.samples[512:-512] - w.samples[512:-512])))

    values = rng.normal(2.0, 3.0, size=(200, 257))
    normed, stats = normalize(FeatureMatrix(values))
    norm_err = float(np.max(np.abs(denormalize(normed, stats).values - values)))

    clean, noise = synth_speech(1.0, 7), synth_noise(1.0, 8, "pink")
    snr_err = 0.0
    for snr in (-5.0, 0.0, 5.0, 10.0, 20.0):
        mixed = mix_at_snr(clean, noise, snr)
        measured = 10 * np.log10(energy(clean.samples) / energy(mixed.samples - clean.samples))
        snr_err = max(snr_err, abs(measured - snr))

    scene = MixtureScene(clean, noise, 5.0, channels=2, delays=(0, 4), seed=1)
    noisy, ref = simulate_multichannel(scene), reference_clean(scene)
    stats2 = fit_stats([noisy], [ref])
    geo = FeatureGeometry(context=2, channels=2, mode="tt")
    ds = utterance_dataset(noisy, ref, stats2, geo)
    raw_dc = analyze(noisy)[1][0].values[:, 0]
    net = Network([Dense(rng.normal(size=(geo.input_dim, 256)) * 0.01, rng.normal(size=256))])
    out = enhance_features(net, analyze(noisy)[1], stats2, geo)
    dc_exact = ds.dc_channel.tobytes() == raw_dc.tobytes() and out.values[:, 0].tobytes() == raw_dc.tobytes()

    ok = stft_err < 1e-8 and norm_err < 1e-10 and snr_err < 1e-9 and dc_exact
    return report(6, ok, f"istft(stft) interior {stft_err:.1e}; normalize round trip {norm_err:.1e}; "
                         f"SNR error {snr_err:.1e} dB; DC passthrough bit-exact: {dc_exact}")


@functools.lru_cache(maxsize=None)
def trade_off_run():
    cfg = ExperimentConfig()
    start = time.perf_counter()
    result = run_experiment(cfg)
    return result, time.perf_counter() - start


def criterion_7():
    result, seconds = trade_off_run()
    print(result.table(), end="")
    verdicts = judge(result)
    for v in verdicts:
        print(f"  {'ok ' if v.passed else 'BAD'} {v.name}: {v.detail}")
    cfg = result.config
    setup_ok = cfg.epochs >= 50 and cfg.batch_size == 32 and cfg.learning_rate == 2e-4 and cfg.context == 2
    setup_ok &= cfg.max_bin == 64 and tuple(cfg.channels) == (1, 2) and cfg.test_snr_db == 5.0
    setup_ok &= cfg.n_hidden == 3 and cfg.hidden == 256
    passed = all(v.passed for v in verdicts) and setup_ok
    within = seconds <= 15 * 60
    return report(7, passed, f"{sum(v.passed for v in verdicts)}/{len(verdicts)} conditions hold; "
                             f"runtime {seconds:.0f}s ({'within' if within else 'over'} 15 min)")


def criterion_8():
    result, _ = trade_off_run()
    with tempfile.TemporaryDirectory() as tmp:
        proc = subprocess.run([sys.executable, "-m", "ttnet", "experiment", "--out", tmp],
                              capture_output=True, text=True)
        table = (Path(tmp) / "table.tsv").read_text() if (Path(tmp) / "table.tsv").exists() else ""
        rerun = json.loads((Path(tmp) / "result.json").read_text()) if table else {"rows": []}
    same_table = table == result.table()
    first = [(r.model, r.channels, r.losses) for r in result.rows]
    second = [(r["model"], r["channels"], r["losses"]) for r in rerun["rows"]]
    same_losses = first == second and all(
        np.array(a, dtype=np.float64).tobytes() == np.array(b, dtype=np.float64).tobytes()
        for (_, _, a), (_, _, b) in zip(first, second)
    )
    if proc.returncode not in (0, 1):
        print(proc.stderr)
    return report(8, same_table and same_losses,
                  f"fresh-process rerun: metric table identical {same_table}, loss traces bit-identical {same_losses}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8]


@pytest.mark.parametrize("check", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 9)])
def test_criterion(check, capsys):
    with capsys.disabled():
        print()
        passed, detail = check()
    assert passed, detail


if __name__ == "__main__":
    results = [check()[0] for check in CRITERIA]
    sys.exit(0 if all(results) else 1)
