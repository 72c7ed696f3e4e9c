"""Acceptance suite.

Oracle checks (1-4) are fast and deterministic.  The benchmark checks
(5-9) train real models: about 15 minutes for the synthetic runs and
80 more for the calorimeter proxy on a single CPU core.  Every criterion
records one PASS/FAIL line that is printed in the terminal summary.

Run standalone with ``python tests/test_acceptance.py``.
"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

from seldiv import config
from seldiv.cli import main as cli_main
from seldiv.datasets import diverse_mask, make_calo_proxy, make_synthetic_2d
from seldiv.diversity import build_table, group_raw_diversity, raw_diversity
from seldiv.evaluation import evaluate, mean_class_variance, wasserstein_1d, wasserstein_1d_cdf
from seldiv.losses import LossConfig, adversarial_losses, sdi_regularizer, total_generator_loss
from seldiv.networks import DiscriminatorSpec, GeneratorSpec, discriminator_forward, generator_forward, init_params
from seldiv.training import TrainingConfig, sample_generator, train

RESULTS = []

SEEDS = (0, 1, 2)
CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def preset(name: str, seed: int) -> TrainingConfig:
    """Training settings from a shipped experiment file, with the run seed."""
    cfg = config.load_config(str(CONFIGS / f"{name}.json"), {"training": {"seed": seed}})
    return config.training_config(cfg)


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")


# ---------------------------------------------------------------- oracles

def brute_diversity(group):
    flat = [np.asarray(s, float).ravel().tolist() for s in group]
    n, total = len(flat), 0.0
    for j in range(len(flat[0])):
        mu = sum(f[j] for f in flat) / n
        total += math.sqrt(sum((f[j] - mu) ** 2 for f in flat) / n)
    return total


def test_c1_diversity_oracle():
    rng = np.random.default_rng(11)
    worst = 0.0
    exact = True
    for _ in range(100):
        n = int(rng.integers(1, 9))
        shape = tuple(int(s) for s in rng.integers(1, 6, size=rng.integers(1, 3)))
        group = rng.normal(size=(n,) + shape) * rng.uniform(0.1, 20)
        worst = max(worst, abs(raw_diversity(group) - brute_diversity(group)))
        # dyadic data, power-of-two scales and integer shifts are exact in binary
        ints = rng.integers(-64, 64, size=(n,) + shape).astype(float) / 8
        base = raw_diversity(ints)
        exact &= raw_diversity(ints * 4.0) == 4.0 * base
        exact &= raw_diversity(ints * -0.5) == 0.5 * base
        exact &= raw_diversity(ints + float(rng.integers(-100, 100))) == base
    ok = worst <= 1e-9 and bool(exact)
    record(1, ok, f"max |raw - oracle| = {worst:.2e} (tol 1e-9); scale/translation exact: {bool(exact)}")
    assert ok


def test_c2_wasserstein_oracle():
    rng = np.random.default_rng(12)
    axioms = True
    worst = 0.0
    for _ in range(200):
        a, b, c = (rng.integers(-500, 500, size=rng.integers(1, 25)).astype(float) for _ in range(3))
        ab, ba = wasserstein_1d(a, b), wasserstein_1d(b, a)
        axioms &= ab == ba and ab >= 0 and wasserstein_1d(a, a) == 0.0
        axioms &= wasserstein_1d(a, c) <= ab + wasserstein_1d(b, c) + 1e-9
        delta = float(rng.integers(-1000, 1000))
        axioms &= wasserstein_1d(a + delta, a) == abs(delta)
        x, y = rng.normal(size=(2, int(rng.integers(1, 60)))) * rng.uniform(0.1, 10)
        worst = max(worst, abs(wasserstein_1d(x, y) - wasserstein_1d_cdf(x, y)))
    ok = bool(axioms) and worst <= 1e-9
    record(2, ok, f"axioms/translation on 200 triples: {bool(axioms)}; sort vs CDF max diff {worst:.2e} (tol 1e-9)")
    assert ok


def _composite(g_spec, d_spec, gp, dp, z1, z2, c, f, cfg):
    x = generator_forward(g_spec, gp, torch.cat([z1, z2]), torch.cat([c, c]))
    logits, feats = discriminator_forward(d_spec, dp, x, torch.cat([c, c]))
    g_adv = adversarial_losses(logits, logits)[1]
    b = len(z1)
    reg = sdi_regularizer(f, feats[:b], feats[b:], z1, z2, cfg, batched=True)
    return total_generator_loss(g_adv, reg.mean(), cfg)


def test_c3_gradient_checks():
    g_spec = GeneratorSpec(condition_dim=3, latent_dim=3, hidden=(5,))
    d_spec = DiscriminatorSpec(condition_dim=3, hidden=(5,), feature_dim=4)
    gp = init_params(g_spec, seed=0, dtype=torch.float64)
    dp = init_params(d_spec, seed=1, dtype=torch.float64)
    gen = torch.Generator().manual_seed(5)
    z1, z2, c = (torch.randn(6, 3, dtype=torch.float64, generator=gen) for _ in range(3))
    f = torch.rand(6, dtype=torch.float64, generator=gen)
    cfg = LossConfig(lambda_div=0.7)

    params = {k: v.clone().requires_grad_(True) for k, v in gp.items()}
    _composite(g_spec, d_spec, params, dp, z1, z2, c, f, cfg).backward()
    h = 1e-6
    an, fd = [], []
    for name, p in params.items():
        for i in range(p.numel()):
            def at(delta):
                q = {k: v.detach().clone() for k, v in params.items()}
                q[name].view(-1)[i] += delta
                return _composite(g_spec, d_spec, q, dp, z1, z2, c, f, cfg).item()

            fd.append((at(h) - at(-h)) / (2 * h))
            an.append(p.grad.view(-1)[i].item())
    an, fd = np.array(an), np.array(fd)
    rel = np.linalg.norm(an - fd) / max(np.linalg.norm(an), np.linalg.norm(fd))

    # with f_div = 0 the regularizer contributes exactly nothing
    params0 = {k: v.clone().requires_grad_(True) for k, v in gp.items()}
    x = generator_forward(g_spec, params0, torch.cat([z1, z2]), torch.cat([c, c]))
    _, feats = discriminator_forward(d_spec, dp, x, torch.cat([c, c]))
    reg = sdi_regularizer(torch.zeros(6, dtype=torch.float64), feats[:6], feats[6:], z1, z2, cfg, batched=True)
    grads = torch.autograd.grad(reg.mean(), list(params0.values()))
    zero = all(bool((g == 0).all()) for g in grads)

    ok = rel <= 1e-3 and zero
    record(3, ok, f"composite loss FD relative error {rel:.2e} (tol 1e-3); sdi gradient at f_div=0 exactly zero: {zero}")
    assert ok


def test_c4_determinism(tmp_path):
    logs = []
    for run in ("a", "b"):
        root = tmp_path / run
        data = root / "d.bin"
        assert cli_main(["gen-data", "synth2d", "--n-per-cluster", "100", "--seed", "3", "--out", str(data)]) == 0
        assert cli_main(["train", "--data", str(data), "--steps", "300", "--regularizer", "sdi",
                         "--lambda-div", "0.01", "--out", str(root / "t")]) == 0
        assert cli_main(["eval", "--real", str(data), "--checkpoint", str(root / "t" / "final.pt"),
                         "--no-plots", "--out", str(root / "e")]) == 0
        logs.append(((root / "t" / "metrics.jsonl").read_bytes(), (root / "e" / "metrics.tsv").read_bytes()))
    ok = logs[0] == logs[1] and len(logs[0][0].splitlines()) == 300
    record(4, ok, f"two identical runs, metrics logs bitwise identical: {ok}")
    assert ok


# ---------------------------------------------------------------- synthetic benchmark

@pytest.fixture(scope="module")
def synth_data():
    ds = make_synthetic_2d(2000, seed=7)
    return ds, build_table(ds)


def test_c5_real_calibration(synth_data):
    ds, _ = synth_data
    v0, v1 = mean_class_variance(ds, False), mean_class_variance(ds, True)
    ok = abs(v0 - 1) <= 0.15 and abs(v1 - 100) <= 15
    record(5, ok, f"real variance spread0={v0:.3f} (1 +/- 15%), spread1={v1:.2f} (100 +/- 15%)")
    assert ok


@pytest.fixture(scope="module")
def synth_runs(synth_data):
    ds, table = synth_data
    conds = ds.unique_conditions()
    out = {}
    for method in ("none", "ms", "sdi"):
        for seed in SEEDS:
            ckpt, _ = train(ds, table, preset(f"synth2d_{method}", seed))
            gen = sample_generator(ckpt, conds, 2000, seed=100 + seed)
            out[method, seed] = evaluate(ds, gen)
    return out


def _fmt(rep):
    v, w = rep.variance["generated"], rep.wasserstein
    return f"var {v['spread0']:.2f}/{v['spread1']:.2f} W1 {w['spread0']:.2f}/{w['spread1']:.2f}"


def test_c6_sdi_selective(synth_runs):
    wins, parts = 0, []
    for seed in SEEDS:
        rep, base = synth_runs["sdi", seed], synth_runs["none", seed]
        v0, v1 = rep.variance["generated"]["spread0"], rep.variance["generated"]["spread1"]
        ok = (
            v1 / max(v0, 1e-12) >= 10
            and 50 <= v1 <= 250
            and v0 <= 15
            and rep.wasserstein["spread1"] < base.wasserstein["spread1"]
        )
        wins += ok
        parts.append(f"seed {seed} {'ok' if ok else 'x'} ({_fmt(rep)} vs none W1s1 {base.wasserstein['spread1']:.2f})")
    ok = wins >= 2
    record(6, ok, f"sdi {wins}/3 seeds; " + "; ".join(parts))
    assert ok


def test_c7_vanilla_collapses(synth_runs):
    wins, parts = 0, []
    for seed in SEEDS:
        rep = synth_runs["none", seed]
        ok = rep.variance["generated"]["spread1"] <= 20
        wins += ok
        parts.append(f"seed {seed} {'ok' if ok else 'x'} ({_fmt(rep)})")
    ok = wins >= 2
    record(7, ok, f"vanilla var(spread1) <= 20 on {wins}/3 seeds; " + "; ".join(parts))
    assert ok


def test_c8_ms_overdisperses(synth_runs):
    wins, parts = 0, []
    for seed in SEEDS:
        rep = synth_runs["ms", seed]
        ok = rep.variance["generated"]["spread0"] >= 20
        wins += ok
        parts.append(f"seed {seed} {'ok' if ok else 'x'} ({_fmt(rep)})")
    ok = wins >= 2
    record(8, ok, f"ms var(spread0) >= 20 on {wins}/3 seeds; " + "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- calorimeter proxy

def test_c9_calo_ordering():
    real = make_calo_proxy(500, 50, seed=7)
    table = build_table(real)
    threshold = real.manifest["generator_params"]["energy_threshold"]
    real_div = real.subset(np.flatnonzero(diverse_mask(real)))
    conds = real.unique_conditions()
    real_raw = group_raw_diversity(real)
    consistent = [k for k, idx in real.iter_groups() if not diverse_mask(real)[idx[0]]]
    wins, parts = 0, []
    for seed in SEEDS:
        scores = {}
        for method in ("none", "sdi"):
            ckpt, _ = train(real, table, preset(f"calo_{method}", seed))
            gen = sample_generator(ckpt, conds, 50, seed=100 + seed)
            gen_div = gen.subset(np.flatnonzero(diverse_mask(gen, threshold)))
            scores[method] = evaluate(real_div, gen_div).mean_channel_wasserstein
            if method == "sdi":
                gen_raw = group_raw_diversity(gen)
                ratios = np.array([gen_raw[k] / real_raw[k] for k in consistent])
        ok = scores["sdi"] <= scores["none"] and bool(np.all(ratios <= 2.0))
        wins += ok
        parts.append(
            f"seed {seed} {'ok' if ok else 'x'} (diverse-subset W sdi {scores['sdi']:.3f} vs none {scores['none']:.3f}; "
            f"consistent diversity ratio max {ratios.max():.2f} median {np.median(ratios):.2f})"
        )
    ok = wins >= 2
    record(9, ok, f"{wins}/3 seeds; " + "; ".join(parts))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", *sys.argv[1:]]))
