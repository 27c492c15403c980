"""One PASS/FAIL line per acceptance criterion; the desk-scale run takes ~15 minutes."""
import json
import math
import os
import time
import zlib
from pathlib import Path

import numpy as np
import pytest

from edd_har import distill as DS
from edd_har import models as M
from edd_har import training as T
from edd_har.adversarial import FgsmConfig, fgsm
from edd_har.config import load_config
from edd_har.data import UnlabeledDataset, load_cache
from edd_har.metrics import auc_roc, quantile_accuracy
from edd_har.models import load_checkpoint
from edd_har.numerics import Tensor, digamma, lgamma
from edd_har.pipeline import MODEL_NAMES as MODELS
from edd_har.pipeline import STAGES, _load_members, arch_of, make_context, run_stage
from edd_har.predictors import DirichletPredictor, EnsemblePredictor, SinglePredictor
from edd_har.uncertainty import dirichlet_uncertainty, ensemble_uncertainty, entropy

from gradcheck import PRIMITIVE_CASES, gradcheck
from test_distill import reference_log_density

DESK_INI = Path(__file__).resolve().parent.parent / "configs" / "desk.ini"
STAGE_LIMIT_S = 600.0


@pytest.fixture
def verdict(capsys):
    def emit(name, checks):
        ok = all(passed for _, passed in checks)
        detail = "; ".join(f"{label}{'' if passed else ' [FAILED]'}" for label, passed in checks)
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok
    return emit


def test_criterion_1_numerics(verdict):
    start = time.perf_counter()
    worst = {}
    for name, (fn, make) in PRIMITIVE_CASES.items():
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        worst[name] = max(gradcheck(fn, make(rng), rng) for _ in range(20))
    gamma = 0.5772156649015329
    id_err = max(abs(digamma(1.0) + gamma), abs(lgamma(4.0) - math.log(6)),
                 max(abs(digamma(x + 1) - digamma(x) - 1 / x) for x in (0.3, 1.0, 2.5, 10.0, 77.0)))
    elapsed = time.perf_counter() - start
    assert verdict("criterion 1 (numerics)", [
        (f"{len(worst)} primitives x 20 cases, worst rel err {max(worst.values()):.1e} < 1e-4",
         max(worst.values()) < 1e-4),
        (f"special-function identities err {id_err:.1e} <= 1e-9", id_err <= 1e-9),
        (f"runtime {elapsed:.1f}s < 60s", elapsed < 60),
    ])


def test_criterion_2_dirichlet_math(verdict):
    flat = abs(DS.dirichlet_nll(Tensor([[1.0, 1.0]]), np.array([[[0.3, 0.7]]])).item())
    sym = abs(DS.dirichlet_nll(Tensor([[2.0, 2.0]]), np.array([[[0.5, 0.5]]])).item() + math.log(1.5))
    rng = np.random.default_rng(2024)
    oracle = 0.0
    for _ in range(100):
        k = rng.integers(2, 7)
        alpha = np.exp(rng.uniform(-2, 4, size=k))
        pi = np.maximum(rng.dirichlet(np.ones(k) * 2), 1e-5)
        pi /= pi.sum()
        ref = reference_log_density(alpha, pi)
        got = -DS.dirichlet_nll(Tensor(alpha[None]), pi[None, None]).item()
        oracle = max(oracle, abs(got - ref) / max(1.0, abs(ref)))
    alpha = np.array([2.0, 3.0, 5.0])
    h = entropy(np.random.default_rng(7).dirichlet(alpha, size=1_000_000))
    mc, se = h.mean(), h.std(ddof=1) / 1000.0
    closed = float(dirichlet_uncertainty(alpha).aleatoric)
    assert verdict("criterion 2 (Dirichlet math)", [
        (f"flat NLL {flat:.1e}", flat <= 1e-9),
        (f"symmetric closed form err {sym:.1e}", sym <= 1e-9),
        (f"100-case density oracle worst {oracle:.1e}", oracle <= 1e-9),
        (f"aleatoric {closed:.5f} vs MC {mc:.5f} ({abs(closed - mc) / se:.2f} SE)", abs(closed - mc) < 3 * se),
    ])


def test_criterion_3_uncertainty_invariants(verdict):
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.full(4, 0.3), size=(10_000, 5))
    ue = ensemble_uncertainty(probs)
    alpha = np.exp(rng.uniform(-3, 5, size=(10_000, 4)))
    ud = dirichlet_uncertainty(alpha)
    additive = bool(np.all(ue.total - ue.aleatoric - ue.epistemic == 0.0)
                    and np.all(ud.total - ud.aleatoric - ud.epistemic == 0.0))
    hot = ensemble_uncertainty(np.array([[1.0, 0.0], [0.0, 1.0]]))
    same = ensemble_uncertainty(np.tile([[0.2, 0.3, 0.5]], (4, 1)))
    assert verdict("criterion 3 (uncertainty invariants)", [
        ("additivity exact", additive),
        (f"min epistemic ensemble {ue.epistemic.min():.1e}, Dirichlet {ud.epistemic.min():.1e}",
         ue.epistemic.min() >= -1e-9 and ud.epistemic.min() >= -1e-9),
        ("disagreeing one-hots give ln 2", abs(float(hot.epistemic) - math.log(2)) <= 1e-12),
        ("identical members give 0", abs(float(same.epistemic)) <= 1e-12),
    ])


def test_criterion_4_algorithm_mechanics(verdict):
    temp_cases = [((10, 0.5, 10), 0, 10.0), ((10, 0.5, 10), 6, 7.0), ((10, 0.5, 10), 30, 1.0),
                  ((10, 0.25, 10), 35, 1.25), ((12, 1.0, 5), 3, 5.0), ((4, 0.0, 10), 100, 4.0)]
    depth_cases = [((0.1, 4), 0, 0), ((0.1, 4), 9, 0), ((0.1, 4), 10, 1), ((0.1, 4), 25, 2),
                   ((0.1, 4), 1000, 4), ((0.05, 4), 20, 1), ((0.29, 50), 100, 29)]
    temps = all(DS.temperature_at(DS.AnnealSchedule(*p), e) == want for p, e, want in temp_cases)
    depths = all(DS.combo_depth_at(DS.ComboConfig(0.5, n, v), e) == want for (v, n), e, want in depth_cases)
    x0, x1, x2 = np.array([1.0, 4.0]), np.array([-2.0, 0.5]), np.array([3.0, 3.0])
    combo = np.max(np.abs(DS.weighted_combo([x0, x1, x2], 0.5) - (x0 + 0.5 * x1 + 0.25 * x2) / 1.75))
    rng = np.random.default_rng(0)
    d_u = UnlabeledDataset(rng.standard_normal((37, 6, 32)), np.zeros(37))
    size = len(DS.build_augmented(d_u, 0))
    pool = rng.standard_normal((40, 6, 32))
    depth0 = DS.combo_depth_at(DS.ComboConfig(), 0)
    _, mixed = DS._combo_batch(pool, np.arange(40), depth0, 0.5, rng)
    assert verdict("criterion 4 (schedules and combos)", [
        (f"{len(temp_cases)} temperature cases", temps),
        (f"{len(depth_cases)} combo-depth cases", depths),
        (f"combo hand vectors err {combo:.1e}", combo <= 1e-12),
        (f"|D_A| = {size} = 9 x 37", size == 9 * 37),
        (f"epoch-0 depth {depth0}, mixed rows {int(mixed.sum())}", depth0 == 0 and not mixed.any()),
    ])


# --- desk-scale end-to-end --------------------------------------------------------
# Comparisons use means over the configured seeds: one trained network is a
# noisy draw (single-model accuracy spans several points across seeds).

@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    cfg = load_config(DESK_INI)
    # EDD_HAR_ACCEPT_RUN_DIR lets a finished run be re-checked without retraining
    run_dir = os.environ.get("EDD_HAR_ACCEPT_RUN_DIR") or tmp_path_factory.mktemp("desk")
    ctx = make_context(cfg, run_dir)
    timings = {}
    for stage in STAGES:
        start = time.perf_counter()
        run_stage(ctx, stage, cfg.eval.seeds)
        timings[stage] = time.perf_counter() - start
    return ctx, timings


def _seed_mean(ctx, model, eps, key):
    vals = []
    for seed in ctx.cfg.eval.seeds:
        res = json.loads((ctx.seed_dir(seed) / "evaluate" / "metrics.json").read_text())["results"]
        vals.append(res[model][repr(float(eps))][key])
    return None if any(v is None for v in vals) else float(np.mean(vals))


def _kl(p, alpha):
    mu = alpha / alpha.sum(axis=1, keepdims=True)
    return float(np.mean(np.sum(p * (np.log(np.maximum(p, 1e-300)) - np.log(mu)), axis=1)))


def _degenerate_kl(ctx, seed):
    """Distil a single classifier; KL(member || Dirichlet mean) on windows the student never saw."""
    splits, _ = load_cache(ctx.seed_dir(seed) / "data.cache")
    train, val = splits["train"], splits["val"]
    perm = np.random.default_rng(seed).permutation(len(train))
    held, fit = train.subset(np.sort(perm[:300])), train.subset(np.sort(perm[300:]))
    _, teacher = _load_members(ctx, seed)
    base, _ = load_checkpoint(ctx.seed_dir(seed) / "pretext" / "baseline.ckpt")
    dc = ctx.cfg.distill
    student, _ = DS.distill([teacher], fit.unlabeled(), base, DS.AnnealSchedule(dc.t0, dc.temperature_rate, dc.t_max),
                            DS.ComboConfig(), DS.DistillConfig(epochs=dc.epochs, steps_per_epoch=dc.steps_per_epoch,
                                                               use_transforms=False, use_combos=False, seed=seed),
                            arch_of(ctx.cfg))
    out = {}
    for name, d in (("held-out windows", held), ("held-out participants", val)):
        p = T.ensemble_predict([teacher], d.windows)[:, 0]
        out[name] = _kl(p, M.forward_dirichlet(student, d.windows))
    return out


def test_criterion_5_desk_end_to_end(desk_run, verdict):
    ctx, timings = desk_run
    acc = {m: _seed_mean(ctx, m, 0.0, "accuracy") for m in MODELS}
    auc = {m: _seed_mean(ctx, m, 0.0, "auc_roc") for m in MODELS}
    start = time.perf_counter()
    kl = _degenerate_kl(ctx, ctx.cfg.eval.seeds[0])
    kl_time = time.perf_counter() - start
    slowest = max(timings, key=timings.get)
    n = len(ctx.cfg.eval.seeds)
    assert verdict(f"criterion 5 (desk end-to-end, means over {n} seeds)", [
        (f"slowest stage {slowest} {timings[slowest]:.0f}s, degenerate run {kl_time:.0f}s <= 600s",
         max(timings.values()) <= STAGE_LIMIT_S and kl_time <= STAGE_LIMIT_S),
        (f"accuracy edd {acc['edd']:.3f} vs ensemble {acc['ensemble']:.3f} (within 0.03)",
         abs(acc["edd"] - acc["ensemble"]) <= 0.03),
        (f"accuracy edd {acc['edd']:.3f} > single {acc['single']:.3f}", acc["edd"] > acc["single"]),
        (f"AUC edd {auc['edd']:.3f} >= single {auc['single']:.3f}",
         auc["edd"] is not None and auc["single"] is not None and auc["edd"] >= auc["single"]),
        (f"degenerate KL {kl['held-out windows']:.4f} < 0.05 (held-out participants: "
         f"{kl['held-out participants']:.3f}, informational)", kl["held-out windows"] < 0.05),
    ])


def test_criterion_6_adversarial(desk_run, verdict):
    ctx, _ = desk_run
    identity, bound = True, 0.0
    for seed in ctx.cfg.eval.seeds:
        splits, _ = load_cache(ctx.seed_dir(seed) / "data.cache")
        val = splits["val"]
        members, baseline = _load_members(ctx, seed)
        edd, _ = load_checkpoint(ctx.seed_dir(seed) / "distill" / "model.ckpt")
        for model in (SinglePredictor(baseline), EnsemblePredictor(members), DirichletPredictor(edd)):
            identity &= fgsm(model, val.windows, val.labels, FgsmConfig(0.0)).tobytes() == val.windows.tobytes()
            adv = fgsm(model, val.windows, val.labels, FgsmConfig(0.1))
            bound = max(bound, float(np.max(np.abs(adv - val.windows))))
    # the evaluate stage attacked each model with eps = 0.1 against its own point prediction
    acc = {m: _seed_mean(ctx, m, 0.1, "accuracy") for m in MODELS}
    assert verdict("criterion 6 (adversarial)", [
        ("eps=0 bitwise identity for all models and seeds", identity),
        (f"max |x_adv - x| = {bound:.12f} <= 0.1", bound <= 0.1 + 1e-12),
        (f"eps=0.1 accuracy edd {acc['edd']:.3f} > single {acc['single']:.3f} "
         f"(ensemble {acc['ensemble']:.3f})", acc["edd"] > acc["single"]),
    ])


def test_criterion_7_metrics(verdict):
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(100):
        n = int(rng.integers(2, 501))
        s = rng.standard_normal(n)
        if trial % 2:
            s = np.round(s, 1)
        c = rng.random(n) < rng.uniform(0.1, 0.9)
        c[0], c[1] = True, False
        pos, neg = s[~c], s[c]
        brute = sum(np.sum(a > neg) + 0.5 * np.sum(a == neg) for a in pos) / (len(pos) * len(neg))
        worst = max(worst, abs(auc_roc(s, c) - brute))
    c = rng.random(257) < 0.7
    full = quantile_accuracy(rng.random(257), c, (1.0,))[1.0]
    const = quantile_accuracy(np.full(257, 0.3), c, (0.1, 0.25, 0.5, 0.75, 1.0))
    assert verdict("criterion 7 (metrics)", [
        (f"AUC vs brute force worst {worst:.1e} on 100 instances", worst <= 1e-12),
        ("100% quantile equals overall accuracy", full == c.mean()),
        ("constant scores: every quantile equals overall accuracy",
         all(v == c.mean() for v in const.values())),
    ])
