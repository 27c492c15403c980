"""Resumable pipeline stages over a run directory.

Layout under ``run_dir``::

    manifest.json                 stage -> config hash + artifacts
    seed_<s>/data.cache           normalised train / val / labeled splits
    seed_<s>/pretext/*.ckpt       pretext networks (members and baseline)
    seed_<s>/ensemble/*.ckpt      fine-tuned classifiers
    seed_<s>/distill/model.ckpt   Dirichlet prior network (+ distill_log.csv)
    seed_<s>/evaluate/metrics.json
    report.json, report.csv, report_meta.json
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as D
from .adversarial import FgsmConfig, fgsm
from .binio import atomic_write_text
from .config import RunConfig
from .distill import AnnealSchedule, ComboConfig, DistillConfig, distill
from .metrics import DegenerateMetric, accuracy, auc_roc, quantile_accuracy
from .models import ArchConfig, load_checkpoint, save_checkpoint
from .predictors import DirichletPredictor, EnsemblePredictor, SinglePredictor
from .training import EnsembleConfig, MemberResult, TrainConfig, member_pretext, member_supervised
from .transforms import TransformParams

log = logging.getLogger(__name__)

STAGES = ("prepare", "pretext", "ensemble", "distill", "evaluate", "report")
MODEL_NAMES = ("single", "ensemble", "edd")

# config sections each stage depends on, cumulative along the pipeline
_STAGE_SECTIONS = {
    "prepare": ("data", "synthetic"),
    "pretext": ("data", "synthetic", "models", "transforms", "training"),
    "ensemble": ("data", "synthetic", "models", "transforms", "training"),
    "distill": ("data", "synthetic", "models", "transforms", "training", "distill"),
}


class PrerequisiteMissing(RuntimeError):
    def __init__(self, stage: str, needed: str, seed: int | None = None):
        self.stage, self.needed, self.seed = stage, needed, seed
        where = "" if seed is None else f" for seed {seed}"
        super().__init__(f"{stage}: prerequisite stage '{needed}' has not completed{where}; "
                         f"run `{needed}` first")


def derived_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def stage_hash(cfg: RunConfig, stage: str, seed: int) -> str:
    if stage == "evaluate":
        base = cfg.section_hash(*_STAGE_SECTIONS["distill"])
        extra = json.dumps([list(cfg.eval.eps), list(cfg.eval.quantiles)])
        return f"{base}-{extra}-{seed}"
    return f"{cfg.section_hash(*_STAGE_SECTIONS[stage])}-{seed}"


def arch_of(cfg: RunConfig) -> ArchConfig:
    m = cfg.models
    return ArchConfig(tuple(m.filters), tuple(m.kernels), m.dropout, m.head_units)


def transform_params_of(cfg: RunConfig) -> TransformParams:
    t = cfg.transforms
    return TransformParams(t.noise_sigma, t.scale_low, t.scale_high, t.permutation_segments,
                           t.warp_knots, t.warp_strength)


# --- manifest --------------------------------------------------------------

class Manifest:
    def __init__(self, run_dir: Path):
        self.path = Path(run_dir) / "manifest.json"
        self.entries: dict = json.loads(self.path.read_text())["entries"] if self.path.exists() else {}

    @staticmethod
    def key(stage: str, seed: int | None) -> str:
        return stage if seed is None else f"seed_{seed}/{stage}"

    def done(self, stage: str, seed: int | None, h: str) -> bool:
        e = self.entries.get(self.key(stage, seed))
        return bool(e) and e["config_hash"] == h and all(
            (self.path.parent / a).exists() for a in e["artifacts"])

    def completed(self, stage: str, seed: int | None) -> bool:
        return self.key(stage, seed) in self.entries

    def record(self, stage: str, seed: int | None, h: str, artifacts: list[Path]) -> None:
        root = self.path.parent
        self.entries[self.key(stage, seed)] = {
            "config_hash": h,
            "artifacts": sorted(str(Path(a).relative_to(root)) for a in artifacts),
            "completed_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        atomic_write_text(self.path, json.dumps({"entries": self.entries}, indent=2, sort_keys=True))


@dataclass
class Context:
    cfg: RunConfig
    run_dir: Path
    manifest: Manifest

    def seed_dir(self, seed: int) -> Path:
        return self.run_dir / f"seed_{seed}"


def _require(ctx: Context, stage: str, needed: str, seed: int) -> None:
    h = stage_hash(ctx.cfg, needed, seed)
    if not ctx.manifest.done(needed, seed, h):
        raise PrerequisiteMissing(stage, needed, seed)


# --- stages ----------------------------------------------------------------

def prepare(ctx: Context, seed: int) -> bool:
    """Load, split by participant, normalise with training statistics, draw the labeled subset."""
    h = stage_hash(ctx.cfg, "prepare", seed)
    if ctx.manifest.done("prepare", seed, h):
        return False
    dc = ctx.cfg.data
    options = dict(ctx.cfg.synthetic.__dict__) if dc.dataset == "synthetic" else {}
    src = D.DatasetSource(dc.dataset, Path(dc.root) if dc.root else None, dc.length, dc.overlap, options)
    ds, meta = D.load_dataset(src)
    train, val = D.train_val_split(ds, meta, seed)
    train, (val,), stats = D.normalize(train, val)
    labeled = D.sample_labeled_subset(train, dc.per_class, seed)
    meta = {**meta, "normalization": {"acc_scale": stats.acc_scale, "gyro_scale": stats.gyro_scale},
            "seed": seed, "sizes": {"train": len(train), "val": len(val), "labeled": len(labeled)}}
    path = ctx.seed_dir(seed) / "data.cache"
    D.save_cache(path, {"train": train, "val": val, "labeled": labeled}, meta)
    ctx.manifest.record("prepare", seed, h, [path])
    log.info("seed %d: prepared %s (%d train, %d val, %d labeled)", seed, dc.dataset,
             len(train), len(val), len(labeled))
    return True


def _splits(ctx: Context, stage: str, seed: int):
    _require(ctx, stage, "prepare", seed)
    splits, meta = D.load_cache(ctx.seed_dir(seed) / "data.cache")
    return splits, meta


def _member_plan(ctx: Context, seed: int) -> list[tuple[str, int, float]]:
    """(name, seed, width) for every ensemble member plus the width-1 baseline."""
    t = ctx.cfg.training
    ecfg = EnsembleConfig(t.members, t.width_low, t.width_high, seed=seed)
    plan = [(f"member_{i:03d}", s, w) for i, (s, w) in enumerate(zip(ecfg.seeds, ecfg.widths()))]
    plan.append(("baseline", derived_seed(seed, 1), 1.0))
    return plan


def _train_cfg(ctx: Context, epochs: int, seed: int, patience: int = 5) -> TrainConfig:
    t = ctx.cfg.training
    return TrainConfig(epochs=epochs, batch_size=t.batch_size, lr=t.lr, seed=seed, patience=patience)


def _cached_network(path: Path, h: str):
    if path.exists():
        net, meta = load_checkpoint(path)
        if meta["extra"].get("config_hash") == h:
            return net
    return None


def pretext(ctx: Context, seed: int) -> bool:
    h = stage_hash(ctx.cfg, "pretext", seed)
    if ctx.manifest.done("pretext", seed, h):
        return False
    splits, _ = _splits(ctx, "pretext", seed)
    d_u = splits["train"].unlabeled()
    t = ctx.cfg.training
    out, paths = ctx.seed_dir(seed) / "pretext", []
    for i, (name, mseed, width) in enumerate(_member_plan(ctx, seed)):
        path = out / f"{name}.ckpt"
        if _cached_network(path, h) is None:
            cfg = _train_cfg(ctx, t.pretext_epochs, mseed, t.pretext_patience)
            res = member_pretext(i, mseed, width, d_u, cfg, arch_of(ctx.cfg), transform_params_of(ctx.cfg))
            hist = res.history["pretext"]
            save_checkpoint(path, res.pretext, {"config_hash": h, "seed": mseed, "width": width,
                                                "val_acc": hist["val_acc"][-1] if hist["val_acc"] else None})
            log.info("seed %d: pretext %s done", seed, name)
        paths.append(path)
    ctx.manifest.record("pretext", seed, h, paths)
    return True


def ensemble(ctx: Context, seed: int) -> bool:
    h = stage_hash(ctx.cfg, "ensemble", seed)
    if ctx.manifest.done("ensemble", seed, h):
        return False
    _require(ctx, "ensemble", "pretext", seed)
    splits, _ = _splits(ctx, "ensemble", seed)
    t = ctx.cfg.training
    out, paths = ctx.seed_dir(seed) / "ensemble", []
    for i, (name, mseed, width) in enumerate(_member_plan(ctx, seed)):
        path = out / f"{name}.ckpt"
        if _cached_network(path, h) is None:
            base, _ = load_checkpoint(ctx.seed_dir(seed) / "pretext" / f"{name}.ckpt")
            res = member_supervised(MemberResult(i, mseed, width, base), splits["labeled"], t.n_frozen,
                                    _train_cfg(ctx, t.supervised_epochs, mseed))
            save_checkpoint(path, res.classifier, {"config_hash": h, "seed": mseed, "width": width})
            log.info("seed %d: classifier %s done", seed, name)
        paths.append(path)
    plan = _member_plan(ctx, seed)
    index = out / "members.json"
    atomic_write_text(index, json.dumps({
        "config_hash": h, "members": ctx.cfg.training.members,
        "seeds": [s for _, s, _ in plan[:-1]], "widths": [w for _, _, w in plan[:-1]],
        "baseline": {"seed": plan[-1][1], "width": plan[-1][2]},
    }, indent=2, sort_keys=True))
    ctx.manifest.record("ensemble", seed, h, [*paths, index])
    return True


def _load_members(ctx: Context, seed: int):
    d = ctx.seed_dir(seed) / "ensemble"
    names = [n for n, _, _ in _member_plan(ctx, seed)]
    members = [load_checkpoint(d / f"{n}.ckpt")[0] for n in names if n != "baseline"]
    baseline = load_checkpoint(d / "baseline.ckpt")[0]
    return members, baseline


def distill_stage(ctx: Context, seed: int) -> bool:
    h = stage_hash(ctx.cfg, "distill", seed)
    if ctx.manifest.done("distill", seed, h):
        return False
    _require(ctx, "distill", "ensemble", seed)
    splits, _ = _splits(ctx, "distill", seed)
    members, _ = _load_members(ctx, seed)
    dc = ctx.cfg.distill
    pretrained = None
    if dc.use_pretrained:
        # the baseline's pretext base: same width as the distilled model
        pretrained, _ = load_checkpoint(ctx.seed_dir(seed) / "pretext" / "baseline.ckpt")
    cfg = DistillConfig(epochs=dc.epochs, batch_size=dc.batch_size, lr=dc.lr,
                        steps_per_epoch=dc.steps_per_epoch, n_frozen=dc.n_frozen,
                        use_pretrained=dc.use_pretrained, use_transforms=dc.use_transforms,
                        use_combos=dc.use_combos, width=1.0, seed=derived_seed(seed, 2))
    out = ctx.seed_dir(seed) / "distill"
    log_path = out / "distill_log.csv"
    net, hist = distill(members, splits["train"].unlabeled(), pretrained,
                        AnnealSchedule(dc.t0, dc.temperature_rate, dc.t_max),
                        ComboConfig(dc.combo_weight, dc.max_combos, dc.combo_rate),
                        cfg, arch_of(ctx.cfg), transform_params_of(ctx.cfg), log_path=log_path)
    path = out / "model.ckpt"
    save_checkpoint(path, net, {"config_hash": h, "augmented_size": hist["augmented_size"],
                                "final_nll": hist["mean_nll"][-1]})
    ctx.manifest.record("distill", seed, h, [path, log_path])
    return True


def evaluate_models(predictors: dict, val: D.LabeledDataset, eps_list, quantiles) -> dict:
    """Per model and epsilon: accuracy, quantile accuracy, AUC-ROC and mean uncertainties."""
    results = {}
    for name, model in predictors.items():
        per_eps = {}
        for eps in eps_list:
            x = fgsm(model, val.windows, val.labels, FgsmConfig(float(eps)))
            out = model.output(x)
            point = model.point(out)
            correct = point.argmax(axis=1) == val.labels
            u = model.uncertainty(out)
            try:
                auc = auc_roc(u.total, correct)
            except DegenerateMetric:
                auc = None
            per_eps[_eps_key(eps)] = {
                "accuracy": accuracy(point, val.labels),
                "quantile_accuracy": {_q_key(q): a for q, a in
                                      quantile_accuracy(u.total, correct, quantiles).items()},
                "auc_roc": auc,
                "mean_uncertainty": {k: float(np.mean(v)) for k, v in u.as_dict().items()},
            }
        results[name] = per_eps
    return results


def _eps_key(eps: float) -> str:
    return repr(float(eps))


def _q_key(q: float) -> str:
    return repr(float(q))


def evaluate(ctx: Context, seed: int) -> bool:
    h = stage_hash(ctx.cfg, "evaluate", seed)
    if ctx.manifest.done("evaluate", seed, h):
        return False
    _require(ctx, "evaluate", "distill", seed)
    splits, meta = _splits(ctx, "evaluate", seed)
    members, baseline = _load_members(ctx, seed)
    edd, _ = load_checkpoint(ctx.seed_dir(seed) / "distill" / "model.ckpt")
    predictors = {"single": SinglePredictor(baseline), "ensemble": EnsemblePredictor(members),
                  "edd": DirichletPredictor(edd)}
    results = evaluate_models(predictors, splits["val"], ctx.cfg.eval.eps, ctx.cfg.eval.quantiles)
    path = ctx.seed_dir(seed) / "evaluate" / "metrics.json"
    atomic_write_text(path, json.dumps({"seed": seed, "val_size": len(splits["val"]),
                                        "results": results}, indent=2, sort_keys=True))
    ctx.manifest.record("evaluate", seed, h, [path])
    return True


# --- report ----------------------------------------------------------------

def mean_std(values: list[float | None]) -> dict:
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "std": None, "n": 0}
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
    return {"mean": float(np.mean(vals)), "std": std, "n": len(vals)}


def aggregate(per_seed: list[dict]) -> dict:
    """Means and sample standard deviations across seeds, per model and epsilon."""
    models = per_seed[0]["results"]
    out = {}
    for name, per_eps in models.items():
        out[name] = {}
        for eps, rec in per_eps.items():
            runs = [s["results"][name][eps] for s in per_seed]
            out[name][eps] = {
                "accuracy": mean_std([r["accuracy"] for r in runs]),
                "auc_roc": mean_std([r["auc_roc"] for r in runs]),
                "quantile_accuracy": {q: mean_std([r["quantile_accuracy"][q] for r in runs])
                                      for q in rec["quantile_accuracy"]},
                "mean_uncertainty": {k: mean_std([r["mean_uncertainty"][k] for r in runs])
                                     for k in rec["mean_uncertainty"]},
            }
    return out


def report_csv(agg: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "epsilon", "quantile", "accuracy_mean", "accuracy_std",
                "auc_roc_mean", "auc_roc_std", "n_seeds"])
    fmt = lambda v: "" if v is None else repr(v)  # noqa: E731
    for name, per_eps in agg.items():
        for eps, rec in per_eps.items():
            for q, acc in rec["quantile_accuracy"].items():
                w.writerow([name, eps, q, fmt(acc["mean"]), fmt(acc["std"]),
                            fmt(rec["auc_roc"]["mean"]), fmt(rec["auc_roc"]["std"]), acc["n"]])
    return buf.getvalue()


def report(ctx: Context, seeds) -> bool:
    per_seed = []
    for seed in seeds:
        _require(ctx, "report", "evaluate", seed)
        per_seed.append(json.loads((ctx.seed_dir(seed) / "evaluate" / "metrics.json").read_text()))
    h = "-".join(stage_hash(ctx.cfg, "evaluate", s) for s in seeds)
    if ctx.manifest.done("report", None, h):
        return False
    meta = {}
    splits, _ = D.load_cache(ctx.seed_dir(seeds[0]) / "data.cache")
    doc = {
        "run": {
            "seeds": list(seeds),
            "config_hash": ctx.cfg.section_hash(),
            "dataset": {"name": ctx.cfg.data.dataset,
                        "classes": list(splits["val"].class_names),
                        "val_size": [s["val_size"] for s in per_seed]},
            "members": ctx.cfg.training.members,
            "data_subsampling_reseeded": True,
        },
        "models": aggregate(per_seed),
        "per_seed": {str(s["seed"]): s["results"] for s in per_seed},
    }
    meta["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    paths = [ctx.run_dir / "report.json", ctx.run_dir / "report.csv", ctx.run_dir / "report_meta.json"]
    atomic_write_text(paths[0], json.dumps(doc, indent=2, sort_keys=True))
    atomic_write_text(paths[1], report_csv(doc["models"]))
    atomic_write_text(paths[2], json.dumps(meta, indent=2, sort_keys=True))
    ctx.manifest.record("report", None, h, paths)
    return True


PER_SEED_STAGES = {"prepare": prepare, "pretext": pretext, "ensemble": ensemble,
                   "distill": distill_stage, "evaluate": evaluate}


def run_stage(ctx: Context, stage: str, seeds) -> list[bool]:
    """Run ``stage`` for every seed; returns, per seed, whether work was done."""
    if stage == "report":
        return [report(ctx, list(seeds))]
    fn = PER_SEED_STAGES[stage]
    return [fn(ctx, s) for s in seeds]


def make_context(cfg: RunConfig, run_dir) -> Context:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    return Context(cfg, run_dir, Manifest(run_dir))

