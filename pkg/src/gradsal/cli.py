"""Command-line pipeline: dataset, train, saliency, segment, eval, reproduce.

Every subcommand resolves its parameters from (in increasing priority)
built-in defaults, an optional JSON/TOML config file, then command-line
flags, and writes the resolved values as a JSON snapshot next to its
outputs so any run can be replayed. Exit codes: 0 success, 2 usage or
validation, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import dataset as ds
from . import metrics, models, pngio, segment
from . import saliency as sal
from .rng import stream

ENV_OUTDIR = "GRADSAL_OUTDIR"
SALIENCY_MODELS = ("cnn1", "cnn2", "cnn3", "cnn23")


class CliError(RuntimeError):
    pass


def _load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError as exc:
            raise CliError(
                "TOML config files need Python 3.11+; use JSON here"
            ) from exc
        return tomllib.loads(p.read_text())
    return json.loads(p.read_text())


def _resolve(args: argparse.Namespace, section: str, defaults: dict) -> dict:
    """Merge defaults <- config-file section <- explicit flags."""
    file_cfg = _load_config_file(getattr(args, "config", None)).get(section, {})
    resolved = dict(defaults)
    for key, value in file_cfg.items():
        if key not in defaults:
            raise CliError(f"unknown config key {section}.{key}")
        resolved[key] = value
    for key in defaults:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
    return resolved


def _out_dir(args: argparse.Namespace) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get(ENV_OUTDIR)
    if env:
        return Path(env)
    return Path("out")


def _write_snapshot(out_dir: Path, stage: str, resolved: dict) -> None:
    pngio.ensure_dir(out_dir)
    snap = dict(resolved)
    snap["stage"] = stage
    (out_dir / f"{stage}_config.json").write_text(
        json.dumps(snap, indent=1, sort_keys=True) + "\n"
    )


def _find_manifest(data: str) -> ds.DatasetManifest:
    p = Path(data)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.exists():
        raise CliError(f"manifest not found: {p}")
    return ds.DatasetManifest.load(p)


# ---------------------------------------------------------------- dataset

DATASET_DEFAULTS = {"classes": 3, "train": 1500, "test": 500, "size": 64, "seed": 7}


def cmd_dataset(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "dataset", DATASET_DEFAULTS)
    if not 2 <= cfg["classes"] <= len(ds.SHAPE_NAMES):
        raise SystemExit2(f"--classes must be in [2, {len(ds.SHAPE_NAMES)}]")
    if cfg["train"] < 1 or cfg["test"] < 1:
        raise SystemExit2("--train and --test must be positive")
    out = _out_dir(args) / "dataset"
    gen = ds.GenerationConfig(
        classes=ds.SHAPE_NAMES[:cfg["classes"]],
        image_size=cfg["size"],
        train_count=cfg["train"],
        test_count=cfg["test"],
        seed=cfg["seed"],
    )
    manifest = ds.generate(gen, out)
    _write_snapshot(out, "dataset", cfg)
    print(f"dataset: {len(manifest.samples)} samples "
          f"({cfg['train']} train / {cfg['test']} test), "
          f"{cfg['classes']} classes, size {cfg['size']} -> {out}")
    return 0


# ------------------------------------------------------------------ train

TRAIN_DEFAULTS = {"variant": "all", "epochs": 12, "batch_size": 32,
                  "lr": 0.05, "momentum": 0.9, "seed": 7}


def _train_one(manifest: ds.DatasetManifest, variant: str, cfg: dict,
               out: Path):
    label_space = models.VARIANT_LABEL_SPACE[variant]
    net = models.build_network(manifest.classes, label_space,
                               manifest.image_size, seed=cfg["seed"])
    tc = models.TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                            learning_rate=cfg["lr"], momentum=cfg["momentum"],
                            seed=cfg["seed"])
    history = models.train(net, manifest, variant, tc)
    models.save(net, out / f"{variant}.ckpt")
    (out / f"{variant}_metrics.csv").write_text(models.metrics_csv(history))
    final = history[-1]
    print(f"train {variant}: {len(history)} epochs, "
          f"loss {final.train_loss:.4f}, test accuracy {final.test_accuracy:.4f}")
    return net, history


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "train", TRAIN_DEFAULTS)
    manifest = _find_manifest(args.data)
    out = pngio.ensure_dir(_out_dir(args) / "models")
    variants = models.VARIANTS if cfg["variant"] == "all" else (cfg["variant"],)
    for variant in variants:
        _train_one(manifest, variant, cfg, out)
    _write_snapshot(out, "train", cfg)
    return 0


def _parse_train_flags(cfg: dict) -> dict:
    return {k: cfg[k] for k in ("epochs", "batch_size", "lr", "momentum", "seed")}


# --------------------------------------------------------------- saliency

SALIENCY_DEFAULTS = {"model": "cnn23", "split": "test", "iters": 15,
                     "step_size": 0.02, "step_mode": "max-pixel",
                     "prune_mode": "mean-std", "prune_value": 1.0,
                     "smooth": False, "limit": 0, "jobs": 1}


def _saliency_cfg(cfg: dict) -> sal.SaliencyConfig:
    return sal.SaliencyConfig(
        iterations=cfg["iters"], step_mode=cfg["step_mode"],
        step_size=cfg["step_size"], prune_mode=cfg["prune_mode"],
        prune_value=cfg["prune_value"],
    )


def _load_nets(ckpt_dir: Path, model: str) -> Dict[str, models.Network]:
    """Label prediction always goes through cnn1; the cost model varies."""
    needed = {"cnn1"}
    needed.update(("cnn2", "cnn3") if model == "cnn23" else (model,))
    nets = {}
    for name in sorted(needed):
        path = ckpt_dir / f"{name}.ckpt"
        if not path.exists():
            raise CliError(f"missing checkpoint: {path}")
        nets[name] = models.load(path, models.VARIANT_LABEL_SPACE[name])
    return nets


def extract_maps(nets: Dict[str, models.Network], image: np.ndarray,
                 model: str, cfg: sal.SaliencyConfig, do_smooth: bool):
    """Full single-image extraction: classify with cnn1, descend, post.

    Returns (final map, sidecar dict). For cnn23 the two component maps
    are produced independently and averaged, exactly as a separate cnn2
    and cnn3 run would produce them.
    """
    label, _ = nets["cnn1"].classify(image)
    n = nets["cnn1"].n_classes
    parts = ("cnn2", "cnn3") if model == "cnn23" else (model,)
    unit_maps, traces, thetas = [], {}, {}
    for part in parts:
        objective = sal.Objective(variant=sal.VARIANT_COST[part], label=label,
                                  n_classes=n)
        result = sal.run_gd(nets[part], objective, image, cfg)
        processed = sal.postprocess(result.raw_map, cfg)
        unit_maps.append(processed)
        traces[part] = result.costs
        thetas[part] = processed.theta
    final = sal.combine(unit_maps[0], unit_maps[1]) if model == "cnn23" \
        else unit_maps[0]
    if do_smooth:
        final = sal.smooth(final, cfg)
    sidecar = {
        "state": final.state,
        "provenance": final.provenance,
        "degenerate": final.degenerate,
        "predicted_label": label,
        "iterations": cfg.iterations,
        "epsilon_policy": {"mode": cfg.step_mode, "size": cfg.step_size},
        "theta": thetas,
        "cost_trace": traces,
    }
    return final, sidecar


_WORKER_CACHE: dict = {}


def _saliency_worker(task):
    """Pool worker: loads nets once per process, then extracts per image."""
    (ckpt_dir, model, cfg, do_smooth, image_path, sample_id, label) = task
    key = (str(ckpt_dir), model)
    if _WORKER_CACHE.get("key") != key:
        _WORKER_CACHE["key"] = key
        _WORKER_CACHE["nets"] = _load_nets(Path(ckpt_dir), model)
    image = pngio.load_rgb(image_path)
    final, sidecar = extract_maps(_WORKER_CACHE["nets"], image, model, cfg,
                                  do_smooth)
    sidecar["true_label"] = label
    return sample_id, final.values, sidecar


def _write_map(map_dir: Path, sample_id: str, values: np.ndarray,
               sidecar: dict) -> None:
    pngio.save_gray_u8(map_dir / f"{sample_id}.png", metrics.quantize(values))
    (map_dir / f"{sample_id}.json").write_text(
        json.dumps(sidecar, indent=1, sort_keys=True) + "\n"
    )


def cmd_saliency(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "saliency", SALIENCY_DEFAULTS)
    if cfg["model"] not in SALIENCY_MODELS:
        raise SystemExit2(f"--model must be one of {SALIENCY_MODELS}")
    manifest = _find_manifest(args.data)
    ckpt_dir = Path(args.ckpt_dir)
    scfg = _saliency_cfg(cfg)
    entries = manifest.split(cfg["split"])
    if cfg["limit"]:
        entries = entries[:cfg["limit"]]
    if not entries:
        raise CliError(f"no samples in split {cfg['split']!r}")
    out = pngio.ensure_dir(_out_dir(args) / "saliency")
    map_dir = pngio.ensure_dir(out / cfg["model"])
    tasks = [(ckpt_dir, cfg["model"], scfg, cfg["smooth"],
              manifest.root / e.image, e.sample_id, e.label) for e in entries]
    if cfg["jobs"] > 1:
        import multiprocessing as mp
        with mp.Pool(cfg["jobs"]) as pool:
            results = pool.map(_saliency_worker, tasks)
    else:
        results = [_saliency_worker(t) for t in tasks]
    for sample_id, values, sidecar in results:
        _write_map(map_dir, sample_id, values, sidecar)
    _write_snapshot(out, "saliency", cfg)
    print(f"saliency: {len(results)} {cfg['model']} maps -> {map_dir}")
    return 0


# ---------------------------------------------------------------- segment

SEGMENT_DEFAULTS = {"split": "test", "delta": 0.5, "seeds": 50, "runs": 100,
                    "budget": 50, "tolerance": 0.1, "seed": 7, "jobs": 1}


def _segment_cfg(cfg: dict, image_seed: int) -> segment.SegmentationConfig:
    return segment.SegmentationConfig(
        delta_fraction=cfg["delta"], seeds_per_run=cfg["seeds"],
        runs=cfg["runs"], proposal_budget=cfg["budget"],
        growth_tolerance=cfg["tolerance"], seed=image_seed,
    )


def segment_one(image: np.ndarray, map_values: np.ndarray,
                scfg: segment.SegmentationConfig):
    """Refine, propose, select; returns (refined, selection, report dict)."""
    smap = sal.SaliencyMap(values=map_values, state="smoothed",
                           provenance="loaded")
    refined = segment.refine(image, smap, scfg)
    proposals = segment.propose(refined, scfg)
    report = {"num_proposals": len(proposals),
              "delta_fraction": scfg.delta_fraction}
    try:
        selection = segment.select(refined, proposals, scfg)
        report.update({"found": True, "proposal_index": selection.index,
                       "jaccard": selection.jaccard,
                       "delta_resolved": selection.delta_resolved})
    except segment.NoProposalsError:
        selection = segment.Selection(found=False)
        report.update({"found": False, "reason": "empty proposal list"})
    return refined, selection, report


def _segment_worker(task):
    cfg, image_path, map_path, sample_id, image_seed = task
    image = pngio.load_rgb(image_path)
    map_values = pngio.load_gray_u8(map_path).astype(np.float64) / 255.0
    scfg = _segment_cfg(cfg, image_seed)
    refined, selection, report = segment_one(image, map_values, scfg)
    return sample_id, refined.values, selection.mask, report


def cmd_segment(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "segment", SEGMENT_DEFAULTS)
    manifest = _find_manifest(args.data)
    maps_dir = Path(args.maps)
    out = pngio.ensure_dir(_out_dir(args) / "segment")
    entries = manifest.split(cfg["split"])
    tasks = []
    for e in entries:
        map_path = maps_dir / f"{e.sample_id}.png"
        if not map_path.exists():
            raise CliError(f"missing saliency map: {map_path}")
        image_seed = int(stream(cfg["seed"], "refine", e.sample_id).integers(2 ** 63))
        tasks.append((cfg, manifest.root / e.image, map_path, e.sample_id,
                      image_seed))
    if cfg["jobs"] > 1:
        import multiprocessing as mp
        with mp.Pool(cfg["jobs"]) as pool:
            results = pool.map(_segment_worker, tasks)
    else:
        results = [_segment_worker(t) for t in tasks]
    skipped = 0
    for sample_id, refined_values, mask, report in results:
        pngio.save_gray_u8(out / f"{sample_id}_refined.png",
                           np.floor(refined_values * 255.0 + 0.5).astype(np.uint8))
        if report["found"]:
            pngio.save_mask(out / f"{sample_id}_mask.png", mask)
        else:
            skipped += 1
        (out / f"{sample_id}_selection.json").write_text(
            json.dumps(report, indent=1, sort_keys=True) + "\n"
        )
    _write_snapshot(out, "segment", cfg)
    print(f"segment: {len(results) - skipped} masks "
          f"({skipped} images with no segmentation) -> {out}")
    return 0


# ------------------------------------------------------------------- eval

EVAL_DEFAULTS = {"split": "test", "beta2": 0.3}


def _eval_map_dir(manifest: ds.DatasetManifest, split: str, maps_dir: Path,
                  beta2: float, out: Path,
                  seg_dir: Optional[Path] = None) -> metrics.EvalReport:
    curves: Dict[str, metrics.PRCurve] = {}
    seg_scores: Dict[str, float] = {}
    per_image_dir = pngio.ensure_dir(out / "per_image")
    failures = 0
    for e in manifest.split(split):
        truth = pngio.load_mask(manifest.root / e.mask)
        map_path = maps_dir / f"{e.sample_id}.png"
        if not map_path.exists():
            raise CliError(f"missing map: {map_path}")
        q = pngio.load_gray_u8(map_path)
        try:
            curve = metrics.pr_curve(q, truth)
        except metrics.EvalError as exc:
            failures += 1
            print(f"gradsal: eval error on {e.sample_id}: {exc}", file=sys.stderr)
            continue
        curves[e.sample_id] = curve
        (per_image_dir / f"{e.sample_id}.csv").write_text(
            metrics.curve_csv(curve, beta2))
        if seg_dir is not None:
            mask_path = seg_dir / f"{e.sample_id}_mask.png"
            if mask_path.exists():
                pred = pngio.load_mask(mask_path)
                seg_scores[e.sample_id] = metrics.segmentation_f_beta(
                    pred, truth, beta2)
    if not curves:
        raise CliError(f"no images evaluated under {maps_dir}")
    report = metrics.aggregate(curves, beta2, seg_scores)
    (out / "summary.csv").write_text(metrics.summary_csv(report))
    (out / "mean_curve.csv").write_text(metrics.mean_curve_csv(report))
    payload = {
        "beta2": beta2,
        "images": len(curves),
        "failures": failures,
        "mean_max_f_beta": report.mean_max_f,
    }
    if report.mean_seg_f is not None:
        payload["mean_segmentation_f_beta"] = report.mean_seg_f
        payload["segmented_images"] = len(seg_scores)
    (out / "report.json").write_text(
        json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return report


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "eval", EVAL_DEFAULTS)
    manifest = _find_manifest(args.data)
    out = pngio.ensure_dir(_out_dir(args) / "eval")
    seg_dir = Path(args.seg) if args.seg else None
    reports: Dict[str, metrics.EvalReport] = {}
    for maps in args.maps:
        maps_dir = Path(maps)
        name = maps_dir.name
        reports[name] = _eval_map_dir(manifest, cfg["split"], maps_dir,
                                      cfg["beta2"], pngio.ensure_dir(out / name),
                                      seg_dir)
    (out / "pr_curves.svg").write_text(metrics.pr_curves_svg(reports))
    bars = {name: r.mean_max_f for name, r in reports.items()}
    seg_means = {n: r.mean_seg_f for n, r in reports.items()
                 if r.mean_seg_f is not None}
    for name, value in seg_means.items():
        bars[f"{name}-seg"] = value
    (out / "fbeta_bars.svg").write_text(metrics.fbeta_bars_svg(bars))
    _write_snapshot(out, "eval", cfg)
    for name in sorted(reports):
        line = f"eval {name}: mean max-F_beta {reports[name].mean_max_f:.4f}"
        if reports[name].mean_seg_f is not None:
            line += f", segmentation F_beta {reports[name].mean_seg_f:.4f}"
        print(line)
    return 0


# -------------------------------------------------------------- reproduce

REPRODUCE_DEFAULTS = {
    "classes": 3, "train": 1500, "test": 500, "size": 64, "seed": 7,
    "epochs": 12, "batch_size": 32, "lr": 0.05, "momentum": 0.9,
    "iters": 15, "runs": 100, "seeds": 50, "jobs": 1,
}


def cmd_reproduce(args: argparse.Namespace) -> int:
    """One-shot benchmark: dataset -> train -> saliency -> segment -> eval."""
    cfg = _resolve(args, "reproduce", REPRODUCE_DEFAULTS)
    out = pngio.ensure_dir(_out_dir(args))
    timings: Dict[str, float] = {}
    summary: Dict[str, object] = {"config": dict(cfg)}

    t0 = time.perf_counter()
    gen = ds.GenerationConfig(
        classes=ds.SHAPE_NAMES[:cfg["classes"]], image_size=cfg["size"],
        train_count=cfg["train"], test_count=cfg["test"], seed=cfg["seed"],
    )
    manifest = ds.generate(gen, out / "dataset")
    _write_snapshot(out / "dataset", "dataset",
                    {k: cfg[k] for k in DATASET_DEFAULTS})
    timings["dataset"] = time.perf_counter() - t0
    print(f"[1/5] dataset: {len(manifest.samples)} samples "
          f"({timings['dataset']:.1f}s)")

    t0 = time.perf_counter()
    model_dir = pngio.ensure_dir(out / "models")
    train_cfg = _parse_train_flags(cfg)
    accuracies = {}
    nets = {}
    for variant in models.VARIANTS:
        net, history = _train_one(manifest, variant, train_cfg, model_dir)
        nets[variant] = net
        accuracies[variant] = history[-1].test_accuracy
    _write_snapshot(model_dir, "train", {**train_cfg, "variant": "all"})
    summary["test_accuracy"] = accuracies
    timings["train"] = time.perf_counter() - t0
    print(f"[2/5] train: accuracies {accuracies} ({timings['train']:.1f}s)")

    t0 = time.perf_counter()
    scfg = sal.SaliencyConfig(iterations=cfg["iters"])
    sal_out = pngio.ensure_dir(out / "saliency")
    dirs = {name: pngio.ensure_dir(sal_out / name)
            for name in ("cnn1", "cnn2", "cnn3", "cnn23", "baseline")}
    baseline = metrics.gaussian_baseline(cfg["size"], cfg["size"])
    entries = manifest.split("test")
    for e in entries:
        image = pngio.load_rgb(manifest.root / e.image)
        label, _ = nets["cnn1"].classify(image)
        n = len(manifest.classes)
        unit_maps = {}
        traces, thetas = {}, {}
        for variant in models.VARIANTS:
            objective = sal.Objective(variant=sal.VARIANT_COST[variant],
                                      label=label, n_classes=n)
            result = sal.run_gd(nets[variant], objective, image, scfg)
            unit_maps[variant] = sal.postprocess(result.raw_map, scfg)
            traces[variant] = result.costs
            thetas[variant] = unit_maps[variant].theta
        smoothed1 = sal.smooth(unit_maps["cnn1"], scfg)
        combined = sal.combine(unit_maps["cnn2"], unit_maps["cnn3"])
        smoothed23 = sal.smooth(combined, scfg)

        def sidecar(m, parts):
            return {
                "state": m.state, "provenance": m.provenance,
                "degenerate": m.degenerate, "predicted_label": label,
                "true_label": e.label, "iterations": scfg.iterations,
                "epsilon_policy": {"mode": scfg.step_mode,
                                   "size": scfg.step_size},
                "theta": {p: thetas[p] for p in parts},
                "cost_trace": {p: traces[p] for p in parts},
            }

        _write_map(dirs["cnn1"], e.sample_id, smoothed1.values,
                   sidecar(smoothed1, ["cnn1"]))
        _write_map(dirs["cnn2"], e.sample_id, unit_maps["cnn2"].values,
                   sidecar(unit_maps["cnn2"], ["cnn2"]))
        _write_map(dirs["cnn3"], e.sample_id, unit_maps["cnn3"].values,
                   sidecar(unit_maps["cnn3"], ["cnn3"]))
        _write_map(dirs["cnn23"], e.sample_id, smoothed23.values,
                   sidecar(smoothed23, ["cnn2", "cnn3"]))
        _write_map(dirs["baseline"], e.sample_id, baseline,
                   {"state": "baseline", "provenance": "centered-gaussian",
                    "degenerate": False, "true_label": e.label})
    _write_snapshot(sal_out, "saliency",
                    {"iters": cfg["iters"], "models": list(dirs),
                     "smooth": ["cnn1", "cnn23"], "split": "test"})
    timings["saliency"] = time.perf_counter() - t0
    print(f"[3/5] saliency: {len(entries)} images x 3 models "
          f"({timings['saliency']:.1f}s)")

    t0 = time.perf_counter()
    seg_out = pngio.ensure_dir(out / "segment")
    seg_cfg_common = {"split": "test", "delta": 0.5, "seeds": cfg["seeds"],
                      "runs": cfg["runs"], "budget": 50, "tolerance": 0.1,
                      "seed": cfg["seed"], "jobs": cfg["jobs"]}
    skipped = 0
    for e in entries:
        image = pngio.load_rgb(manifest.root / e.image)
        map_values = pngio.load_gray_u8(
            dirs["cnn23"] / f"{e.sample_id}.png").astype(np.float64) / 255.0
        image_seed = int(stream(cfg["seed"], "refine",
                                e.sample_id).integers(2 ** 63))
        scfg_seg = _segment_cfg(seg_cfg_common, image_seed)
        refined, selection, report = segment_one(image, map_values, scfg_seg)
        pngio.save_gray_u8(seg_out / f"{e.sample_id}_refined.png",
                           np.floor(refined.values * 255.0 + 0.5).astype(np.uint8))
        if report["found"]:
            pngio.save_mask(seg_out / f"{e.sample_id}_mask.png", selection.mask)
        else:
            skipped += 1
        (seg_out / f"{e.sample_id}_selection.json").write_text(
            json.dumps(report, indent=1, sort_keys=True) + "\n")
    _write_snapshot(seg_out, "segment", seg_cfg_common)
    timings["segment"] = time.perf_counter() - t0
    print(f"[4/5] segment: {len(entries) - skipped} masks, {skipped} skipped "
          f"({timings['segment']:.1f}s)")

    t0 = time.perf_counter()
    eval_out = pngio.ensure_dir(out / "eval")
    reports: Dict[str, metrics.EvalReport] = {}
    for name in ("cnn1", "cnn2", "cnn3", "cnn23", "baseline"):
        seg_dir = seg_out if name == "cnn23" else None
        reports[name] = _eval_map_dir(manifest, "test", dirs[name], 0.3,
                                      pngio.ensure_dir(eval_out / name), seg_dir)
    (eval_out / "pr_curves.svg").write_text(metrics.pr_curves_svg(reports))
    bars = {name: r.mean_max_f for name, r in reports.items()}
    if reports["cnn23"].mean_seg_f is not None:
        bars["segmentation"] = reports["cnn23"].mean_seg_f
    (eval_out / "fbeta_bars.svg").write_text(metrics.fbeta_bars_svg(bars))
    _write_snapshot(eval_out, "eval", {"beta2": 0.3, "split": "test"})
    timings["eval"] = time.perf_counter() - t0

    summary["mean_max_f_beta"] = {n: reports[n].mean_max_f for n in reports}
    summary["mean_segmentation_f_beta"] = reports["cnn23"].mean_seg_f
    summary["segmentation_skipped"] = skipped
    summary["timings_seconds"] = {k: round(v, 2) for k, v in timings.items()}
    summary["total_seconds"] = round(sum(timings.values()), 2)
    (out / "reproduce_summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True) + "\n")

    print(f"[5/5] eval ({timings['eval']:.1f}s)")
    print("\nmethod          mean max-F_beta")
    for name in ("cnn1", "cnn2", "cnn3", "cnn23", "baseline"):
        print(f"  {name:<13} {reports[name].mean_max_f:.4f}")
    if reports["cnn23"].mean_seg_f is not None:
        print(f"  segmentation  {reports['cnn23'].mean_seg_f:.4f} (single F_beta)")
    print(f"\ncnn1 test accuracy: {accuracies['cnn1']:.4f}")
    print(f"total time: {summary['total_seconds']}s")
    return 0


# ------------------------------------------------------------------- main

class SystemExit2(SystemExit):
    def __init__(self, message: str):
        print(f"gradsal: error: {message}", file=sys.stderr)
        super().__init__(2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradsal",
        description="Object saliency by input-gradient descent on small CNNs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--out", help="output directory (default: out, or "
                       f"${ENV_OUTDIR})")
        p.add_argument("--config", help="JSON/TOML config file")

    p = sub.add_parser("dataset", help="generate the synthetic corpus")
    add_common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--train", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the classifier variants")
    add_common(p)
    p.add_argument("--data", required=True, help="dataset dir or manifest path")
    p.add_argument("--variant", choices=("all",) + models.VARIANTS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("saliency", help="extract saliency maps")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt-dir", dest="ckpt_dir", required=True)
    p.add_argument("--model", choices=SALIENCY_MODELS)
    p.add_argument("--split")
    p.add_argument("--iters", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--step-mode", dest="step_mode",
                   choices=("max-pixel", "fixed"))
    p.add_argument("--prune-mode", dest="prune_mode",
                   choices=("mean-std", "constant"))
    p.add_argument("--prune-value", dest="prune_value", type=float)
    p.add_argument("--smooth", action="store_const", const=True)
    p.add_argument("--limit", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("segment", help="refine maps and pick object masks")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--maps", required=True, help="directory of saliency PNGs")
    p.add_argument("--split")
    p.add_argument("--delta", type=float)
    p.add_argument("--seeds", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="PR curves and F-measures")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--maps", nargs="+", required=True,
                   help="one or more saliency map directories to compare")
    p.add_argument("--seg", help="segmentation output directory")
    p.add_argument("--split")
    p.add_argument("--beta2", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reproduce",
                       help="end-to-end benchmark with pinned defaults")
    add_common(p)
    for flag in ("classes", "train", "test", "size", "seed", "epochs",
                 "batch-size", "iters", "runs", "seeds", "jobs"):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.set_defaults(func=cmd_reproduce)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (CliError, ds.DatasetError, models.CheckpointError,
            models.LabelSpaceError, sal.SaliencyError, segment.SegmentError,
            metrics.EvalError, ValueError, OSError) as exc:
        print(f"gradsal: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
