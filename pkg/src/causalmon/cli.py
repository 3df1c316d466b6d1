"""Experiment harness.

Subcommands map to pipeline stages writing into a run directory::

    synth-gen    generate a synthetic benchmark with known causal graph
    train        stage 1: pre-train the reconstruction network
    learn-graph  stage 2: fit the causal graph (network frozen)
    finetune     stage 3: refine the network against the fixed graph
    monitor      calibrate statistics and control limits on training data
    evaluate     detect over the test sets, score, plot, tabulate
    diagnose     root-cause analysis of the detected fault
    gradcheck    verify every backward pass against finite differences
    report       render figures/tables from a finished run (<code>--ablation</code>
                 reruns stages 2+ under the ablation variants)

Stage ordering is enforced: a missing upstream artifact is an error naming
the file, never a silent recompute.  Errors leave a machine-readable JSON
object on stderr and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import shutil
import sys
from datetime import datetime, timezone
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import plots
from .autodiff import Tensor
from .config import ABLATIONS, ExperimentConfig, load_config
from .data import (
    Dataset,
    FaultSpec,
    SynthSpec,
    generate_synthetic,
    load_matrix,
    load_tep,
    make_windows,
    random_process_weights,
    regime_schedule,
    save_matrix,
)
from .diagnosis import (
    contribution_trace,
    fault_variable_set,
    first_excess_times,
    graph_edge_f1,
    optimal_subgraph,
    truncate_graph,
)
from .model import (
    decode_window,
    encode_window,
    fingerprint,
    init_params,
    load_checkpoint,
    model_forward,
    save_checkpoint,
    set_requires_grad,
)
from .monitoring import (
    calibrate,
    detect,
    load_monitor,
    save_monitor,
    score,
    write_trace_csv,
)
from .numerics import grad_check
from .priors import load_prior, prior_from_truth, random_prior, save_prior
from .training import (
    correlation_graphs,
    finetune,
    learn_causal_graph,
    loss_discrete,
    loss_invariance,
    loss_mse,
    loss_prior,
    loss_sparsity,
    pretrain,
)

PRETRAIN_CKPT = "checkpoint_pretrain.npz"
FINETUNE_CKPT = "checkpoint_finetune.npz"
GRAPH_FILE = "causal_graph.npz"
ADJACENCY_CSV = "causal_adjacency.csv"
MONITOR_FILE = "monitor.npz"
NORM_FILE = "normalization.npz"
LOSSES_CSV = "losses.csv"
METRICS_JSON = "metrics.json"
EVALUATION_CSV = "evaluation.csv"
DIAGNOSIS_JSON = "diagnosis.json"
META_JSON = "meta.json"

LOSS_COLUMNS = ["epoch", "stage", "mse", "invariance", "prior", "sparsity",
                "discrete", "total", "val"]


class CliError(Exception):
    exit_code = 1
    kind = "error"


class StageOrderError(CliError):
    exit_code = 2
    kind = "stage-order"

    def __init__(self, message, missing=None):
        super().__init__(message)
        self.missing = missing


# -- run-directory plumbing ---------------------------------------------------------


def _require(run_dir: Path, name: str, producer: str) -> Path:
    path = run_dir / name
    if not path.exists():
        raise StageOrderError(
            f"{name} not found in {run_dir}; run `{producer}` first",
            missing=str(path))
    return path


def _update_meta(run_dir: Path, stage: str, info: dict):
    """Timestamps live only here, keeping every other artifact byte-reproducible."""
    path = run_dir / META_JSON
    meta = json.loads(path.read_text()) if path.exists() else {"stages": {}}
    info = dict(info)
    info["completed"] = datetime.now(timezone.utc).isoformat()
    meta["stages"][stage] = info
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _read_meta(run_dir: Path) -> dict:
    path = run_dir / META_JSON
    return json.loads(path.read_text()) if path.exists() else {"stages": {}}


def _merge_losses(run_dir: Path, stage: str, records):
    """Rewrite the loss log with this stage's rows replacing any previous
    rows for the same stage."""
    path = run_dir / LOSSES_CSV
    rows = []
    if path.exists():
        with open(path, newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if r["stage"] != stage]
    for rec in records:
        rows.append({
            "epoch": str(rec.epoch), "stage": rec.stage,
            "mse": f"{rec.mse:.17g}", "invariance": f"{rec.invariance:.17g}",
            "prior": f"{rec.prior:.17g}", "sparsity": f"{rec.sparsity:.17g}",
            "discrete": f"{rec.discrete:.17g}", "total": f"{rec.total:.17g}",
            "val": f"{rec.val:.17g}",
        })
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def _read_losses(run_dir: Path):
    path = _require(run_dir, LOSSES_CSV, "train")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["epoch"] = int(r["epoch"])
        for key in LOSS_COLUMNS[2:]:
            r[key] = float(r[key])
    return rows


def _write_json(path: Path, payload):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- dataset access ------------------------------------------------------------------


def _sidecar_onset(path: Path):
    sidecar = Path(str(path) + ".meta.json")
    if sidecar.exists():
        return json.loads(sidecar.read_text()).get("onset")
    return None


def _load_train_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data.kind == "tep":
        if cfg.data.tep_dir is None:
            raise CliError("[data] tep_dir is required for kind=tep")
        return load_tep(Path(cfg.data.tep_dir) / "d00_te.dat", role="train")
    if cfg.data.train is None:
        raise CliError("[data] train is required")
    series = load_matrix(cfg.data.train)
    tags = [f"x{i + 1}" for i in range(series.shape[1])]
    return Dataset(series=series, tags=tags)


def _load_test_sets(cfg: ExperimentConfig):
    """(name, raw Dataset, onset) triples; onset None means all-normal data."""
    sets = []
    if cfg.data.kind == "tep":
        for i in range(1, 22):
            path = Path(cfg.data.tep_dir) / f"d{i:02d}_te.dat"
            if not path.exists():
                raise CliError(f"TEP test file missing: {path}")
            ds = load_tep(path, role="test")
            sets.append((f"fault_{i:02d}", ds, ds.onset))
        return sets
    if cfg.data.test_fault is not None:
        series = load_matrix(cfg.data.test_fault)
        tags = [f"x{i + 1}" for i in range(series.shape[1])]
        onset = cfg.data.onset
        if onset is None:
            onset = _sidecar_onset(cfg.data.test_fault)
        if onset is None:
            raise CliError("fault test set needs an onset ([data] onset or sidecar meta)")
        sets.append(("fault", Dataset(series=series, tags=tags, onset=onset), onset))
    if cfg.data.test_normal is not None:
        series = load_matrix(cfg.data.test_normal)
        tags = [f"x{i + 1}" for i in range(series.shape[1])]
        sets.append(("normal", Dataset(series=series, tags=tags), None))
    if not sets:
        raise CliError("no test sets configured ([data] test_fault/test_normal or tep_dir)")
    return sets


def _stored_stats(run_dir: Path):
    path = _require(run_dir, NORM_FILE, "train")
    with np.load(path) as bundle:
        return bundle["mean"].copy(), bundle["std"].copy()


def _normalized_train_windows(cfg, run_dir):
    mean, std = _stored_stats(run_dir)
    ds = _load_train_dataset(cfg).apply_stats(mean, std)
    return make_windows(ds, cfg.window), ds


def _load_prior_for(cfg: ExperimentConfig, n_vars: int):
    """The prior actually used in stage 2, after the ablation switch."""
    prior = load_prior(cfg.data.prior) if cfg.data.prior is not None else None
    if cfg.ablation == "rand-prior":
        fraction = float(prior.mask.mean()) if prior is not None else 0.3
        return random_prior(n_vars, fraction, cfg.train.seed + 104729)
    return prior


def _effective_train_config(cfg: ExperimentConfig):
    train = cfg.train
    if cfg.ablation == "no-prior":
        train = _replace_train(train, lambda_prior=0.0)
    elif cfg.ablation == "no-invariance":
        train = _replace_train(train, lambda_invariance=0.0)
    return train


def _replace_train(train, **kwargs):
    from dataclasses import replace

    return replace(train, **kwargs)


# -- subcommands ------------------------------------------------------------------------


def cmd_synth_gen(args):
    cfg = load_config(args.config, check_files=False)
    s = cfg.synth
    for key in ("train", "test_fault", "truth", "prior"):
        if getattr(cfg.data, key) is None:
            raise CliError(f"synth-gen needs [data] {key} to know where to write")

    weights = random_process_weights(s.n_vars, s.n_edges, s.seed, s.allow_self,
                                     s.spectral_radius)
    regimes = regime_schedule(s.n_regimes, s.regime_length, s.n_vars, s.seed + 1,
                              s.scale_low, s.scale_high)

    def cycled(total):
        out = []
        covered = 0
        i = 0
        while covered < total:
            length, scale = regimes[i % len(regimes)]
            length = min(length, total - covered)
            out.append((length, scale))
            covered += length
            i += 1
        return out

    train_ds = generate_synthetic(SynthSpec(
        weights=weights, regimes=regimes, noise_std=s.noise_std, seed=s.seed + 2))
    fault_ds = generate_synthetic(SynthSpec(
        weights=weights, regimes=cycled(s.test_length), noise_std=s.noise_std,
        faults=[FaultSpec(s.fault_variable, s.fault_onset,
                          s.fault_magnitude * s.noise_std)],
        seed=s.seed + 3))
    normal_ds = generate_synthetic(SynthSpec(
        weights=weights, regimes=cycled(s.normal_length), noise_std=s.noise_std,
        seed=s.seed + 4))

    for path, ds in ((cfg.data.train, train_ds), (cfg.data.test_fault, fault_ds)):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        save_matrix(path, ds.series)
    if cfg.data.test_normal is not None:
        Path(cfg.data.test_normal).parent.mkdir(parents=True, exist_ok=True)
        save_matrix(cfg.data.test_normal, normal_ds.series)

    truth = (weights != 0).astype(int)
    Path(cfg.data.truth).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(cfg.data.truth, truth, fmt="%d")
    prior = prior_from_truth(truth, s.prior_fraction, s.seed + 5)
    save_prior(cfg.data.prior, prior)
    _write_json(Path(str(cfg.data.test_fault) + ".meta.json"), {
        "onset": s.fault_onset,
        "fault_variable": s.fault_variable,
        "magnitude_noise_units": s.fault_magnitude,
    })
    print(f"synthetic benchmark written: {s.n_vars} variables, "
          f"{int(truth.sum())} true edges, fault on x{s.fault_variable + 1} "
          f"at sample {s.fault_onset}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(cfg.source_path, run_dir / "config.ini")

    raw = _load_train_dataset(cfg)
    mean, std = raw.fit_stats()
    np.savez(run_dir / NORM_FILE, mean=mean, std=std)
    ds = raw.apply_stats(mean, std)
    windows = make_windows(ds, cfg.window)

    params = init_params(ds.n_vars, cfg.window, cfg.hidden_dim, cfg.train.seed)
    result = pretrain(windows.windows, params, cfg.train)
    save_checkpoint(run_dir / PRETRAIN_CKPT, params)
    _merge_losses(run_dir, "pretrain", result.history)
    _update_meta(run_dir, "train", {
        "epochs": result.epochs,
        "best_val": result.best_val,
        "n_windows": len(windows),
        "theta_fingerprint": fingerprint(params.all_parameters()),
    })
    print(f"pre-training done: {result.epochs} epochs, "
          f"best validation mse/window {result.best_val:.6f}")
    return 0


def cmd_learn_graph(args):
    cfg = load_config(args.config)
    run_dir = Path(args.run_dir)
    params = load_checkpoint(_require(run_dir, PRETRAIN_CKPT, "train"))
    windows, ds = _normalized_train_windows(cfg, run_dir)

    prior = _load_prior_for(cfg, params.n_vars)
    train_cfg = _effective_train_config(cfg)
    before = fingerprint(params.all_parameters())
    cg, result = learn_causal_graph(windows.windows, params, prior, train_cfg)
    after = fingerprint(params.all_parameters())
    if before != after:
        raise CliError("internal error: network parameters changed during graph learning")

    adjacency = cg.adjacency
    np.savez(run_dir / GRAPH_FILE, logits=cg.logits.data, adjacency=adjacency)
    np.savetxt(run_dir / ADJACENCY_CSV, adjacency, fmt="%.17g", delimiter=",")
    _merge_losses(run_dir, "graph", result.history)
    _update_meta(run_dir, "learn-graph", {
        "epochs": result.epochs,
        "best_val": result.best_val,
        "ablation": cfg.ablation,
        "theta_fingerprint": after,
        "theta_frozen_ok": before == after,
    })
    print(f"graph learning done: {result.epochs} epochs, "
          f"best validation objective {result.best_val:.6f}")
    return 0


def cmd_finetune(args):
    cfg = load_config(args.config)
    run_dir = Path(args.run_dir)
    params = load_checkpoint(_require(run_dir, PRETRAIN_CKPT, "train"))
    with np.load(_require(run_dir, GRAPH_FILE, "learn-graph")) as bundle:
        adjacency = bundle["adjacency"].copy()
    windows, ds = _normalized_train_windows(cfg, run_dir)

    result = finetune(windows.windows, params, adjacency, cfg.train)
    save_checkpoint(run_dir / FINETUNE_CKPT, params)
    _merge_losses(run_dir, "finetune", result.history)
    _update_meta(run_dir, "finetune", {
        "epochs": result.epochs,
        "best_val": result.best_val,
    })
    print(f"fine-tuning done: {result.epochs} epochs, "
          f"best validation mse/window {result.best_val:.6f}")
    return 0


def cmd_monitor(args):
    cfg = load_config(args.config)
    run_dir = Path(args.run_dir)
    params = load_checkpoint(_require(run_dir, FINETUNE_CKPT, "finetune"))
    windows, ds = _normalized_train_windows(cfg, run_dir)

    monitor = calibrate(params, windows.windows, cfg.significance)
    save_monitor(run_dir / MONITOR_FILE, monitor)
    _write_json(run_dir / "monitor.json", {
        "alpha_t2": monitor.alpha_t2,
        "alpha_spe": monitor.alpha_spe,
        "significance": monitor.significance,
        "n_windows": len(windows),
    })
    _update_meta(run_dir, "monitor", {
        "alpha_t2": monitor.alpha_t2,
        "alpha_spe": monitor.alpha_spe,
    })
    print(f"calibrated: alpha_T2 {monitor.alpha_t2:.4f}, alpha_SPE {monitor.alpha_spe:.4f}")
    return 0


def cmd_evaluate(args):
    cfg = load_config(args.config)
    run_dir = Path(args.run_dir)
    params = load_checkpoint(_require(run_dir, FINETUNE_CKPT, "finetune"))
    monitor = load_monitor(_require(run_dir, MONITOR_FILE, "monitor"), params)
    mean, std = _stored_stats(run_dir)

    traces_dir = run_dir / "traces"
    plots_dir = run_dir / "plots"
    traces_dir.mkdir(exist_ok=True)
    plots_dir.mkdir(exist_ok=True)

    per_fault = {}
    normals = {}
    pooled = {"true_alarms": 0, "false_alarms": 0, "n_faulty": 0, "n_normal": 0}
    for name, raw, onset in _load_test_sets(cfg):
        ds = raw.apply_stats(mean, std)
        trace = detect(ds.series, monitor, onset=onset)
        write_trace_csv(traces_dir / f"{name}.csv", trace)
        plots.plot_statistic_trace(trace, plots_dir / f"{name}_statistics.svg",
                                   title=name, onset=onset)
        if onset is None:
            scored = trace.scored()
            rate = float((trace.alarm[scored] == 1).mean()) if scored.any() else 0.0
            normals[name] = {"alarm_rate": rate, "n_scored": int(scored.sum())}
        else:
            metrics = score(trace, onset)
            per_fault[name] = metrics.to_dict()
            for key in pooled:
                pooled[key] += getattr(metrics, key)

    if per_fault:
        avg_fdr = float(np.mean([m["fdr"] for m in per_fault.values()]))
        avg_far = float(np.mean([m["far"] for m in per_fault.values()]))
    else:
        avg_fdr = avg_far = 0.0
    total_alarms = pooled["true_alarms"] + pooled["false_alarms"]
    if total_alarms:
        pooled_precision = pooled["true_alarms"] / total_alarms
    else:
        pooled_precision = 1.0 if pooled["n_faulty"] == 0 else 0.0
    pooled_recall = (pooled["true_alarms"] / pooled["n_faulty"]) if pooled["n_faulty"] else 0.0
    denominator = pooled_precision + pooled_recall
    pooled_f1 = 2.0 * pooled_precision * pooled_recall / denominator if denominator else 0.0

    payload = {
        "per_fault": per_fault,
        "normal_sets": normals,
        "average": {"fdr": avg_fdr, "far": avg_far},
        "f1": pooled_f1,
        "significance": cfg.significance,
    }
    _write_json(run_dir / METRICS_JSON, payload)

    with open(run_dir / EVALUATION_CSV, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fault", "fdr", "far", "f1"])
        for name in sorted(per_fault):
            m = per_fault[name]
            writer.writerow([name, f"{m['fdr']:.17g}", f"{m['far']:.17g}",
                             f"{m['f1']:.17g}"])
        writer.writerow(["Average", f"{avg_fdr:.17g}", f"{avg_far:.17g}",
                         f"{pooled_f1:.17g}"])

    _update_meta(run_dir, "evaluate", {"average_fdr": avg_fdr, "average_far": avg_far,
                                       "f1": pooled_f1})
    for name in sorted(per_fault):
        m = per_fault[name]
        print(f"{name:>12}  FDR {m['fdr']:.3f}  FAR {m['far']:.3f}  F1 {m['f1']:.3f}")
    for name, m in sorted(normals.items()):
        print(f"{name:>12}  alarm rate {m['alarm_rate']:.4f} over {m['n_scored']} samples")
    print(f"{'Average':>12}  FDR {avg_fdr:.3f}  FAR {avg_far:.3f}  F1 {pooled_f1:.3f}")
    return 0


def cmd_diagnose(args):
    cfg = load_config(args.config)
    run_dir = Path(args.run_dir)
    params = load_checkpoint(_require(run_dir, FINETUNE_CKPT, "finetune"))
    monitor = load_monitor(_require(run_dir, MONITOR_FILE, "monitor"), params)
    mean, std = _stored_stats(run_dir)
    if params.causal_adjacency is None:
        raise StageOrderError("fine-tuned checkpoint has no causal graph; rerun `finetune`")

    sets = [(name, raw, onset) for name, raw, onset in _load_test_sets(cfg)
            if onset is not None]
    if not sets:
        raise CliError("diagnose needs a fault test set")
    name, raw, onset = sets[0] if args.fault is None else \
        next(((n, r, o) for n, r, o in sets if n == args.fault),
             (None, None, None))
    if raw is None:
        raise CliError(f"unknown fault set {args.fault!r}; have {[s[0] for s in sets]}")

    ds = raw.apply_stats(mean, std)
    trace = detect(ds.series, monitor, onset=onset)
    alarmed = np.flatnonzero(trace.alarm == 1)
    if alarmed.size == 0:
        raise CliError(f"no alarms raised on test set {name!r}; nothing to diagnose")
    t_start, t_stop = int(alarmed[0]), int(alarmed[-1])

    contribs = contribution_trace(ds.series, params)
    fault_vars = fault_variable_set(contribs, monitor.alpha_spe, t_start, t_stop)
    if not fault_vars:
        raise CliError("no variable contribution exceeds the residual limit; "
                       "cannot form a fault variable set")
    excess = first_excess_times(contribs, monitor.alpha_spe)
    discrete = truncate_graph(params.causal_adjacency, cfg.delta)
    subgraph = optimal_subgraph(discrete, fault_vars, first_excess=excess)

    tags = ds.tags
    payload = {
        "fault_variables": fault_vars,
        "fault_tags": [tags[v] for v in fault_vars],
        "delta": cfg.delta,
        "interval": [t_start, t_stop],
        "subgraph": {
            "nodes": subgraph.nodes,
            "edges": [list(e) for e in subgraph.edges],
            "source_nodes": subgraph.source_nodes,
            "normal_count": subgraph.normal_count,
            "disconnected": subgraph.disconnected,
        },
        "sources_ranked": [
            {"variable": v, "tag": tags[v],
             "first_excess": excess.get(v)}
            for v in subgraph.source_nodes
        ],
        "first_excess": {str(v): t for v, t in sorted(excess.items())},
    }
    _write_json(run_dir / DIAGNOSIS_JSON, payload)

    plots_dir = run_dir / "plots"
    plots_dir.mkdir(exist_ok=True)
    with np.errstate(invalid="ignore"):
        peak = np.nanmax(contribs.values[t_start:t_stop + 1], axis=0)
    plots.plot_contributions(peak, monitor.alpha_spe,
                             plots_dir / "diagnosis_contributions.svg", tags=tags)
    plots.plot_subgraph(subgraph, plots_dir / "diagnosis_subgraph.svg", tags=tags)
    _update_meta(run_dir, "diagnose", {"fault_set": name,
                                       "sources": subgraph.source_nodes})

    sources = ", ".join(tags[v] for v in subgraph.source_nodes) or "(none)"
    print(f"fault variables: {[tags[v] for v in fault_vars]}")
    print(f"root-cause candidates (ranked): {sources}")
    return 0


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    n, w, d_h = args.n_vars, args.window, args.hidden_dim
    windows = rng.standard_normal((args.batch, w, n))
    results = {}

    params = init_params(n, w, d_h, seed=args.seed)
    tensors = params.all_parameters()

    def pretrain_loss():
        recon, _, _ = model_forward(windows, params)
        return loss_mse(recon, windows)

    results["pretrain_loss"] = grad_check(pretrain_loss, tensors, eps=args.eps)

    prior = random_prior(n, 0.3, args.seed + 1)
    graphs = correlation_graphs(windows, params)
    set_requires_grad(tensors, False)
    logits = Tensor(0.3 * rng.standard_normal((n, n)), requires_grad=True)

    def graph_objective():
        a = logits.sigmoid()
        enc = encode_window(windows, a, params.encoder, d_h)
        recon = decode_window(enc, a, params.decoder, params.head, w)
        return (loss_mse(recon, windows) * (1.0 / windows.size)
                + 0.02 * loss_invariance(a, graphs) * (1.0 / len(windows))
                + 0.08 * loss_prior(a, prior)
                + 0.01 * loss_sparsity(a, prior)
                + 0.03 * loss_discrete(a))

    results["graph_objective"] = grad_check(graph_objective, [logits], eps=args.eps)
    set_requires_grad(tensors, True)

    ok = all(v < args.tol for v in results.values())
    for key, value in results.items():
        print(f"max relative error ({key}): {value:.3e}  "
              f"[{'PASS' if value < args.tol else 'FAIL'} at {args.tol:g}]")
    if args.run_dir:
        run_dir = Path(args.run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_json(run_dir / "gradcheck.json",
                    {"results": results, "tolerance": args.tol, "passed": ok,
                     "n_vars": n, "window": w, "hidden_dim": d_h, "seed": args.seed})
    return 0 if ok else 1


def _run_variant(cfg_path, run_dir: Path, variant_dir: Path, ablation: str):
    """Rerun stages 2+ under one ablation switch, reusing stage 1 artifacts."""
    variant_dir.mkdir(parents=True, exist_ok=True)
    for name in (NORM_FILE, PRETRAIN_CKPT):
        shutil.copyfile(_require(run_dir, name, "train"), variant_dir / name)

    # write an override config with the ablation set and all paths absolute
    # (relative paths are resolved against the config file's own directory)
    base = load_config(cfg_path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read(cfg_path)
    for section in ("training", "data"):
        if not parser.has_section(section):
            parser.add_section(section)
    parser.set("training", "ablation", ablation)
    for key in ("train", "test_fault", "test_normal", "truth", "prior", "tep_dir"):
        value = getattr(base.data, key)
        if value is not None:
            parser.set("data", key, str(value))
    override = variant_dir / "config.ini"
    with open(override, "w") as fh:
        parser.write(fh)

    step_args = SimpleNamespace(config=str(override), run_dir=str(variant_dir), fault=None)
    for step in (cmd_learn_graph, cmd_finetune, cmd_monitor, cmd_evaluate):
        step(step_args)
    return json.loads((variant_dir / METRICS_JSON).read_text())


def cmd_report(args):
    cfg = load_config(args.config)
    run_dir = Path(args.run_dir)
    report_dir = run_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    rows = _read_losses(run_dir)
    plots.plot_loss_curves(rows, report_dir / "loss_curves.svg")

    summary = {"stages": sorted({r["stage"] for r in rows})}
    adjacency_path = run_dir / ADJACENCY_CSV
    if adjacency_path.exists():
        adjacency = np.loadtxt(adjacency_path, delimiter=",", ndmin=2)
        tags = [f"x{i + 1}" for i in range(adjacency.shape[1])]
        plots.plot_adjacency(adjacency, report_dir / "causal_graph.svg", tags=tags,
                             title="learned causal adjacency")
        if cfg.data.truth is not None:
            truth = np.loadtxt(cfg.data.truth, ndmin=2)
            predicted = truncate_graph(adjacency, cfg.delta).adjacency
            summary["edge_f1"] = graph_edge_f1(predicted, truth)
            summary["delta"] = cfg.delta

    metrics_path = run_dir / METRICS_JSON
    if metrics_path.exists():
        summary["metrics"] = json.loads(metrics_path.read_text())

    if args.ablation:
        table = []
        for variant in ABLATIONS:
            variant_dir = report_dir / "ablation" / variant
            metrics = _run_variant(args.config, run_dir, variant_dir, variant)
            entry = {
                "variant": variant,
                "fdr": metrics["average"]["fdr"],
                "far": metrics["average"]["far"],
                "f1": metrics["f1"],
            }
            adjacency = np.loadtxt(variant_dir / ADJACENCY_CSV, delimiter=",", ndmin=2)
            if cfg.data.truth is not None:
                truth = np.loadtxt(cfg.data.truth, ndmin=2)
                entry["edge_f1"] = graph_edge_f1(
                    truncate_graph(adjacency, cfg.delta).adjacency, truth)
            table.append(entry)
        with open(report_dir / "ablation.csv", "w", newline="") as fh:
            fieldnames = list(table[0].keys())
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            for entry in table:
                writer.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v)
                                 for k, v in entry.items()})
        summary["ablation"] = table
        for entry in table:
            extra = f"  edge-F1 {entry['edge_f1']:.3f}" if "edge_f1" in entry else ""
            print(f"{entry['variant']:>14}  FDR {entry['fdr']:.3f}  "
                  f"FAR {entry['far']:.3f}  F1 {entry['f1']:.3f}{extra}")

    _write_json(report_dir / "summary.json", summary)
    print(f"report written to {report_dir}")
    return 0


# -- entry point -------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="causalmon",
        description="causal-graph autoencoder process monitoring harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, needs_run_dir=True, needs_config=True):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("-c", "--config", required=True, help="experiment config (INI)")
        if needs_run_dir:
            p.add_argument("-r", "--run-dir", required=True, help="run directory")
        p.set_defaults(func=func)
        return p

    add("synth-gen", cmd_synth_gen, needs_run_dir=False)
    add("train", cmd_train)
    add("learn-graph", cmd_learn_graph)
    add("finetune", cmd_finetune)
    add("monitor", cmd_monitor)
    add("evaluate", cmd_evaluate)
    p_diag = add("diagnose", cmd_diagnose)
    p_diag.add_argument("--fault", default=None, help="name of the fault test set")

    p_grad = sub.add_parser("gradcheck")
    p_grad.add_argument("-r", "--run-dir", default=None)
    p_grad.add_argument("--n-vars", type=int, default=4)
    p_grad.add_argument("--window", type=int, default=3)
    p_grad.add_argument("--hidden-dim", type=int, default=2)
    p_grad.add_argument("--batch", type=int, default=6)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--eps", type=float, default=1e-5)
    p_grad.add_argument("--tol", type=float, default=1e-4)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_report = add("report", cmd_report)
    p_report.add_argument("--ablation", action="store_true",
                          help="rerun stages 2+ under each ablation variant")
    return parser


def _emit_error(exc) -> int:
    kind = getattr(exc, "kind", "error")
    payload = {"error": {"type": kind, "message": str(exc)}}
    missing = getattr(exc, "missing", None)
    if missing:
        payload["error"]["missing"] = missing
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return getattr(exc, "exit_code", 1)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageOrderError as e:
        return _emit_error(e)
    except (CliError, ValueError, FileNotFoundError, ArithmeticError, RuntimeError) as e:
        return _emit_error(e)


if __name__ == "__main__":
    sys.exit(main())
