"""Command-line entry points: gen-data, train, train-classifier, sweep,
predict, serve. Every command accepts --config (JSON) whose values fill in
unset flags; explicit flags always win. Output directories get a run
manifest for reproducibility."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import __version__
from .classifier import load_classifier, mip_pair, save_classifier, train_classifier
from .config import ExperimentConfig, resolve, write_run_manifest
from .data import load_case, load_manifest, split_records
from .guidance import ClickList, GuidanceConfig, preset_distribution
from .inference import (
    HybridPolicy,
    PredictConfig,
    load_registry_json,
    predict_case,
    write_registry_json,
)
from .metrics import interactive_sweep
from .network import LossWeights, NetworkConfig, build_network, load_checkpoint
from .phantom import PhantomSpec, generate_dataset
from .training import TrainConfig, prepare_training_case, train
from .volumes import ImageGrid, save_volume


def _load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.from_file(path)


@click.group()
@click.version_option(__version__)
def main():
    """Click-guided PET/CT lesion segmentation toolkit."""


@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None)
@click.option("--n-cases", type=int, default=None)
@click.option("--tracer-mix", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--size", type=int, default=None, help="voxels per axis")
@click.option("--spacing", type=float, default=None, help="mm per voxel")
@click.option("--negative-fraction", type=float, default=None)
def gen_data(config_path, out, n_cases, tracer_mix, seed, size, spacing,
             negative_fraction):
    """Generate a synthetic phantom dataset with manifest + fingerprint."""
    cfg = _load_config(config_path)
    out = Path(resolve(out, cfg.output, "phantoms"))
    n_cases = resolve(n_cases, cfg.raw.get("n_cases"), 50)
    tracer_mix = resolve(tracer_mix, cfg.raw.get("tracer_mix"), 0.5)
    seed = resolve(seed, cfg.seed, 0)
    size = resolve(size, cfg.raw.get("size"), 64)
    spacing = resolve(spacing, cfg.raw.get("spacing"), 3.0)
    negative_fraction = resolve(negative_fraction,
                                cfg.raw.get("negative_fraction"), 0.15)

    template = PhantomSpec(grid=ImageGrid((size,) * 3, (spacing,) * 3))
    generate_dataset(n_cases, tracer_mix, template, out, master_seed=seed,
                     negative_fraction=negative_fraction)
    write_run_manifest(out, "gen-data", {
        "n_cases": n_cases, "tracer_mix": tracer_mix, "seed": seed,
        "size": size, "spacing": spacing,
        "negative_fraction": negative_fraction,
    })
    click.echo(f"wrote {n_cases} cases to {out}")


def _network_config(cfg: ExperimentConfig, features, stages, patch) -> NetworkConfig:
    model = cfg.section("model")
    features = resolve(features, model.get("features_per_stage"),
                       (16, 32, 64, 128))
    if isinstance(features, str):
        features = tuple(int(x) for x in features.split(","))
    stages = resolve(stages, model.get("n_stages"), len(features))
    patch = resolve(patch, model.get("patch_size"), 64)
    if isinstance(patch, int):
        patch = (patch,) * 3
    return NetworkConfig(n_stages=stages,
                         features_per_stage=tuple(features)[:stages],
                         patch_size=tuple(patch))


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--curriculum", type=click.Choice(["FULL", "V1_SPARSE",
                                                 "V4_BALANCED"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--steps-per-epoch", type=int, default=None)
@click.option("--val-fraction", type=float, default=None)
@click.option("--features", type=str, default=None,
              help="comma-separated features per stage")
@click.option("--stages", type=int, default=None)
@click.option("--patch", type=int, default=None)
@click.option("--organ-head-w", type=float, default=None)
@click.option("--pretrained", type=click.Path(exists=True), default=None,
              help="checkpoint to initialize from (1-channel stems expand)")
@click.option("--model-id", type=str, default=None)
def train_command(config_path, data, out, epochs, lr, curriculum, seed,
                  batch_size, steps_per_epoch, val_fraction, features,
                  stages, patch, organ_head_w, pretrained, model_id):
    """Train the dual-head segmentation network on a phantom dataset."""
    cfg = _load_config(config_path)
    tcfg = cfg.section("train")
    data = resolve(data, cfg.dataset, None)
    if data is None:
        raise click.UsageError("--data (or config.dataset) is required")
    out = Path(resolve(out, cfg.output, "runs/train"))
    epochs = resolve(epochs, tcfg.get("epochs"), 25)
    lr = resolve(lr, tcfg.get("initial_lr"), 1e-2)
    curriculum = resolve(curriculum, tcfg.get("curriculum"), "V4_BALANCED")
    seed = resolve(seed, cfg.seed, 0)
    batch_size = resolve(batch_size, tcfg.get("batch_size"), 2)
    steps_per_epoch = resolve(steps_per_epoch, tcfg.get("steps_per_epoch"), 40)
    val_fraction = resolve(val_fraction, tcfg.get("val_fraction"), 0.2)
    organ_head_w = resolve(organ_head_w, tcfg.get("organ_head_w"), 1.0)
    model_id = resolve(model_id, tcfg.get("model_id"), "desk")

    dataset = load_manifest(data)
    train_records, _ = split_records(dataset.records, val_fraction, seed)
    guidance_cfg = GuidanceConfig(**cfg.section("guidance"))
    cases = [prepare_training_case(load_case(r), dataset.fingerprint,
                                   guidance_cfg)
             for r in train_records]

    net_cfg = _network_config(cfg, features, stages, patch)
    torch.manual_seed(seed)
    net = build_network(net_cfg)
    if pretrained:
        load_checkpoint(pretrained, net)

    tc = TrainConfig(
        epochs=epochs, initial_lr=lr,
        curriculum=preset_distribution(curriculum), seed=seed,
        batch_size=batch_size, steps_per_epoch=steps_per_epoch,
        guidance=guidance_cfg,
        loss_weights=LossWeights(organ_head_w=organ_head_w))
    result = train(cases, net, tc, out_dir=out)
    write_registry_json(out / "registry.json",
                        {model_id: "checkpoint_final.npz"})
    write_run_manifest(out, "train", {
        "data": str(data), "epochs": epochs, "lr": lr,
        "curriculum": curriculum, "seed": seed, "batch_size": batch_size,
        "steps_per_epoch": steps_per_epoch, "val_fraction": val_fraction,
        "organ_head_w": organ_head_w, "model_id": model_id,
        "network": net_cfg.to_dict(),
    }, inputs=[Path(data) if Path(data).is_file()
               else Path(data) / "manifest.json"])
    final = result.epoch_rows[-1]["total"] if result.epoch_rows else None
    click.echo(f"trained {epochs} epochs in {result.wall_seconds:.1f}s, "
               f"final loss {final:.4f}; checkpoint at "
               f"{result.checkpoint_path}")


@main.command("train-classifier")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--val-fraction", type=float, default=None)
def train_classifier_command(config_path, data, out, epochs, seed,
                             val_fraction):
    """Train the FDG/PSMA tracer classifier on dataset MIPs."""
    cfg = _load_config(config_path)
    data = resolve(data, cfg.dataset, None)
    if data is None:
        raise click.UsageError("--data (or config.dataset) is required")
    out = Path(resolve(out, cfg.output, "runs/classifier"))
    epochs = resolve(epochs, cfg.raw.get("epochs"), 30)
    seed = resolve(seed, cfg.seed, 0)
    val_fraction = resolve(val_fraction, cfg.raw.get("val_fraction"), 0.25)

    dataset = load_manifest(data)
    pairs = []
    for record in dataset.records:
        case = load_case(record)
        pairs.append((mip_pair(case.pet), case.tracer))
    result = train_classifier(pairs, epochs=epochs, seed=seed,
                              val_fraction=val_fraction)
    out.mkdir(parents=True, exist_ok=True)
    save_classifier(result.model, out / "classifier.npz")
    report = {"val_accuracy": result.val_accuracy,
              "n_cases": len(pairs), "epochs": epochs, "seed": seed}
    with open(out / "report.json", "w") as f:
        json.dump(report, f, indent=2)
    write_run_manifest(out, "train-classifier", report)
    click.echo(f"classifier saved to {out / 'classifier.npz'}; "
               f"held-out accuracy {result.val_accuracy}")


def _predict_config(dataset, cfg: ExperimentConfig, classifier_path,
                    tta_budget) -> PredictConfig:
    inference_cfg = cfg.section("inference")
    classifier = None
    path = classifier_path or inference_cfg.get("classifier")
    if path:
        classifier = load_classifier(path)
    fixed_axes = inference_cfg.get("fixed_mirror_axes", [])
    kwargs = dict(
        fingerprint=dataset.fingerprint,
        guidance=GuidanceConfig(**cfg.section("guidance")),
        classifier=classifier,
    )
    if tta_budget is not None:
        kwargs["fixed_mirror_axes"] = None
        kwargs["tta_budget_seconds"] = tta_budget
    else:
        kwargs["fixed_mirror_axes"] = tuple(fixed_axes)
    return PredictConfig(**kwargs)


@main.command("sweep")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--cases", "cases_path", type=click.Path(exists=True),
              default=None, help="dataset manifest (or its directory)")
@click.option("--registry", "registry_path", type=click.Path(exists=True),
              default=None)
@click.option("--model", "model_id", type=str, default=None,
              help="model id to sweep, or 'hybrid' for dispatch")
@click.option("--out", type=click.Path(), default=None)
@click.option("--val-fraction", type=float, default=None,
              help="sweep only the validation split (same split as train)")
@click.option("--seed", type=int, default=None)
@click.option("--classifier", "classifier_path",
              type=click.Path(exists=True), default=None)
def sweep_command(config_path, cases_path, registry_path, model_id, out,
                  val_fraction, seed, classifier_path):
    """Run the 0..10-click interactive evaluation and write the CSV report."""
    cfg = _load_config(config_path)
    cases_path = resolve(cases_path, cfg.dataset, None)
    if cases_path is None or registry_path is None:
        raise click.UsageError("--cases and --registry are required")
    out = Path(resolve(out, cfg.output, "runs/sweep"))
    model_id = resolve(model_id, cfg.section("inference").get("model"),
                       "hybrid")
    seed = resolve(seed, cfg.seed, 0)

    dataset = load_manifest(cases_path)
    records = dataset.records
    if val_fraction:
        _, records = split_records(records, val_fraction, seed)
    registry = load_registry_json(registry_path)
    predict_cfg = _predict_config(dataset, cfg, classifier_path, None)
    if model_id != "hybrid":
        predict_cfg.policy = HybridPolicy(fdg_early_model=model_id,
                                          fdg_dense_model=model_id,
                                          psma_model=model_id)

    cases = [load_case(r) for r in records]

    def predict_fn(case, clicks, k):
        mask, _ = predict_case(case, k, registry, predict_cfg, clicks=clicks)
        return mask.labels > 0

    report = interactive_sweep(predict_fn, cases, model_id=model_id,
                               master_seed=seed,
                               guidance_cfg=predict_cfg.guidance)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "sweep.csv")
    cases_manifest = (Path(cases_path) if Path(cases_path).is_file()
                      else Path(cases_path) / "manifest.json")
    write_run_manifest(out, "sweep", {
        "cases": str(cases_path), "registry": str(registry_path),
        "model": model_id, "seed": seed, "n_cases": report.n_cases,
    }, inputs=[Path(registry_path), cases_manifest])
    click.echo(f"sweep of {report.n_cases} cases written to "
               f"{out / 'sweep.csv'}")
    for k, m in report.rows:
        click.echo(f"  k={k:2d} dice={m.dice:.3f} fpv={m.fpv_ml:.3f} "
                   f"fnv={m.fnv_ml:.3f}")


@main.command("predict")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--cases", "cases_path", type=click.Path(exists=True),
              required=True)
@click.option("--case-id", "--case", "case_id", type=str, required=True)
@click.option("--registry", "registry_path", type=click.Path(exists=True),
              required=True)
@click.option("--clicks", "clicks_path", type=click.Path(exists=True),
              default=None, help="clicks JSON; simulated from GT if omitted")
@click.option("--k", type=int, default=None, help="use first k clicks")
@click.option("--out", type=click.Path(), default=None)
@click.option("--model", "model_id", type=str, default=None,
              help="force one model id instead of hybrid dispatch")
@click.option("--classifier", "classifier_path",
              type=click.Path(exists=True), default=None)
@click.option("--tta-budget", type=float, default=None,
              help="seconds; enables measured TTA planning")
def predict_command(config_path, cases_path, case_id, registry_path,
                    clicks_path, k, out, model_id, classifier_path,
                    tta_budget):
    """Predict one case; writes mask NIfTI + provenance JSON."""
    cfg = _load_config(config_path)
    out = Path(resolve(out, cfg.output, "runs/predict"))
    dataset = load_manifest(cases_path)
    case = load_case(dataset.record(case_id))
    registry = load_registry_json(registry_path)
    predict_cfg = _predict_config(dataset, cfg, classifier_path, tta_budget)
    model_id = resolve(model_id, cfg.section("inference").get("model"), None)
    if model_id and model_id != "hybrid":
        predict_cfg.policy = HybridPolicy(fdg_early_model=model_id,
                                          fdg_dense_model=model_id,
                                          psma_model=model_id)

    clicks = None
    if clicks_path:
        with open(clicks_path) as f:
            clicks = ClickList.from_json(json.load(f), case.grid)
    mask, provenance = predict_case(case, k, registry, predict_cfg,
                                    clicks=clicks)
    out.mkdir(parents=True, exist_ok=True)
    save_volume(mask, out / f"{case_id}_mask.nii.gz")
    with open(out / f"{case_id}_provenance.json", "w") as f:
        json.dump(provenance, f, indent=2)
    write_run_manifest(out, "predict", {
        "cases": str(cases_path), "case_id": case_id, "k": k,
        "registry": str(registry_path),
        "clicks": str(clicks_path) if clicks_path else None,
    }, inputs=[Path(registry_path)])
    click.echo(f"mask written to {out / (case_id + '_mask.nii.gz')} "
               f"(model {provenance['model_id']}, tracer "
               f"{provenance['tracer']})")


@main.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--cases", "cases_path", type=click.Path(exists=True),
              required=True)
@click.option("--registry", "registry_path", type=click.Path(exists=True),
              required=True)
@click.option("--classifier", "classifier_path",
              type=click.Path(exists=True), default=None)
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--port", type=int, default=8080)
@click.option("--sessions-dir", type=click.Path(), default=None)
@click.option("--frontend", "frontend_dir", type=click.Path(exists=True),
              default=None, help="built viewer assets to serve at /")
def serve_command(config_path, cases_path, registry_path, classifier_path,
                  host, port, sessions_dir, frontend_dir):
    """Start the interactive session API (and viewer, when built)."""
    import uvicorn

    from .service import AppState, create_app
    from .service.sessions import SessionStore

    cfg = _load_config(config_path)
    dataset = load_manifest(cases_path)
    registry = load_registry_json(registry_path)
    predict_cfg = _predict_config(dataset, cfg, classifier_path, None)
    state = AppState(dataset=dataset, registry=registry,
                     predict_cfg=predict_cfg,
                     sessions=SessionStore(sessions_dir))
    app = create_app(state, frontend_dir=frontend_dir)
    click.echo(f"serving {len(dataset.records)} cases on "
               f"http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    sys.exit(main())
