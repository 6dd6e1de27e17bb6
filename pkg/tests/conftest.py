import numpy as np
import pytest
import torch

from clickseg.data import load_manifest
from clickseg.inference import (
    ModelRegistry,
    PredictConfig,
    RegistryEntry,
    write_registry_json,
)
from clickseg.network import NetworkConfig, build_network, save_checkpoint
from clickseg.phantom import PhantomSpec, generate_dataset
from clickseg.volumes import ImageGrid

SERVICE_NET_CFG = NetworkConfig(n_stages=2, features_per_stage=(8, 16),
                                patch_size=(16, 16, 16))


@pytest.fixture(scope="session")
def service_env(tmp_path_factory):
    """A small on-disk dataset plus a randomly initialized registered model:
    enough to exercise the service/CLI contracts without training."""
    root = tmp_path_factory.mktemp("service_env")
    data_dir = root / "data"
    template = PhantomSpec(grid=ImageGrid((32, 32, 32), (4.0, 4.0, 4.0)),
                           n_lesions=2)
    generate_dataset(6, tracer_mix=0.5, template=template, out_dir=data_dir,
                     master_seed=5, negative_fraction=0.17)
    dataset = load_manifest(data_dir)

    torch.manual_seed(0)
    net = build_network(SERVICE_NET_CFG)
    ckpt = root / "model.npz"
    save_checkpoint(net, ckpt)
    registry_path = root / "registry.json"
    write_registry_json(registry_path,
                        {mid: "model.npz" for mid in ("V2", "V3", "V4")})
    registry = ModelRegistry({mid: RegistryEntry(ckpt)
                              for mid in ("V2", "V3", "V4")})
    predict_cfg = PredictConfig(fingerprint=dataset.fingerprint)
    return {
        "root": root,
        "data_dir": data_dir,
        "dataset": dataset,
        "registry": registry,
        "registry_path": registry_path,
        "checkpoint": ckpt,
        "predict_cfg": predict_cfg,
    }
