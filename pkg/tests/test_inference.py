import numpy as np
import pytest
import torch

from clickseg.data import LoadedCase
from clickseg.guidance import Click, ClickList
from clickseg.inference import (
    HybridPolicy,
    ModelRegistry,
    PipelineError,
    PredictConfig,
    RegistryEntry,
    TTAPlan,
    _tile_starts,
    estimate_base_seconds,
    plan_tta,
    predict_case,
    select_model,
    sliding_window_predict,
    suv_threshold_postprocess,
    tta_predict,
)
from clickseg.network import NetworkConfig, build_network, save_checkpoint
from clickseg.phantom import PhantomSpec, generate_phantom
from clickseg.volumes import (
    ImageGrid,
    LabelVolume,
    Modality,
    MultiChannelVolume,
    ScalarVolume,
    compute_fingerprint,
)

TINY_CFG = NetworkConfig(n_stages=2, features_per_stage=(8, 16),
                         patch_size=(16, 16, 16))


def random_mcv(shape=(16, 16, 16), seed=0, spacing=(2.0, 2.0, 2.0)):
    rng = np.random.default_rng(seed)
    grid = ImageGrid(shape, spacing)
    return MultiChannelVolume(
        grid, tuple(rng.normal(size=shape).astype(np.float32)
                    for _ in range(4)))


@pytest.fixture(scope="module")
def tiny_net():
    torch.manual_seed(0)
    return build_network(TINY_CFG)


class TestTileStarts:
    def test_spec_example_96_64(self):
        assert _tile_starts(96, 64, 0.5) == [0, 32]

    def test_equal_size_single_tile(self):
        assert _tile_starts(64, 64, 0.5) == [0]

    def test_full_coverage(self):
        for size in (48, 53, 96, 100):
            starts = _tile_starts(size, 32, 0.5)
            assert starts[0] == 0
            assert starts[-1] + 32 == size


class TestSlidingWindow:
    def test_single_pass_equals_direct_softmax(self, tiny_net):
        mcv = random_mcv((16, 16, 16))
        probs = sliding_window_predict(tiny_net, mcv)
        x = torch.from_numpy(mcv.as_array()[None])
        with torch.no_grad():
            direct = torch.softmax(tiny_net(x).lesion_logits, 1)[0, 1].numpy()
        np.testing.assert_array_equal(probs, direct)

    def test_constant_net_constant_output(self):
        net = build_network(TINY_CFG)
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
        mcv = random_mcv((24, 24, 24), seed=1)
        probs = sliding_window_predict(net, mcv)
        np.testing.assert_allclose(probs, 0.5, atol=1e-6)

    def test_tiling_count_spec_example(self, tiny_net):
        calls = []
        hook = tiny_net.stem.register_forward_hook(
            lambda m, i, o: calls.append(1))
        try:
            mcv = random_mcv((24, 24, 24), seed=2)
            sliding_window_predict(tiny_net, mcv)  # starts {0, 8} per axis
        finally:
            hook.remove()
        assert len(calls) == 8

    def test_smaller_than_patch_padded_and_cropped(self, tiny_net):
        mcv = random_mcv((10, 12, 16), seed=3)
        probs = sliding_window_predict(tiny_net, mcv)
        assert probs.shape == (10, 12, 16)
        assert np.isfinite(probs).all()
        assert probs.min() >= 0.0 and probs.max() <= 1.0

    def test_overlap_validation(self, tiny_net):
        with pytest.raises(ValueError):
            sliding_window_predict(tiny_net, random_mcv(), overlap=1.0)


class TestPlanTTA:
    def test_spec_examples(self):
        assert plan_tta(4.0).mirror_axes == ("x", "y", "z")
        assert plan_tta(15.0).mirror_axes == ("x",)
        p = plan_tta(45.0)
        assert p.mirror_axes == () and p.over_budget

    def test_boundary_is_inclusive(self):
        assert len(plan_tta(5.0, 40.0).mirror_axes) == 3  # 5*8 == 40

    def test_monotone_in_base_seconds(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a, b = sorted(rng.uniform(0.5, 100, 2))
            assert len(plan_tta(a).mirror_axes) >= len(plan_tta(b).mirror_axes)

    def test_rejects_nonpositive_base(self):
        with pytest.raises(ValueError):
            plan_tta(0.0)

    def test_plan_invariant(self):
        with pytest.raises(ValueError):
            TTAPlan(("x",), 3, 1.0)


class TestTTAPredict:
    def test_m0_bitwise_matches_plain(self, tiny_net):
        mcv = random_mcv((16, 16, 16), seed=4)
        plan = TTAPlan((), 1, 0.0)
        a = tta_predict(tiny_net, mcv, plan)
        b = sliding_window_predict(tiny_net, mcv)
        np.testing.assert_array_equal(a, b)

    def test_symmetric_input_symmetric_output(self, tiny_net):
        rng = np.random.default_rng(5)
        half = rng.normal(size=(16, 16, 8)).astype(np.float32)
        sym = np.concatenate([half, half[:, :, ::-1]], axis=2)
        mcv = MultiChannelVolume(ImageGrid((16, 16, 16), (2, 2, 2)),
                                 (sym, sym.copy(), sym.copy(), sym.copy()))
        plan = TTAPlan(("x",), 2, 0.0)
        probs = tta_predict(tiny_net, mcv, plan)
        assert np.abs(probs - probs[:, :, ::-1]).max() < 1e-5

    def test_flip_closure_invariance(self, tiny_net):
        mcv = random_mcv((16, 16, 16), seed=6)
        plan = TTAPlan(("x",), 2, 0.0)
        base = tta_predict(tiny_net, mcv, plan)
        flipped_channels = tuple(np.flip(c, axis=2).copy()
                                 for c in mcv.channels)
        flipped = MultiChannelVolume(mcv.grid, flipped_channels)
        out = np.flip(tta_predict(tiny_net, flipped, plan), axis=2)
        assert np.abs(out - base).max() <= 1e-5

    def test_pass_count(self, tiny_net):
        calls = []
        hook = tiny_net.stem.register_forward_hook(
            lambda m, i, o: calls.append(1))
        try:
            plan = TTAPlan(("x", "y"), 4, 0.0)
            tta_predict(tiny_net, random_mcv((16, 16, 16), seed=7), plan)
        finally:
            hook.remove()
        assert len(calls) == 4  # single tile per pass

    def test_estimate_base_seconds_positive(self, tiny_net):
        assert estimate_base_seconds(tiny_net, random_mcv()) > 0


class TestSelectModel:
    def _registry(self, tmp_path):
        torch.manual_seed(1)
        net = build_network(TINY_CFG)
        path = tmp_path / "net.npz"
        save_checkpoint(net, path)
        registry = ModelRegistry()
        for mid in ("V2", "V3", "V4"):
            registry.register(mid, RegistryEntry(path))
        return registry

    def test_dispatch_table(self, tmp_path):
        registry = self._registry(tmp_path)
        policy = HybridPolicy()
        for k in range(11):
            expected_fdg = "V4" if k <= 4 else "V3"
            assert select_model("FDG", k, policy, registry) == expected_fdg
            assert select_model("PSMA", k, policy, registry) == "V2"

    def test_unregistered_model(self, tmp_path):
        registry = ModelRegistry()
        with pytest.raises(KeyError):
            select_model("PSMA", 0, HybridPolicy(), registry)

    def test_k_out_of_range(self, tmp_path):
        registry = self._registry(tmp_path)
        with pytest.raises(ValueError):
            select_model("FDG", 11, HybridPolicy(), registry)

    def test_duplicate_id_rejected(self, tmp_path):
        registry = self._registry(tmp_path)
        with pytest.raises(ValueError):
            registry.register("V2", RegistryEntry(tmp_path / "net.npz"))


class TestSUVPostprocess:
    def _pet(self, grid, hot_value, hot_slice, base=0.5):
        values = np.full(grid.shape, base, dtype=np.float32)
        values[hot_slice] = hot_value
        return ScalarVolume(grid, values, Modality.PET_SUV)

    def test_fdg_threshold_rule(self):
        grid = ImageGrid((8, 8, 8), (2, 2, 2))
        mask = np.zeros(grid.shape, bool)
        mask[0:2, 0:2, 0:2] = True   # component A
        mask[5:7, 5:7, 5:7] = True   # component B
        pet = np.full(grid.shape, 0.2, dtype=np.float32)
        pet[0:2, 0:2, 0:2] = 1.2     # below FDG threshold 1.5
        pet[5:7, 5:7, 5:7] = 1.6     # above
        out = suv_threshold_postprocess(
            mask, ScalarVolume(grid, pet, Modality.PET_SUV), "FDG")
        assert not out.labels[0:2, 0:2, 0:2].any()
        assert out.labels[5:7, 5:7, 5:7].all()

    def test_empty_mask(self):
        grid = ImageGrid((4, 4, 4), (1, 1, 1))
        pet = ScalarVolume(grid, np.ones(grid.shape), Modality.PET_SUV)
        out = suv_threshold_postprocess(np.zeros(grid.shape, bool), pet, "FDG")
        assert out.labels.max() == 0

    def test_psma_keeps_hot_component_only(self):
        grid = ImageGrid((8, 8, 8), (2, 2, 2))
        mask = np.zeros(grid.shape, bool)
        mask[0:2, 0:2, 0:2] = True
        mask[5:7, 5:7, 5:7] = True
        pet = np.zeros(grid.shape, dtype=np.float32)
        pet[0:2, 0:2, 0:2] = 0.8
        pet[5:7, 5:7, 5:7] = 3.0
        out = suv_threshold_postprocess(
            mask, ScalarVolume(grid, pet, Modality.PET_SUV), "PSMA")
        assert not out.labels[0:2, 0:2, 0:2].any()
        assert out.labels[5:7, 5:7, 5:7].all()

    def test_idempotent_and_never_adds(self):
        rng = np.random.default_rng(8)
        grid = ImageGrid((8, 8, 8), (2, 2, 2))
        mask = rng.random(grid.shape) < 0.3
        pet = ScalarVolume(grid, rng.uniform(0, 3, grid.shape).astype(
            np.float32), Modality.PET_SUV)
        once = suv_threshold_postprocess(mask, pet, "FDG")
        twice = suv_threshold_postprocess(once, pet, "FDG")
        np.testing.assert_array_equal(once.labels, twice.labels)
        assert not (once.labels.astype(bool) & ~mask).any()

    def test_per_voxel_mode(self):
        grid = ImageGrid((4, 4, 4), (1, 1, 1))
        mask = np.ones(grid.shape, bool)
        pet_values = np.full(grid.shape, 0.5, dtype=np.float32)
        pet_values[0] = 2.0
        pet = ScalarVolume(grid, pet_values, Modality.PET_SUV)
        out = suv_threshold_postprocess(mask, pet, "PSMA", mode="per_voxel")
        assert out.labels[0].all()
        assert not out.labels[1:].any()

    def test_grid_mismatch(self):
        pet = ScalarVolume(ImageGrid((4, 4, 4), (1, 1, 1)),
                           np.ones((4, 4, 4)), Modality.PET_SUV)
        with pytest.raises(ValueError, match="mismatch"):
            suv_threshold_postprocess(np.zeros((5, 4, 4), bool), pet, "FDG")

    def test_unknown_tracer(self):
        pet = ScalarVolume(ImageGrid((2, 2, 2), (1, 1, 1)),
                           np.ones((2, 2, 2)), Modality.PET_SUV)
        with pytest.raises(ValueError, match="threshold"):
            suv_threshold_postprocess(np.zeros((2, 2, 2), bool), pet, "NEW")


@pytest.fixture(scope="module")
def pipeline_env(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipeline")
    grid = ImageGrid((32, 32, 32), (4.0, 4.0, 4.0))
    cases = {}
    cts = []
    for tracer, seed in (("FDG", 0), ("PSMA", 1)):
        ph = generate_phantom(PhantomSpec(grid=grid, tracer=tracer,
                                          n_lesions=2, seed=seed),
                              case_id=f"{tracer.lower()}_case")
        cases[tracer] = LoadedCase(ph.case_id, ph.tracer, ph.ct, ph.pet,
                                   ph.lesion_gt, ph.organ_gt)
        cts.append(ph.ct)
    fp = compute_fingerprint(cts)
    torch.manual_seed(2)
    net = build_network(TINY_CFG)
    path = tmp / "model.npz"
    save_checkpoint(net, path)
    registry = ModelRegistry({mid: RegistryEntry(path)
                              for mid in ("V2", "V3", "V4")})
    return cases, registry, PredictConfig(fingerprint=fp)


class TestPredictCase:
    def test_provenance_matches_dispatch(self, pipeline_env):
        cases, registry, cfg = pipeline_env
        mask, prov = predict_case(cases["FDG"], 3, registry, cfg)
        assert prov["model_id"] == "V4"
        assert prov["tracer"] == "FDG"
        assert prov["k_clicks"] == 3
        assert prov["suv_threshold"] == 1.5
        assert isinstance(mask, LabelVolume)

        _, prov_dense = predict_case(cases["FDG"], 7, registry, cfg)
        assert prov_dense["model_id"] == "V3"
        _, prov_psma = predict_case(cases["PSMA"], 3, registry, cfg)
        assert prov_psma["model_id"] == "V2"
        assert prov_psma["suv_threshold"] == 1.0

    def test_deterministic(self, pipeline_env):
        cases, registry, cfg = pipeline_env
        a, _ = predict_case(cases["PSMA"], 2, registry, cfg)
        b, _ = predict_case(cases["PSMA"], 2, registry, cfg)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_explicit_clicks_respected(self, pipeline_env):
        cases, registry, cfg = pipeline_env
        case = cases["FDG"]
        clicks = ClickList([Click((16, 16, 16), "FG", 0)], case.grid)
        _, prov = predict_case(case, None, registry, cfg, clicks=clicks)
        assert prov["k_clicks"] == 1
        assert prov["n_fg_clicks"] == 1

    def test_stage_label_on_failure(self, pipeline_env):
        cases, registry, cfg = pipeline_env
        bad = ModelRegistry()
        with pytest.raises(PipelineError, match="select_model"):
            predict_case(cases["FDG"], 0, bad, cfg)

    def test_budgeted_tta_mode_records_plan(self, pipeline_env):
        cases, registry, cfg = pipeline_env
        from dataclasses import replace

        budgeted = replace(cfg, fixed_mirror_axes=None,
                           tta_budget_seconds=120.0)
        _, prov = predict_case(cases["PSMA"], 1, registry, budgeted)
        assert prov["tta_mode"] == "budget"
        assert prov["n_passes"] == 2 ** len(prov["mirror_axes"])
