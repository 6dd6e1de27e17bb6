import numpy as np
import pytest
import torch

from clickseg.network import (
    CheckpointError,
    NetworkConfig,
    build_network,
    expand_pretrained_channels,
    load_checkpoint,
    parameter_count,
    read_checkpoint,
    save_checkpoint,
)

SMALL_CFG = NetworkConfig(n_stages=3, features_per_stage=(8, 16, 32),
                          patch_size=(16, 16, 16))


class TestNetworkConfig:
    def test_in_channels_pinned_to_four(self):
        with pytest.raises(ValueError):
            NetworkConfig(in_channels=1)

    def test_patch_divisibility(self):
        with pytest.raises(ValueError, match="divisible"):
            NetworkConfig(n_stages=4, features_per_stage=(8, 16, 32, 64),
                          patch_size=(20, 20, 20))

    def test_round_trip_dict(self):
        cfg = SMALL_CFG
        assert NetworkConfig.from_dict(cfg.to_dict()) == cfg


class TestBuildNetwork:
    def test_output_shapes(self):
        net = build_network(SMALL_CFG)
        x = torch.zeros((1, 4, 16, 16, 16))
        out = net(x)
        assert out.lesion_logits.shape == (1, 2, 16, 16, 16)
        assert out.organ_logits.shape == (1, 11, 16, 16, 16)

    def test_default_shape_contract(self):
        net = build_network(NetworkConfig())
        out = net(torch.zeros((1, 4, 64, 64, 64)))
        assert out.lesion_logits.shape == (1, 2, 64, 64, 64)
        assert out.organ_logits.shape == (1, 11, 64, 64, 64)

    def test_deterministic_forward(self):
        torch.manual_seed(0)
        net = build_network(SMALL_CFG)
        x = torch.randn((1, 4, 16, 16, 16))
        a = net(x).lesion_logits
        b = net(x).lesion_logits
        torch.testing.assert_close(a, b)

    def test_desk_default_parameter_count(self):
        net = build_network(NetworkConfig())
        assert 1_000_000 <= parameter_count(net) <= 20_000_000


class TestExpandPretrainedChannels:
    def _one_channel_state(self, net):
        state = {k: v.clone() for k, v in net.state_dict().items()}
        stem_key = "stem.0.weight"
        state[stem_key] = state[stem_key][:, :1].clone()
        return state, stem_key

    def test_duplicate_and_zero_channels(self):
        torch.manual_seed(1)
        net = build_network(SMALL_CFG)
        state, stem_key = self._one_channel_state(net)
        expanded = expand_pretrained_channels(state)
        kernel = expanded[stem_key]
        torch.testing.assert_close(kernel[:, 0], state[stem_key][:, 0])
        torch.testing.assert_close(kernel[:, 1], state[stem_key][:, 0])
        assert kernel[:, 2].abs().max() == 0.0
        assert kernel[:, 3].abs().max() == 0.0

    def test_guidance_invariance_at_init(self):
        torch.manual_seed(2)
        net = build_network(SMALL_CFG)
        state, _ = self._one_channel_state(net)
        net.load_state_dict(expand_pretrained_channels(state))
        net.eval()
        base = torch.randn((1, 4, 16, 16, 16))
        base[:, 2:] = 0.0
        with_guidance = base.clone()
        with_guidance[:, 2] = torch.rand((16, 16, 16)) * 3
        with_guidance[:, 3] = torch.rand((16, 16, 16))
        with torch.no_grad():
            a = net(base).lesion_logits
            b = net(with_guidance).lesion_logits
        assert float((a - b).abs().max()) < 1e-5

    def test_rejects_multichannel_stem(self):
        net = build_network(SMALL_CFG)
        state = net.state_dict()
        with pytest.raises(ValueError, match="1-input-channel"):
            expand_pretrained_channels(state)


class TestCheckpoints:
    def test_round_trip_forward_identical(self, tmp_path):
        torch.manual_seed(3)
        net = build_network(SMALL_CFG)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(net, path)
        restored = load_checkpoint(path)
        x = torch.randn((1, 4, 16, 16, 16))
        with torch.no_grad():
            torch.testing.assert_close(net(x).lesion_logits,
                                       restored(x).lesion_logits,
                                       atol=1e-6, rtol=0)

    def test_one_channel_checkpoint_triggers_expansion(self, tmp_path):
        torch.manual_seed(4)
        donor = build_network(SMALL_CFG)
        state = {k: v.clone() for k, v in donor.state_dict().items()}
        state["stem.0.weight"] = state["stem.0.weight"][:, :1].clone()

        class _Shim:
            cfg = SMALL_CFG

            def state_dict(self):
                return state

        path = tmp_path / "pretrained.npz"
        save_checkpoint(_Shim(), path, config=SMALL_CFG.to_dict())
        target = build_network(SMALL_CFG)
        load_checkpoint(path, target)
        kernel = target.state_dict()["stem.0.weight"]
        torch.testing.assert_close(kernel[:, 0], kernel[:, 1])
        assert kernel[:, 2:].abs().max() == 0.0

    def test_corrupt_file_rejected(self, tmp_path):
        path = tmp_path / "bad.npz"
        path.write_bytes(b"this is not a checkpoint")
        with pytest.raises(CheckpointError):
            read_checkpoint(path)

    def test_format_version_mismatch_rejected(self, tmp_path):
        import json

        import numpy as np

        path = tmp_path / "wrong.npz"
        meta = np.frombuffer(
            json.dumps({"format": "someone-elses-format-v9"}).encode(),
            dtype=np.uint8)
        with open(path, "wb") as f:
            np.savez(f, __meta__=meta)
        with pytest.raises(CheckpointError, match="unsupported"):
            read_checkpoint(path)

    def test_meta_is_self_describing(self, tmp_path):
        net = build_network(SMALL_CFG)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(net, path, extra={"note": "test"})
        meta, state = read_checkpoint(path)
        assert meta["config"]["features_per_stage"] == [8, 16, 32]
        assert meta["extra"]["note"] == "test"
        assert "stem.0.weight" in state
