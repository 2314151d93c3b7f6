import struct

import numpy as np
import pytest

from quadsci import autodiff as ad
from quadsci.cube import VideoCube
from quadsci.errors import ConfigError, FormatError, ShapeError
from quadsci.model import (
    NetworkConfig,
    attention_complexity,
    build,
    count_flops,
    count_params,
    flop_breakdown,
    forward,
    load_weights,
    read_weight_entries,
    save_weights,
)

TINY = NetworkConfig(
    variant="T", frames=2, height=8, width=8, base_channels=2, blocks=(1, 1, 1, 1), d_state=4
)


class TestConfig:
    def test_variant_channels(self):
        assert NetworkConfig(variant="T").base_channels == 8
        assert NetworkConfig(variant="s").base_channels == 10
        assert NetworkConfig(variant="B").base_channels == 16

    def test_rejects_unknown_variant(self):
        with pytest.raises(ConfigError):
            NetworkConfig(variant="X")

    def test_rejects_indivisible_dims(self):
        with pytest.raises(ConfigError):
            NetworkConfig(height=60, width=64)


class TestForward:
    def test_output_shapes(self):
        model = build(TINY, seed=0)
        out = model.forward_tensor(ad.Tensor(np.random.default_rng(0).random((2, 8, 8, 1))))
        assert out.shape == (2, 8, 8, 3)

    def test_cube_interface(self):
        model = build(TINY, seed=0)
        x = VideoCube(np.random.default_rng(1).random((8, 8, 1, 2)))
        y = forward(model, x)
        assert y.dims == (8, 8, 3, 2)

    def test_frame_count_checked(self):
        model = build(TINY, seed=0)
        with pytest.raises(ShapeError):
            forward(model, VideoCube(np.zeros((8, 8, 1, 3))))

    def test_deterministic(self):
        x = VideoCube(np.random.default_rng(2).random((8, 8, 1, 2)))
        y1 = forward(build(TINY, seed=5), x)
        y2 = forward(build(TINY, seed=5), x)
        assert y1 == y2

    def test_seed_changes_weights(self):
        w1 = build(TINY, seed=1).weight_map()
        w2 = build(TINY, seed=2).weight_map()
        assert any(not np.array_equal(w1[k], w2[k]) for k in w1)

    def test_channel_ladder(self):
        # encoder doubles channels per stage: c, 2c, 4c, bottleneck at 8c
        model = build(NetworkConfig(variant="B"), seed=0)
        assert model.enc1.block1.input_dim == 16
        assert model.enc2.block1.input_dim == 32
        assert model.enc3.block1.input_dim == 64
        assert model.bottleneck.block1.input_dim == 128
        assert model.enc3.block4.output_dim == 128


class TestParamScaling:
    def test_counts_positive_and_ordered(self):
        counts = {v: count_params(build(NetworkConfig(variant=v), seed=0)) for v in "TSB"}
        assert counts["T"] < counts["S"] < counts["B"]

    def test_variant_ratios(self):
        counts = {v: count_params(build(NetworkConfig(variant=v), seed=0)) for v in "TSB"}
        assert abs(counts["B"] / counts["S"] - 2.474) / 2.474 < 0.10
        assert abs(counts["S"] / counts["T"] - 1.534) / 1.534 < 0.10


class TestComplexity:
    def test_attention_complexity_value(self):
        assert attention_complexity(8, 8, 2, 4, 16) == 327_680

    def test_attention_complexity_linear_in_frames(self):
        base = attention_complexity(8, 8, 2, 4, 16)
        assert attention_complexity(8, 8, 4, 4, 16) == 2 * base

    def test_scan_flops_linear_in_frames(self):
        cfg = NetworkConfig(variant="T", height=16, width=16)
        b1 = flop_breakdown(cfg, 16, 16, 2)
        b2 = flop_breakdown(cfg, 16, 16, 4)
        assert b2.scan == 2 * b1.scan

    def test_total_flops_linear_in_frames(self):
        cfg = NetworkConfig(variant="T", height=16, width=16)
        f1 = count_flops(cfg, 16, 16, 2)
        f2 = count_flops(cfg, 16, 16, 4)
        # everything in the forward pass is per-token, tokens scale with T,
        # except the tiny global-pool bottleneck in channel attention
        assert f2 / f1 <= 2.0 + 1e-6
        assert f2 / f1 > 1.99

    def test_breakdown_sums_to_total(self):
        cfg = NetworkConfig(variant="S", height=16, width=16)
        bd = flop_breakdown(cfg, 16, 16, 4)
        assert sum(bd.detail.values()) == bd.total
        assert 0 < bd.scan < bd.total


def write_entries(entries: dict[str, np.ndarray], path) -> None:
    with open(path, "wb") as f:
        f.write(b"VWTS")
        f.write(struct.pack("<B", 1))
        f.write(struct.pack("<I", len(entries)))
        for key in sorted(entries):
            arr = entries[key]
            kb = key.encode("utf-8")
            f.write(struct.pack("<H", len(kb)))
            f.write(kb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class TestWeightContainer:
    def test_roundtrip_byte_identical(self, tmp_path):
        model = build(TINY, seed=3)
        p1 = tmp_path / "w1.vwts"
        p2 = tmp_path / "w2.vwts"
        save_weights(model, p1)
        loaded = load_weights(p1, TINY, seed=99)
        save_weights(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        for k, v in model.weight_map().items():
            np.testing.assert_array_equal(loaded.weight_map()[k], v)

    def test_loaded_model_reproduces_outputs(self, tmp_path):
        model = build(TINY, seed=4)
        p = tmp_path / "w.vwts"
        save_weights(model, p)
        loaded = load_weights(p, TINY, seed=0)
        x = VideoCube(np.random.default_rng(3).random((8, 8, 1, 2)))
        assert forward(model, x) == forward(loaded, x)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.vwts"
        p.write_bytes(b"XWTS" + b"\x00" * 16)
        with pytest.raises(FormatError):
            read_weight_entries(p)

    def test_missing_key_named(self, tmp_path):
        model = build(TINY, seed=5)
        entries = model.weight_map()
        removed = sorted(entries)[0]
        del entries[removed]
        p = tmp_path / "missing.vwts"
        write_entries(entries, p)
        with pytest.raises(FormatError, match=removed.replace(".", r"\.")):
            load_weights(p, TINY)

    def test_unknown_key_named(self, tmp_path):
        model = build(TINY, seed=6)
        entries = model.weight_map()
        entries["bogus.extra"] = np.zeros(3)
        p = tmp_path / "extra.vwts"
        write_entries(entries, p)
        with pytest.raises(FormatError, match="bogus.extra"):
            load_weights(p, TINY)

    def test_tampered_shape_named(self, tmp_path):
        model = build(TINY, seed=7)
        entries = model.weight_map()
        key = "head.conv3_bias"
        entries[key] = np.zeros(5)  # should be (3,)
        p = tmp_path / "shape.vwts"
        write_entries(entries, p)
        with pytest.raises(ShapeError, match="conv3_bias"):
            load_weights(p, TINY)

    def test_canonical_key_names(self):
        names = set(build(TINY, seed=0).weight_map())
        assert "stem.dwconv.dw_weight" in names
        assert "enc1.block1.stmamba.in_proj.weight" in names
        assert "bottleneck.block1.ca.fusion_weight" in names
        assert "dec2.reduce.weight" in names
        assert "head.conv1_weight" in names


class TestFullModelGradients:
    def test_fdiff_subsample(self):
        # end-to-end forward + MSE against representative weight groups
        model = build(TINY, seed=8)
        rng = np.random.default_rng(9)
        x = rng.random((2, 8, 8, 1))
        target = rng.random((2, 8, 8, 3))

        def loss_value():
            with ad.no_grad():
                return ad.mse(model.forward_tensor(ad.Tensor(x)), ad.Tensor(target)).data

        loss = ad.mse(model.forward_tensor(ad.Tensor(x)), ad.Tensor(target))
        loss.backward()
        params = model.named_parameters()
        groups = [
            "stem.dwconv.dw_weight",
            "enc1.block1.stmamba.spatial_fwd.a_log",
            "enc2.block1.stmamba.temporal.w_b",
            "bottleneck.block1.edr.fc1.weight",
            "bottleneck.block1.ca.fusion_weight",
            "dec1.conv.pw.weight",
            "dec3.reduce.weight",
            "head.conv2_weight",
            "enc3.block1.scale1",
        ]
        # gradients deep in the network are small relative to the loss, so
        # tiny steps drown in roundoff; 1e-4 balances truncation vs noise
        step = 1e-4
        worst = 0.0
        for name in groups:
            t = params[name]
            assert t.grad is not None, name
            flat = t.data.ravel()
            picks = rng.choice(flat.size, size=min(4, flat.size), replace=False)
            for i in picks:
                orig = flat[i]
                flat[i] = orig + step
                lp = loss_value()
                flat[i] = orig - step
                lm = loss_value()
                flat[i] = orig
                num = (lp - lm) / (2 * step)
                ana = t.grad.ravel()[i]
                rel = abs(num - ana) / max(abs(num), abs(ana), 1e-8)
                worst = max(worst, rel)
        assert worst < 1e-4
