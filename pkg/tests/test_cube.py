import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadsci.cube import (
    PSNR_CAP_DB,
    VideoCube,
    evaluate,
    gaussian_window,
    load_cube,
    psnr,
    save_cube,
    save_ppm,
    ssim,
)
from quadsci.errors import ConfigError, DataError, FormatError, ShapeError, TruncationError


def rand_cube(rng, shape):
    return VideoCube(rng.random(shape))


class TestVideoCube:
    def test_rejects_nonfinite(self):
        with pytest.raises(DataError):
            VideoCube(np.array([1.0, np.nan]))

    def test_rejects_too_many_dims(self):
        with pytest.raises(ShapeError):
            VideoCube(np.zeros((2, 2, 2, 2, 2)))

    def test_rejects_zero_extent(self):
        with pytest.raises(ShapeError):
            VideoCube(np.zeros((2, 0)))


class TestVcubeFormat:
    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        cube = rand_cube(rng, (3, 5, 2, 4))
        p = tmp_path / "c.vcube"
        save_cube(cube, p)
        loaded = load_cube(p)
        assert loaded == cube
        # byte-identical re-save
        p2 = tmp_path / "c2.vcube"
        save_cube(loaded, p2)
        assert p.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.vcube"
        p.write_bytes(b"XCUB" + b"\x00" * 16)
        with pytest.raises(FormatError):
            load_cube(p)

    def test_truncation(self, tmp_path):
        import struct

        p = tmp_path / "short.vcube"
        # header declares 2x2x1x1 = 4 values but payload has 3
        blob = b"VCUB" + struct.pack("<BBBB", 1, 1, 4, 0)
        blob += struct.pack("<4I", 2, 2, 1, 1)
        blob += np.zeros(3).tobytes()
        p.write_bytes(blob)
        with pytest.raises(TruncationError):
            load_cube(p)

    def test_float32_payload_loads(self, tmp_path):
        import struct

        p = tmp_path / "f32.vcube"
        vals = np.arange(6, dtype="<f4")
        blob = b"VCUB" + struct.pack("<BBBB", 1, 0, 2, 0) + struct.pack("<2I", 2, 3)
        blob += vals.tobytes()
        p.write_bytes(blob)
        cube = load_cube(p)
        assert cube.dims == (2, 3)
        np.testing.assert_array_equal(cube.data, vals.reshape(2, 3))

    def test_nonfinite_payload(self, tmp_path):
        import struct

        p = tmp_path / "nan.vcube"
        blob = b"VCUB" + struct.pack("<BBBB", 1, 1, 1, 0) + struct.pack("<I", 2)
        blob += np.array([1.0, np.inf]).tobytes()
        p.write_bytes(blob)
        with pytest.raises(DataError):
            load_cube(p)


class TestPpm:
    def test_header_and_size(self, tmp_path):
        p = tmp_path / "f.ppm"
        save_ppm(np.full((4, 6, 3), 0.5), p)
        data = p.read_bytes()
        assert data.startswith(b"P6\n6 4\n255\n")
        assert len(data) == len(b"P6\n6 4\n255\n") + 4 * 6 * 3


class TestPsnr:
    def test_identical_hits_cap(self):
        c = rand_cube(np.random.default_rng(1), (4, 4, 3, 2))
        assert psnr(c, c) == PSNR_CAP_DB

    def test_uniform_offset(self):
        ref = VideoCube(np.full((8, 8, 3, 2), 0.5))
        tst = VideoCube(np.full((8, 8, 3, 2), 0.6))
        assert psnr(ref, tst) == pytest.approx(20.0, abs=1e-9)

    def test_quarter_offset(self):
        ref = VideoCube(np.full((8, 8, 3, 2), 0.5))
        tst = VideoCube(np.full((8, 8, 3, 2), 0.75))
        assert psnr(ref, tst) == pytest.approx(12.0412, abs=1e-4)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(VideoCube(np.zeros((4, 4, 3, 2))), VideoCube(np.zeros((4, 4, 3, 3))))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        a = rand_cube(rng, (6, 6, 3, 2))
        b = rand_cube(rng, (6, 6, 3, 2))
        assert psnr(a, b) == psnr(b, a)


def ssim_oracle(ref, tst, window):
    """Direct per-window evaluation of the SSIM formula."""
    from quadsci.cube import SSIM_C1, SSIM_C2

    k = window.shape[0]
    h, w = ref.shape
    vals = []
    for i in range(h - k + 1):
        for j in range(w - k + 1):
            a = ref[i : i + k, j : j + k]
            b = tst[i : i + k, j : j + k]
            mu1 = (window * a).sum()
            mu2 = (window * b).sum()
            s11 = (window * a * a).sum() - mu1 * mu1
            s22 = (window * b * b).sum() - mu2 * mu2
            s12 = (window * a * b).sum() - mu1 * mu2
            num = (2 * mu1 * mu2 + SSIM_C1) * (2 * s12 + SSIM_C2)
            den = (mu1 * mu1 + mu2 * mu2 + SSIM_C1) * (s11 + s22 + SSIM_C2)
            vals.append(num / den)
    return float(np.mean(vals))


class TestSsim:
    def test_self_similarity(self):
        c = rand_cube(np.random.default_rng(2), (16, 16, 3, 2))
        assert ssim(c, c) == 1.0

    def test_constant_planes(self):
        # zero-variance case: C1 / (1 + C1)
        ref = VideoCube(np.zeros((16, 16, 1, 1)))
        tst = VideoCube(np.ones((16, 16, 1, 1)))
        expected = 1e-4 / (1 + 1e-4)
        assert ssim(ref, tst) == pytest.approx(expected, rel=1e-9)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        ref = rng.random((16, 16))
        tst = rng.random((16, 16))
        win = gaussian_window()
        expected = ssim_oracle(ref, tst, win)
        got = ssim(VideoCube(ref[:, :, None, None]), VideoCube(tst[:, :, None, None]))
        assert got == pytest.approx(expected, abs=1e-9)

    def test_too_small_frame(self):
        with pytest.raises(ConfigError):
            ssim(VideoCube(np.zeros((8, 8, 1, 1))), VideoCube(np.ones((8, 8, 1, 1))))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=10, deadline=None)
    def test_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        a = rand_cube(rng, (12, 12, 1, 1))
        b = rand_cube(rng, (12, 12, 1, 1))
        assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12


class TestEvaluate:
    def test_report_fields(self):
        rng = np.random.default_rng(4)
        a = rand_cube(rng, (16, 16, 3, 3))
        b = rand_cube(rng, (16, 16, 3, 3))
        rep = evaluate(a, b)
        assert len(rep.per_frame_psnr) == 3
        assert len(rep.per_frame_ssim) == 3
        assert -1.0 <= rep.ssim <= 1.0
        assert rep.psnr_db >= 0.0
