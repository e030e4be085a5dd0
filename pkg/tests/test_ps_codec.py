import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psupmix.audio_io import AudioBuffer
from psupmix.errors import ChannelCountError, ConfigError, ShapeError, TokenRangeError
from psupmix.ps_codec import (
    DecorrConfig,
    PsParams,
    PsTokens,
    QuantGrids,
    decode,
    decorrelate,
    dequantize,
    encode,
    load_ps_file,
    mixing_matrices,
    quantize,
    save_ps_file,
)
from psupmix.spectral import cross_spectrogram, stft

from conftest import frames_to_samples, noise_buffer


def spec_of(x):
    return stft(AudioBuffer(np.asarray(x)[None, :]))


class TestEncode:
    def test_identical_channels(self, band_map, rng):
        left = spec_of(rng.standard_normal(frames_to_samples(10)))
        p = encode(left, left, band_map)
        assert np.abs(p.iid).max() < 1e-9
        assert np.abs(p.ic - 1.0).max() < 1e-9

    def test_half_amplitude_right(self, band_map, rng):
        left = spec_of(rng.standard_normal(frames_to_samples(10)))
        p = encode(left, 0.5 * left, band_map)
        assert np.abs(p.iid - 10 * np.log10(4.0)).max() < 1e-3
        assert abs(p.iid.mean() - 6.0206) < 1e-3
        assert np.abs(p.ic - 1.0).max() < 1e-6

    def test_antiphase(self, band_map, rng):
        left = spec_of(rng.standard_normal(frames_to_samples(10)))
        p = encode(left, -left, band_map)
        assert np.abs(p.ic + 1.0).max() < 1e-6

    def test_silence_defaults(self, band_map):
        zero = np.zeros((2049, 5), dtype=complex)
        p = encode(zero, zero, band_map)
        assert np.all(p.iid == 0.0)
        assert np.all(p.ic == 1.0)

    def test_iid_clamped(self, band_map, rng):
        left = spec_of(rng.standard_normal(frames_to_samples(10)))
        p = encode(left, 1e-9 * left, band_map)
        assert p.iid.max() <= 60.0

    def test_shape_mismatch(self, band_map):
        with pytest.raises(ShapeError):
            encode(np.zeros((2049, 3)), np.zeros((2049, 4)), band_map)


class TestQuantizer:
    def test_default_grid_sizes(self, grids):
        assert grids.n_iid == 31
        assert grids.n_ic == 8
        assert grids.n_tokens == 248

    def test_balanced_coherent_token(self, grids):
        p = PsParams(np.zeros((34, 2)), np.ones((34, 2)))
        q = quantize(p, grids)
        assert np.all(q.q == 8 * 15 + 0)
        back = dequantize(q, grids)
        assert np.all(back.iid == 0.0)
        assert np.all(back.ic == 1.0)

    def test_nearest_level_matches_bruteforce(self, grids, rng):
        # Oracle: exhaustive scan over all grid levels per element.
        p = PsParams(rng.uniform(-55, 55, (34, 7)), rng.uniform(-1, 1, (34, 7)))
        q_iid, q_ic = quantize(p, grids).split()
        brute_iid = np.empty_like(q_iid)
        brute_ic = np.empty_like(q_ic)
        for i in range(34):
            for j in range(7):
                brute_iid[i, j] = min(
                    range(31), key=lambda k: (abs(p.iid[i, j] - grids.iid_levels[k]), k)
                )
                brute_ic[i, j] = min(
                    range(8), key=lambda k: (abs(p.ic[i, j] - grids.ic_levels[k]), k)
                )
        assert np.array_equal(q_iid, brute_iid)
        assert np.array_equal(q_ic, brute_ic)

    def test_quantize_dequantize_projection(self, grids, rng):
        p = PsParams(rng.uniform(-50, 50, (34, 5)), rng.uniform(-1, 1, (34, 5)))
        once = dequantize(quantize(p, grids), grids)
        twice = dequantize(quantize(once, grids), grids)
        assert np.array_equal(once.joined(), twice.joined())

    def test_dequantize_error_bounded_by_half_gap(self, grids, rng):
        p = PsParams(np.zeros((34, 50)), rng.uniform(-1, 1, (34, 50)))
        back = dequantize(quantize(p, grids), grids)
        half_gap = np.abs(np.diff(grids.ic_levels)).max() / 2
        assert np.abs(back.ic - p.ic).max() <= half_gap + 1e-12

    def test_token_out_of_range(self, grids):
        with pytest.raises(TokenRangeError):
            dequantize(PsTokens(np.full((34, 2), 248)), grids)

    @settings(max_examples=30, deadline=None)
    @given(q_iid=st.integers(0, 30), q_ic=st.integers(0, 7))
    def test_fused_token_bijection(self, q_iid, q_ic):
        tok = PsTokens.fuse(np.array([[q_iid]]), np.array([[q_ic]]))
        back_iid, back_ic = tok.split()
        assert back_iid[0, 0] == q_iid
        assert back_ic[0, 0] == q_ic
        assert 0 <= tok.q[0, 0] <= 247

    def test_grid_file_roundtrip(self, grids, tmp_path):
        grids.save(tmp_path / "grids.txt")
        loaded = QuantGrids.load(tmp_path / "grids.txt")
        assert np.array_equal(loaded.iid_levels, grids.iid_levels)
        assert np.array_equal(loaded.ic_levels, grids.ic_levels)


class TestDecorrelate:
    def test_noise_decorrelation(self):
        x = noise_buffer(44100, seed=11)
        y = decorrelate(x).samples[0]
        xs = x.samples[0]
        corr = np.dot(xs, y) / np.sqrt(np.dot(xs, xs) * np.dot(y, y))
        assert abs(corr) < 0.3

    def test_allpass_preserves_sine_rms(self):
        t = np.arange(2 * 44100) / 44100.0
        x = np.sin(2 * np.pi * 500.0 * t)
        y = decorrelate(AudioBuffer(x[None, :])).samples[0]
        assert abs(np.sqrt((y ** 2).mean() / (x ** 2).mean()) - 1.0) < 0.01

    def test_transient_frame_bypasses_cascade(self):
        cfg = DecorrConfig()
        x = np.zeros(20 * cfg.block_size)
        rng = np.random.default_rng(0)
        x[: 8 * cfg.block_size] = 0.01 * rng.standard_normal(8 * cfg.block_size)
        hit = 9 * cfg.block_size + 100
        x[hit] = 1.0
        y = decorrelate(AudioBuffer(x[None, :]), cfg).samples[0]
        block = slice(9 * cfg.block_size, 10 * cfg.block_size)
        assert np.array_equal(y[block], x[block])

    def test_unstable_gain_rejected(self):
        with pytest.raises(ConfigError):
            DecorrConfig(sections=((331, 1.0),))

    def test_equal_length_output(self):
        x = noise_buffer(12345, seed=2)
        assert decorrelate(x).length == x.length

    def test_mono_required(self, rng):
        with pytest.raises(ChannelCountError):
            decorrelate(AudioBuffer(rng.standard_normal((2, 1000))))


class TestMixingMatrices:
    def test_balanced_coherent_passthrough(self):
        p = PsParams(np.zeros((34, 2)), np.ones((34, 2)))
        m_a, m_b, m_c, m_d = mixing_matrices(p)
        assert np.allclose(m_a, 1.0) and np.allclose(m_c, 1.0)
        assert np.allclose(m_b, 0.0) and np.allclose(m_d, 0.0)

    def test_antiphase_unit_power_and_reencode(self, band_map, rng):
        p = PsParams(np.zeros((34, 1)), np.full((34, 1), -1.0))
        m_a, m_b, m_c, m_d = mixing_matrices(p)
        assert np.allclose(m_a ** 2 + m_b ** 2, 1.0)
        # re-encode oracle: decode orthogonal unit inputs, measure IC
        frames = 40
        pf = PsParams(np.zeros((34, frames)), np.full((34, frames), -1.0))
        mono = spec_of(rng.standard_normal(frames_to_samples(frames)))
        wet = spec_of(rng.standard_normal(frames_to_samples(frames)))
        left, right = decode(mono, wet, pf, band_map)
        back = encode(left, right, band_map)
        assert np.median(back.ic) < -0.95

    def test_hard_left_limit(self):
        p = PsParams(np.full((34, 1), 60.0), np.ones((34, 1)))
        m_a, m_b, m_c, m_d = mixing_matrices(p)
        assert np.allclose(m_a, np.sqrt(2.0), atol=1e-5)
        assert (m_c ** 2 + m_d ** 2).max() < 1e-5

    def test_power_ratio_and_correlation_identity(self):
        # analytic identity with exactly orthonormal synthetic inputs
        rng = np.random.default_rng(5)
        iid = rng.uniform(-20, 20, (34, 1))
        ic = rng.uniform(-1, 1, (34, 1))
        m_a, m_b, m_c, m_d = mixing_matrices(PsParams(iid, ic))
        left_power = m_a ** 2 + m_b ** 2
        right_power = m_c ** 2 + m_d ** 2
        assert np.abs(10 * np.log10(left_power / right_power) - iid).max() < 1e-6
        cross = m_a * m_c + m_b * m_d
        assert np.abs(cross / np.sqrt(left_power * right_power) - ic).max() < 1e-6


class TestDecode:
    def test_passthrough(self, band_map, rng):
        mono = spec_of(rng.standard_normal(frames_to_samples(8)))
        wet = spec_of(rng.standard_normal(frames_to_samples(8)))
        p = PsParams(np.zeros((34, mono.shape[1])), np.ones((34, mono.shape[1])))
        left, right = decode(mono, wet, p, band_map)
        assert np.array_equal(left, mono)
        assert np.array_equal(right, mono)

    def test_roundtrip_random_tokens(self, band_map, grids, rng):
        # module's central test: decode over noise, re-encode, compare
        frames = 44
        mono = spec_of(rng.standard_normal(frames_to_samples(frames)))
        wet = spec_of(rng.standard_normal(frames_to_samples(frames)))
        tokens = PsTokens(rng.integers(0, 248, (34, frames)))
        p = dequantize(tokens, grids)
        left, right = decode(mono, wet, p, band_map)
        back = encode(left, right, band_map)
        iid_gap = np.diff(grids.iid_levels).min()
        ic_gap = np.abs(np.diff(grids.ic_levels)).min()
        assert np.median(np.abs(back.iid - p.iid)) <= iid_gap
        assert np.median(np.abs(back.ic - p.ic)) <= ic_gap

    def test_energy_conservation(self, band_map, rng):
        frames = 60
        mono = spec_of(rng.standard_normal(frames_to_samples(frames)))
        wet = spec_of(rng.standard_normal(frames_to_samples(frames)))
        p = PsParams(
            rng.uniform(-15, 15, (34, frames)), rng.uniform(-1, 1, (34, frames))
        )
        left, right = decode(mono, wet, p, band_map)
        out_power = (
            cross_spectrogram(left, left, band_map).real
            + cross_spectrogram(right, right, band_map).real
        ).mean(axis=1)
        in_power = 2 * cross_spectrogram(mono, mono, band_map).real.mean(axis=1)
        ratio = out_power / in_power
        assert np.abs(np.median(ratio) - 1.0) < 0.05

    def test_frame_count_mismatch(self, band_map):
        mono = np.zeros((2049, 5), dtype=complex)
        p = PsParams(np.zeros((34, 4)), np.ones((34, 4)))
        with pytest.raises(ShapeError):
            decode(mono, mono, p, band_map)


class TestPsFile:
    def test_params_roundtrip(self, tmp_path, rng):
        p = PsParams(
            rng.uniform(-40, 40, (34, 9)).astype(np.float32).astype(np.float64),
            rng.uniform(-1, 1, (34, 9)).astype(np.float32).astype(np.float64),
        )
        save_ps_file(tmp_path / "p.psp", p)
        loaded = load_ps_file(tmp_path / "p.psp")
        assert isinstance(loaded, PsParams)
        assert np.array_equal(loaded.joined(), p.joined())

    def test_tokens_roundtrip(self, tmp_path, rng):
        q = PsTokens(rng.integers(0, 248, (34, 13)))
        save_ps_file(tmp_path / "q.psp", q)
        loaded = load_ps_file(tmp_path / "q.psp")
        assert isinstance(loaded, PsTokens)
        assert np.array_equal(loaded.q, q.q)

    def test_header_layout(self, tmp_path):
        q = PsTokens(np.zeros((34, 3), dtype=np.int64))
        save_ps_file(tmp_path / "q.psp", q)
        raw = (tmp_path / "q.psp").read_bytes()
        assert raw[:4] == b"PSP1"
        import struct

        n_bands, n_frames, kind = struct.unpack("<IIB", raw[4:13])
        assert (n_bands, n_frames, kind) == (34, 3, 1)
        assert len(raw) == 13 + 34 * 3 * 2
