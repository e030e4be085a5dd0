import numpy as np
import pytest

from psupmix.audio_io import AudioBuffer, load_wav, save_wav
from psupmix.cli import main
from psupmix.ps_codec import PsParams, encode, load_ps_file
from psupmix.spectral import stft

from conftest import frames_to_samples


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(10)
    x = rng.uniform(-0.4, 0.4, frames_to_samples(40))
    save_wav(root / "stereo.wav", AudioBuffer(np.vstack([1.4 * x, 0.7 * x])))
    save_wav(root / "mono.wav", AudioBuffer(x[None, :]))
    corpus = root / "corpus"
    corpus.mkdir()
    for i in range(3):
        y = rng.uniform(-0.4, 0.4, frames_to_samples(30))
        gain = 10 ** (rng.uniform(-8, 8) / 40)
        save_wav(corpus / f"c{i}.wav", AudioBuffer(np.vstack([gain * y, y / gain])))
    return root


def run(*argv):
    return main([str(a) for a in argv])


class TestEncodeDecode:
    def test_encode_writes_params_and_mono(self, workdir):
        out = workdir / "params.psp"
        mono = workdir / "dm.wav"
        assert run("encode", workdir / "stereo.wav", "-o", out, "--mono", mono) == 0
        assert out.exists() and mono.exists()
        payload = load_ps_file(out)
        assert isinstance(payload, PsParams)
        assert payload.n_frames == 40

    def test_token_payload(self, workdir):
        out = workdir / "tokens.psp"
        assert run("encode", workdir / "stereo.wav", "-o", out, "--tokens") == 0
        from psupmix.ps_codec import PsTokens

        assert isinstance(load_ps_file(out), PsTokens)

    def test_decode_roundtrip_within_quantizer_step(self, workdir, band_map, grids):
        params = workdir / "tokens.psp"
        run("encode", workdir / "stereo.wav", "-o", params, "--tokens", "--mono", workdir / "dm.wav")
        out = workdir / "rt.wav"
        assert run("decode", workdir / "dm.wav", params, "-o", out) == 0
        decoded = load_wav(out)
        left = stft(AudioBuffer(decoded.samples[:1]))
        right = stft(AudioBuffer(decoded.samples[1:2]))
        back = encode(left, right, band_map)
        # source is a coherent 6 dB pan: decoded output must re-encode to it
        assert abs(np.median(back.iid) - 20 * np.log10(2.0)) <= np.diff(grids.iid_levels).min()
        assert np.median(np.abs(back.ic - 1.0)) <= np.abs(np.diff(grids.ic_levels)).min()

    def test_mismatched_param_length_fails(self, workdir, tmp_path):
        from psupmix.ps_codec import save_ps_file

        bad = tmp_path / "bad.psp"
        save_ps_file(bad, PsParams(np.zeros((34, 7)), np.ones((34, 7))))
        assert run("decode", workdir / "dm.wav", bad, "-o", tmp_path / "x.wav") == 1


class TestUpmixCommand:
    def test_decorr_needs_no_assets(self, workdir):
        out = workdir / "up.wav"
        assert run("upmix", workdir / "mono.wav", "--gen", "decorr", "-o", out) == 0
        assert load_wav(out).channels == 2

    def test_idempotent_given_seed(self, workdir):
        a, b = workdir / "a.wav", workdir / "b.wav"
        for out in (a, b):
            run("upmix", workdir / "mono.wav", "--gen", "decorr", "-o", out, "--seed", 5)
        assert a.read_bytes() == b.read_bytes()

    def test_missing_asset_is_usage_failure(self, workdir):
        assert run("upmix", workdir / "mono.wav", "--gen", "nn", "-o", workdir / "x.wav") == 1

    def test_unknown_flag_exits_2(self, workdir):
        with pytest.raises(SystemExit) as exc:
            run("upmix", workdir / "mono.wav", "--nonsense")
        assert exc.value.code == 2


class TestIndexAndEval:
    def test_build_index_and_nn_upmix(self, workdir):
        index = workdir / "idx.pnn"
        assert run("build-index", workdir / "corpus", "-o", index, "--pairs", 300, "--frames", 10) == 0
        from psupmix.retrieval import NnIndex

        assert len(NnIndex.load(index)) == 300
        out = workdir / "upnn.wav"
        assert run(
            "upmix", workdir / "mono.wav", "--gen", "nn", "--index", index,
            "-o", out, "--frames", 10,
        ) == 0
        assert load_wav(out).channels == 2

    def test_eval_writes_csv_and_figure(self, workdir):
        report = workdir / "eval.csv"
        assert run(
            "eval", workdir / "corpus", "--gen", "mono,decorr", "-o", report,
            "--k", 2, "--frames", 10,
        ) == 0
        lines = report.read_text().strip().splitlines()
        assert lines[0] == "excerpt,approach,e_min,d_f"
        assert lines[-1].startswith("summary,mean,")
        assert len(lines) == 1 + 3 * 2 + 1
        assert (workdir / "eval.png").exists()
        mono_rows = [l for l in lines[1:-1] if ",mono," in l]
        decorr_rows = [l for l in lines[1:-1] if ",decorr," in l]
        assert len(mono_rows) == 3 and len(decorr_rows) == 3


class TestTrainCommand:
    def test_toy_training_run(self, workdir):
        ckpt = workdir / "model.psm"
        log = workdir / "train.csv"
        assert run(
            "train", workdir / "corpus", "--mode", "mtm", "-o", ckpt, "--log", log,
            "--toy", "--steps", 4, "--batch", 2, "--frames", 8,
            "--chunk-seconds", str(frames_to_samples(30) / 44100),
        ) == 0
        from psupmix.model import load_model

        model = load_model(ckpt)
        assert model.config.n_blocks == 2
        header = log.read_text().splitlines()[0]
        assert header == "step,lr,loss,w_mean"
        assert (workdir / "train.png").exists()

    def test_upmix_with_trained_checkpoint(self, workdir):
        out = workdir / "upmtm.wav"
        assert run(
            "upmix", workdir / "mono.wav", "--gen", "mtm",
            "--checkpoint", workdir / "model.psm", "-o", out,
            "--frames", 8, "--steps", 3,
        ) == 0
        assert load_wav(out).length == load_wav(workdir / "mono.wav").length


class TestBenchCommand:
    def test_bench_reports_rtf(self, workdir):
        out = workdir / "bench.csv"
        assert run(
            "bench", "-o", out, "--gen", "decorr,reg", "--toy",
            "--seconds", 0.6, "--frames", 8, "--steps", 2,
        ) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "approach,learnable,rtf"
        assert len(lines) == 3
        assert (workdir / "bench.png").exists()
        decorr_params = int(lines[1].split(",")[1])
        assert decorr_params == 0


class TestConfigFile:
    def test_precedence_flags_over_config_over_defaults(self, workdir, tmp_path):
        config = tmp_path / "cfg.txt"
        config.write_text("gen=decorr\nseed=9\n")
        out = workdir / "cfgout.wav"
        assert run(
            "upmix", workdir / "mono.wav", "--config", config, "-o", out
        ) == 0
        assert out.exists()
        with_flag = workdir / "cfgout2.wav"
        assert run(
            "upmix", workdir / "mono.wav", "--config", config,
            "--gen", "decorr", "-o", with_flag, "--seed", 9,
        ) == 0
        assert with_flag.read_bytes() == out.read_bytes()

    def test_unknown_config_key_fails(self, workdir, tmp_path):
        config = tmp_path / "cfg.txt"
        config.write_text("volume=11\n")
        assert run("upmix", workdir / "mono.wav", "--config", config) == 1
