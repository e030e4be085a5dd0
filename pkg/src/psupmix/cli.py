"""Command-line front end.

Subcommands: encode, decode, upmix, build-index, train, eval, bench.
Option precedence is flags > config file (``key=value`` lines via
``--config``) > built-in defaults. Report-producing commands (train, eval,
bench) write a CSV plus a rendered PNG figure next to it.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from . import report
from .audio_io import AudioBuffer, PatchSpec, downmix, load_wav, save_wav
from .decorr import IcProfile, default_ic_profile
from .errors import DataError, PsUpmixError
from .generators import (
    ArSampleConfig,
    MtmSampleConfig,
    SampleConfig,
    generate_params,
    upmix,
)
from .metrics import MetricConfig, e_min, frechet
from .model import (
    ModelConfig,
    PatchSampler,
    SeqModel,
    TrainConfig,
    fit,
    load_model,
    save_model,
)
from .ps_codec import (
    PsParams,
    PsTokens,
    QuantGrids,
    decode,
    decorrelate,
    dequantize,
    encode,
    load_ps_file,
    quantize,
    save_ps_file,
)
from .retrieval import NnConfig, NnIndex, build_index
from .spectral import BandMap, StftConfig, istft, make_band_map, stft

_STFT = StftConfig()


def _load_config_file(path) -> dict:
    values = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _merge_options(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Apply flags > config file > defaults."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        config = _load_config_file(args.config)
        for key, raw in config.items():
            if key not in defaults:
                raise DataError(f"unknown config key {key!r}")
            template = defaults[key]
            if isinstance(template, bool):
                merged[key] = raw.lower() in ("1", "true", "yes")
            elif template is None:
                merged[key] = raw
            else:
                merged[key] = type(template)(raw)
    merged.update({k: v for k, v in vars(args).items() if v is not argparse.SUPPRESS})
    return argparse.Namespace(**merged)


def _band_map(opts) -> BandMap:
    if getattr(opts, "bands", None):
        return BandMap.load(opts.bands, bins=_STFT.bins)
    return make_band_map(_STFT.bins)


def _grids(opts) -> QuantGrids:
    if getattr(opts, "grids", None):
        return QuantGrids.load(opts.grids)
    return QuantGrids()


def _model_config(opts, mode: str) -> ModelConfig:
    if getattr(opts, "toy", False):
        return ModelConfig.toy(mode=mode)
    return ModelConfig(mode=mode)


def _sample_config(opts) -> SampleConfig:
    ar = ArSampleConfig(
        temperature=opts.tau if opts.tau is not None else 0.9,
        guidance=opts.gamma if opts.gamma is not None else 0.25,
        context_frames=opts.frames,
    )
    mtm = MtmSampleConfig(
        noise_std=opts.tau if opts.tau is not None else 4.5,
        guidance=opts.gamma if opts.gamma is not None else 0.75,
        steps=opts.steps,
        patch_frames=opts.frames,
    )
    return SampleConfig(ar=ar, mtm=mtm, seed=opts.seed)


def _load_corpus(directory) -> list[AudioBuffer]:
    paths = sorted(Path(directory).glob("*.wav"))
    if not paths:
        raise DataError(f"no WAV files in {directory}")
    chunks = []
    for p in paths:
        buf = load_wav(p)
        if buf.channels != 2:
            raise DataError(f"{p}: corpus files must be stereo")
        chunks.append(buf)
    return chunks


def _frames_to_samples(frames: int) -> int:
    # Inverse of the frame-count formula: this length yields exactly `frames`.
    return (frames - 3) * _STFT.hop


def _generator_assets(opts, generators):
    model = load_model(opts.checkpoint) if getattr(opts, "checkpoint", None) else None
    index = NnIndex.load(opts.index) if getattr(opts, "index", None) else None
    for gen in generators:
        if gen in ("ar", "mtm", "reg") and model is None:
            raise DataError(f"generator {gen!r} needs --checkpoint")
        if gen == "nn" and index is None:
            raise DataError("generator 'nn' needs --index")
    return model, index


# -- subcommands -------------------------------------------------------------


def _cmd_encode(args):
    defaults = dict(output="params.psp", mono=None, tokens=False, grids=None, bands=None)
    opts = _merge_options(args, defaults)
    stereo = load_wav(opts.input)
    if stereo.channels != 2:
        raise DataError(f"{opts.input}: encode needs a stereo file")
    band_map = _band_map(opts)
    left = stft(AudioBuffer(stereo.samples[:1], stereo.sample_rate), _STFT)
    right = stft(AudioBuffer(stereo.samples[1:2], stereo.sample_rate), _STFT)
    params = encode(left, right, band_map)
    payload = quantize(params, _grids(opts)) if opts.tokens else params
    save_ps_file(opts.output, payload)
    print(f"wrote {opts.output} ({params.n_frames} frames)")
    if opts.mono:
        save_wav(opts.mono, downmix(stereo))
        print(f"wrote {opts.mono}")
    return 0


def _cmd_decode(args):
    defaults = dict(output="decoded.wav", grids=None, bands=None)
    opts = _merge_options(args, defaults)
    mono = load_wav(opts.mono)
    if mono.channels != 1:
        raise DataError(f"{opts.mono}: decode needs a mono file")
    payload = load_ps_file(opts.params)
    params = dequantize(payload, _grids(opts)) if isinstance(payload, PsTokens) else payload
    band_map = _band_map(opts)
    mono_spec = stft(mono, _STFT)
    if params.n_frames != mono_spec.shape[1]:
        raise DataError(
            f"parameter file covers {params.n_frames} frames, "
            f"audio has {mono_spec.shape[1]}"
        )
    wet_spec = stft(decorrelate(mono), _STFT)
    left, right = decode(mono_spec, wet_spec, params, band_map)
    out_l = istft(left, _STFT, length=mono.length)
    out_r = istft(right, _STFT, length=mono.length)
    save_wav(opts.output, AudioBuffer(np.vstack([out_l.samples, out_r.samples])))
    print(f"wrote {opts.output}")
    return 0


def _cmd_upmix(args):
    defaults = dict(
        gen="decorr", output="upmix.wav", checkpoint=None, index=None,
        ic_profile=None, grids=None, bands=None, seed=0, tau=None, gamma=None,
        steps=20, frames=20, toy=False,
    )
    opts = _merge_options(args, defaults)
    mono = load_wav(opts.input)
    if mono.channels != 1:
        raise DataError(f"{opts.input}: upmix needs a mono file")
    model, index = _generator_assets(opts, [opts.gen])
    profile = IcProfile.load(opts.ic_profile) if opts.ic_profile else None
    stereo = upmix(
        mono,
        opts.gen,
        band_map=_band_map(opts),
        ic_profile=profile,
        model=model,
        index=index,
        nn_cfg=NnConfig(n_context=opts.frames),
        sample_cfg=_sample_config(opts),
        grids=_grids(opts),
        rng=np.random.default_rng(opts.seed),
    )
    save_wav(opts.output, stereo)
    print(f"wrote {opts.output}")
    return 0


def _cmd_build_index(args):
    defaults = dict(output="index.pnn", pairs=50_000, frames=20, seed=0, bands=None)
    opts = _merge_options(args, defaults)
    corpus = _load_corpus(opts.corpus)
    index = build_index(
        corpus,
        opts.pairs,
        _band_map(opts),
        _STFT,
        NnConfig(n_context=opts.frames),
        np.random.default_rng(opts.seed),
    )
    index.save(opts.output)
    print(f"wrote {opts.output} ({len(index)} pairs)")
    return 0


def _cmd_train(args):
    defaults = dict(
        mode="mtm", output="model.psm", log=None, seed=0, toy=False,
        epochs=700, batch=128, lr=1e-4, steps=0, frames=0,
        chunk_seconds=10.0, patch_seconds=6.0, bands=None, grids=None,
    )
    opts = _merge_options(args, defaults)
    corpus = _load_corpus(opts.corpus)
    band_map = _band_map(opts)
    mode = "regression" if opts.mode == "reg" else "token"
    model = SeqModel(_model_config(opts, mode), seed=opts.seed)
    train_cfg = TrainConfig(lr=opts.lr, epochs=opts.epochs, batch_size=opts.batch)
    patch_seconds = opts.patch_seconds
    if opts.frames:
        patch_seconds = _frames_to_samples(opts.frames) / 44100.0
    sampler = PatchSampler(
        corpus,
        band_map,
        PatchSpec(chunk_seconds=opts.chunk_seconds, patch_seconds=patch_seconds),
        _STFT,
        _grids(opts),
    )
    total_steps = opts.steps
    if not total_steps:
        steps_per_epoch = max(1, len(corpus) // train_cfg.batch_size)
        total_steps = train_cfg.epochs * steps_per_epoch
    log_path = opts.log or str(Path(opts.output).with_suffix(".log.csv"))
    mask_mode = opts.mode if opts.mode in ("ar", "mtm") else None
    log = fit(
        model, sampler, train_cfg, total_steps,
        np.random.default_rng(opts.seed), mask_mode=mask_mode, log_path=log_path,
    )
    save_model(opts.output, model)
    figure = report.render_training_figure(log, log_path)
    print(
        f"wrote {opts.output} ({model.param_count()} parameters), "
        f"{log_path}, {figure}"
    )
    return 0


def _mono_params(n_bands: int, n_frames: int) -> PsParams:
    return PsParams(np.zeros((n_bands, n_frames)), np.ones((n_bands, n_frames)))


def _eval_samples(gen, mono_spec, band_map, opts, model, index, grids, k):
    """K parameter samples for one excerpt (deterministic generators give 1)."""
    rng = np.random.default_rng(opts.seed)
    if gen == "mono":
        return [_mono_params(band_map.n_bands, mono_spec.shape[1])]
    if gen in ("nn", "reg", "decorr"):
        k = 1  # deterministic parameter paths
    samples = []
    for _ in range(k):
        if gen == "decorr":
            profile = default_ic_profile(band_map)
            samples.append(
                PsParams(
                    np.zeros((band_map.n_bands, mono_spec.shape[1])),
                    np.tile(profile[:, None], (1, mono_spec.shape[1])),
                )
            )
            continue
        samples.append(
            generate_params(
                mono_spec, gen, band_map=band_map, model=model, index=index,
                nn_cfg=NnConfig(n_context=opts.frames),
                sample_cfg=_sample_config(opts), grids=grids, rng=rng,
            )
        )
    return samples


def _cmd_eval(args):
    defaults = dict(
        gen="decorr", output="eval.csv", checkpoint=None, index=None, grids=None,
        bands=None, seed=0, k=128, tau=None, gamma=None, steps=20, frames=20,
        toy=False,
    )
    opts = _merge_options(args, defaults)
    generators = [g.strip() for g in opts.gen.split(",")]
    model, index = _generator_assets(opts, [g for g in generators if g != "mono"])
    band_map = _band_map(opts)
    grids = _grids(opts)
    excerpts = sorted(Path(opts.testdir).glob("*.wav"))
    if not excerpts:
        raise DataError(f"no WAV files in {opts.testdir}")
    rows = []
    for path in excerpts:
        stereo = load_wav(path)
        if stereo.channels != 2:
            raise DataError(f"{path}: eval needs stereo ground truth")
        left = stft(AudioBuffer(stereo.samples[:1]), _STFT)
        right = stft(AudioBuffer(stereo.samples[1:2]), _STFT)
        truth = encode(left, right, band_map)
        mono_spec = stft(downmix(stereo), _STFT)
        for gen in generators:
            samples = _eval_samples(
                gen, mono_spec, band_map, opts, model, index, grids, opts.k
            )
            err = e_min(truth, samples, MetricConfig(k_samples=len(samples)))
            truth_pool = truth.joined().T
            sample_pool = np.concatenate([s.joined().T for s in samples], axis=0)
            rows.append((path.stem, gen, err, frechet(truth_pool, sample_pool)))
    _write_eval_csv(opts.output, rows)
    figure = report.render_eval_figure(rows, opts.output)
    print(f"wrote {opts.output}, {figure}")
    return 0


def _write_eval_csv(path, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["excerpt", "approach", "e_min", "d_f"])
        for row in rows:
            writer.writerow([row[0], row[1], f"{row[2]:.6f}", f"{row[3]:.6f}"])
        writer.writerow(
            [
                "summary",
                "mean",
                f"{np.mean([r[2] for r in rows]):.6f}",
                f"{np.mean([r[3] for r in rows]):.6f}",
            ]
        )


def _cmd_bench(args):
    defaults = dict(
        output="bench.csv", checkpoint=None, index=None, seed=0, seconds=2.0,
        frames=20, steps=20, tau=None, gamma=None, toy=True, bands=None,
        grids=None, gen="decorr,reg,nn,mtm,ar",
    )
    opts = _merge_options(args, defaults)
    rng = np.random.default_rng(opts.seed)
    if getattr(args, "input", None):
        mono = load_wav(opts.input)
        if mono.channels == 2:
            mono = downmix(mono)
        crop = min(mono.length, int(opts.seconds * 44100))
        mono = AudioBuffer(mono.samples[:, :crop])
    else:
        mono = AudioBuffer(rng.uniform(-0.5, 0.5, size=(1, int(opts.seconds * 44100))))
    band_map = _band_map(opts)
    generators = [g.strip() for g in opts.gen.split(",")]
    token_model = reg_model = None
    if opts.checkpoint:
        token_model = load_model(opts.checkpoint)
    elif any(g in generators for g in ("ar", "mtm")):
        token_model = SeqModel(_model_config(opts, "token"), seed=opts.seed)
    if "reg" in generators:
        reg_model = SeqModel(_model_config(opts, "regression"), seed=opts.seed)
    index = None
    if "nn" in generators:
        if opts.index:
            index = NnIndex.load(opts.index)
        else:
            keys = rng.uniform(0, 100, size=(50_000, band_map.n_bands))
            values = np.concatenate(
                [
                    rng.uniform(-20, 20, size=(50_000, band_map.n_bands)),
                    rng.uniform(-1, 1, size=(50_000, band_map.n_bands)),
                ],
                axis=1,
            )
            index = NnIndex(keys, values)
    rows = []
    for gen in generators:
        model = reg_model if gen == "reg" else token_model
        start = time.perf_counter()
        upmix(
            mono, gen, band_map=band_map, model=model, index=index,
            nn_cfg=NnConfig(n_context=opts.frames),
            sample_cfg=_sample_config(opts), rng=np.random.default_rng(opts.seed),
        )
        elapsed = time.perf_counter() - start
        if gen == "decorr":
            params = 0
        elif gen == "nn":
            params = len(index) * (index.key_dim + index.value_dim)
        else:
            params = model.param_count()
        rows.append((gen, params, elapsed / mono.duration))
        print(f"{gen}: {params} learnable values, RTF {elapsed / mono.duration:.3f}")
    with open(opts.output, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["approach", "learnable", "rtf"])
        for gen, params, rtf in rows:
            writer.writerow([gen, params, f"{rtf:.4f}"])
    figure = report.render_bench_figure(rows, opts.output)
    print(f"wrote {opts.output}, {figure}")
    return 0


# -- parser ------------------------------------------------------------------


def _add_common(parser):
    parser.add_argument("--config", help="key=value config file", default=None)
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="RNG seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psupmix",
        description="Parametric-stereo mono-to-stereo upmixing toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    s = argparse.SUPPRESS

    p = sub.add_parser("encode", help="stereo WAV -> PS parameter file (+ mono WAV)")
    p.add_argument("input")
    p.add_argument("-o", "--output", default=s)
    p.add_argument("--mono", default=s, help="also write the mono downmix")
    p.add_argument("--tokens", action="store_true", default=s,
                   help="store quantized tokens instead of float parameters")
    p.add_argument("--grids", default=s)
    p.add_argument("--bands", default=s)
    _add_common(p)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="mono WAV + PS file -> stereo WAV")
    p.add_argument("mono")
    p.add_argument("params")
    p.add_argument("-o", "--output", default=s)
    p.add_argument("--grids", default=s)
    p.add_argument("--bands", default=s)
    _add_common(p)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("upmix", help="mono WAV -> stereo WAV via a generator")
    p.add_argument("input")
    p.add_argument("--gen", choices=("nn", "ar", "mtm", "reg", "decorr"), default=s)
    p.add_argument("-o", "--output", default=s)
    p.add_argument("--checkpoint", default=s)
    p.add_argument("--index", default=s)
    p.add_argument("--ic-profile", dest="ic_profile", default=s)
    p.add_argument("--grids", default=s)
    p.add_argument("--bands", default=s)
    p.add_argument("--tau", type=float, default=s, help="sampler temperature / noise std")
    p.add_argument("--gamma", type=float, default=s, help="guidance strength")
    p.add_argument("--steps", type=int, default=s, help="MTM iterations")
    p.add_argument("--frames", type=int, default=s, help="context/patch frames")
    p.add_argument("--toy", action="store_true", default=s)
    _add_common(p)
    p.set_defaults(func=_cmd_upmix)

    p = sub.add_parser("build-index", help="corpus dir -> retrieval index")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", default=s)
    p.add_argument("--pairs", type=int, default=s)
    p.add_argument("--frames", type=int, default=s)
    p.add_argument("--bands", default=s)
    _add_common(p)
    p.set_defaults(func=_cmd_build_index)

    p = sub.add_parser("train", help="corpus dir -> model checkpoint + log")
    p.add_argument("corpus")
    p.add_argument("--mode", choices=("ar", "mtm", "reg"), default=s)
    p.add_argument("-o", "--output", default=s)
    p.add_argument("--log", default=s, help="training log CSV path")
    p.add_argument("--toy", action="store_true", default=s)
    p.add_argument("--epochs", type=int, default=s)
    p.add_argument("--batch", type=int, default=s)
    p.add_argument("--lr", type=float, default=s)
    p.add_argument("--steps", type=int, default=s, help="override total steps")
    p.add_argument("--frames", type=int, default=s, help="training patch length in frames")
    p.add_argument("--chunk-seconds", dest="chunk_seconds", type=float, default=s)
    p.add_argument("--patch-seconds", dest="patch_seconds", type=float, default=s)
    p.add_argument("--grids", default=s)
    p.add_argument("--bands", default=s)
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="test dir + generator -> metrics CSV + figure")
    p.add_argument("testdir")
    p.add_argument("--gen", default=s,
                   help="comma list of nn,ar,mtm,reg,decorr,mono")
    p.add_argument("-o", "--output", default=s)
    p.add_argument("--checkpoint", default=s)
    p.add_argument("--index", default=s)
    p.add_argument("--k", type=int, default=s, help="samples per excerpt")
    p.add_argument("--tau", type=float, default=s)
    p.add_argument("--gamma", type=float, default=s)
    p.add_argument("--steps", type=int, default=s)
    p.add_argument("--frames", type=int, default=s)
    p.add_argument("--grids", default=s)
    p.add_argument("--bands", default=s)
    p.add_argument("--toy", action="store_true", default=s)
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="measure real-time factors per approach")
    p.add_argument("input", nargs="?", default=None)
    p.add_argument("-o", "--output", default=s)
    p.add_argument("--gen", default=s, help="comma list of approaches to time")
    p.add_argument("--checkpoint", default=s)
    p.add_argument("--index", default=s)
    p.add_argument("--seconds", type=float, default=s, help="input length to time")
    p.add_argument("--frames", type=int, default=s)
    p.add_argument("--steps", type=int, default=s)
    p.add_argument("--tau", type=float, default=s)
    p.add_argument("--gamma", type=float, default=s)
    p.add_argument("--toy", action="store_true", default=s)
    p.add_argument("--bands", default=s)
    p.add_argument("--grids", default=s)
    _add_common(p)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PsUpmixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
