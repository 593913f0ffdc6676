"""Command-line surface: train, encode, decode, eval, inspect.

Exit codes: 0 success, 1 assertion/acceptance failure, 2 usage or file
format error, 3 dataset or environment error. Malformed input files are
reported with a diagnostic, never a traceback.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import checkpoint as ckpt_format
from . import dsp, evaluation, rvq
from .config import parse_config
from .corpus import corpus_from_manifest
from .errors import (ConfigError, DataError, DatasetError, FormatError,
                     NumericError, ParameterError, SemCodecError, ShapeError,
                     StateError)
from .semantic import SFEA_MAGIC, load_features
from .tokens import TOKEN_MAGIC, TokenFile, load_tokens, write_tokens
from .training import load_checkpoint, train_loop

_GLOBALS = (("--seed", {"type": int, "metavar": "U64"}),
            ("--config", {"metavar": "PATH"}),
            ("--quiet", {"action": "store_true"}))


def _add_globals(parser, suppress):
    for flag, kwargs in _GLOBALS:
        kw = dict(kwargs)
        if suppress:
            kw["default"] = argparse.SUPPRESS
        elif kw.get("action") == "store_true":
            kw["default"] = False
        else:
            kw["default"] = None
        parser.add_argument(flag, **kw)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="semcodec",
        description="Semantic-aware residual-quantizer audio codec.")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a codec on a corpus manifest")
    p.add_argument("mode", choices=("xcodec", "baseline"))
    p.add_argument("out_dir")
    p.add_argument("--resume", metavar="CHECKPOINT", default=None)
    _add_globals(p, suppress=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="waveform to token file")
    p.add_argument("checkpoint")
    p.add_argument("wav_path")
    p.add_argument("out_token_path")
    p.add_argument("--features", metavar="SFEA", default=None)
    p.add_argument("--m", type=int, default=8)
    _add_globals(p, suppress=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="token file to waveform")
    p.add_argument("checkpoint")
    p.add_argument("token_path")
    p.add_argument("out_wav")
    _add_globals(p, suppress=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="ABX or reconstruction evaluation")
    p.add_argument("suite", choices=("abx", "recon"))
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--m-list", default="1,8", metavar="M[,M...]")
    p.add_argument("--tap", choices=("pre_vq", "post_vq_m"), default="post_vq_m")
    p.add_argument("--max-triples", type=int, default=evaluation.DEFAULT_MAX_TRIPLES)
    p.add_argument("--compare", nargs=2, metavar=("BASELINE", "XCODEC"), default=None)
    _add_globals(p, suppress=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="describe a checkpoint/token/feature/wav file")
    p.add_argument("path")
    _add_globals(p, suppress=True)
    p.set_defaults(func=cmd_inspect)
    return parser


# -- subcommands ----------------------------------------------------------------


def cmd_train(args):
    config_path = getattr(args, "config", None)
    if not config_path:
        raise ConfigError("train requires --config <path>")
    run = parse_config(config_path)
    seed = getattr(args, "seed", None)
    if seed is not None:
        run = run.with_seed(seed)
    if not run.manifest:
        raise ConfigError("config lacks `manifest` in its [data] section")
    manifest = run.manifest
    if not os.path.isabs(manifest):
        manifest = os.path.join(os.path.dirname(os.path.abspath(config_path)), manifest)
    clips = corpus_from_manifest(manifest)
    quiet = getattr(args, "quiet", False)
    log = None if quiet else print
    path = train_loop(run.train, clips, args.mode, out_dir=args.out_dir,
                      codec_config=run.codec, log=log,
                      resume_from=getattr(args, "resume", None))
    if not quiet:
        print(f"final checkpoint: {path}")
    return 0


def cmd_encode(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    wav = dsp.load_wav(args.wav_path)
    feats = None
    if model.config.semantic_enabled:
        if args.features is None:
            raise DatasetError(
                f"checkpoint {args.checkpoint!r} is a semantic model; encoding "
                f"{args.wav_path!r} needs --features <sfea>")
        feats = load_features(args.features)
    tokens = model.encode_tokens(wav, feats, m=args.m)
    tf = TokenFile(tokens=tokens, sample_rate=wav.sample_rate,
                   original_length=wav.n, codebook_size=model.config.codebook_size)
    write_tokens(tf, args.out_token_path)
    print(f"T={tf.n_frames} m={tf.n_layers} bitrate_bps={tf.bitrate_bps():g}")
    return 0


def cmd_decode(args):
    tf = load_tokens(args.token_path)
    model, _, _ = load_checkpoint(args.checkpoint)
    cfg = model.config
    if tf.codebook_size != cfg.codebook_size:
        raise ParameterError(
            f"token/checkpoint mismatch in codebook_size: token file has "
            f"{tf.codebook_size}, checkpoint has {cfg.codebook_size}")
    if tf.n_layers > cfg.max_layers:
        raise ParameterError(
            f"token/checkpoint mismatch in n_layers: token file has "
            f"{tf.n_layers}, checkpoint supports {cfg.max_layers}")
    if tf.sample_rate != cfg.sample_rate:
        raise ParameterError(
            f"token/checkpoint mismatch in sample_rate: token file has "
            f"{tf.sample_rate}, checkpoint has {cfg.sample_rate}")
    wav = model.decode_tokens(tf.tokens, tf.original_length)
    dsp.save_wav(wav, args.out_wav)
    if not getattr(args, "quiet", False):
        print(f"wrote {wav.n} samples to {args.out_wav}")
    return 0


def _parse_m_list(text):
    try:
        m_list = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ParameterError(f"--m-list must be comma-separated integers, got {text!r}") \
            from None
    if not m_list:
        raise ParameterError("--m-list is empty")
    return m_list


def _abx_rates(model, manifest, m_list, tap, max_triples, seed):
    """[(m, within_rate, across_rate, n)] for one model."""
    rows = []
    for m in m_list:
        items = evaluation.abx_items_from_manifest(manifest, model=model, tap=tap, m=m)
        within = evaluation.abx_error_rate(items, "within", max_triples, seed)
        across = evaluation.abx_error_rate(items, "across", max_triples, seed)
        rows.append((m, within.within_error, across.across_error, within.n_triples))
        if tap == "pre_vq":
            break  # the pre-quantizer representation does not depend on m
    return rows


def cmd_eval(args):
    m_list = _parse_m_list(args.m_list)
    seed = getattr(args, "seed", None) or 0
    quiet = getattr(args, "quiet", False)

    if args.suite == "recon":
        if args.compare is not None:
            raise ParameterError("--compare applies to the abx suite")
        if not args.checkpoint:
            raise ParameterError("recon suite requires --checkpoint")
        model, _, _ = load_checkpoint(args.checkpoint)
        clips = corpus_from_manifest(args.manifest)
        rows = evaluation.reconstruction_report(model, clips, m_list)
        print(evaluation.format_reconstruction_table(rows))
        return 0

    if args.compare is not None:
        base_path, xc_path = args.compare
        baseline, _, _ = load_checkpoint(base_path, expect_semantic=False)
        xcodec, _, _ = load_checkpoint(xc_path, expect_semantic=True)
        base_rows = _abx_rates(baseline, args.manifest, m_list, args.tap,
                               args.max_triples, seed)
        xc_rows = _abx_rates(xcodec, args.manifest, m_list, args.tap,
                             args.max_triples, seed)
        violated = False
        for (m, bw, ba, n), (_, xw, xa, _) in zip(base_rows, xc_rows):
            print(f"m={m} within: baseline={bw:.4f} xcodec={xw:.4f} delta={xw - bw:+.4f}")
            print(f"m={m} across: baseline={ba:.4f} xcodec={xa:.4f} delta={xa - ba:+.4f}")
            if not (xw < bw and xa < ba):
                violated = True
        if violated:
            print("direction check FAILED: expected strictly lower error "
                  "for the semantic model in every cell")
            return 1
        if not quiet:
            print("direction check passed")
        return 0

    if not args.checkpoint:
        raise ParameterError("abx suite requires --checkpoint (or --compare)")
    model, _, _ = load_checkpoint(args.checkpoint)
    for m, within, across, n in _abx_rates(model, args.manifest, m_list, args.tap,
                                           args.max_triples, seed):
        label = "pre_vq" if args.tap == "pre_vq" else f"m={m}"
        print(f"[{label}] within={within:.4f} across={across:.4f}")
        print(evaluation.format_abx_line("within", within, n))
        print(evaluation.format_abx_line("across", across, n))
    return 0


def cmd_inspect(args):
    with open(args.path, "rb") as f:
        magic = f.read(4)
    if magic == ckpt_format.CHECKPOINT_MAGIC:
        arrays, meta = ckpt_format.read_arrays(args.path)
        print(f"format=checkpoint version={ckpt_format.CHECKPOINT_VERSION}")
        print(f"step={meta.get('step')} mode={meta.get('mode')} "
              f"semantic_enabled={meta.get('semantic_enabled')} gamma={meta.get('gamma')}")
        cfg = meta.get("codec_config", {})
        print(f"sample_rate={cfg.get('sample_rate')} fused_dim={cfg.get('fused_dim')} "
              f"codebook_size={cfg.get('codebook_size')} max_layers={cfg.get('max_layers')}")
        n_params = sum(int(np.prod(v.shape)) for k, v in arrays.items()
                       if k.startswith("param."))
        print(f"parameters={n_params}")
        layer = 0
        ppls = []
        while f"rvq.layer{layer}.ema_counts" in arrays:
            counts = arrays[f"rvq.layer{layer}.ema_counts"]
            ppls.append(rvq.perplexity_from_counts(counts))
            layer += 1
        if ppls:
            print("codebook_perplexity=[" + ",".join(f"{v:.2f}" for v in ppls) + "]")
        return 0
    if magic == TOKEN_MAGIC:
        tf = load_tokens(args.path)
        print(f"format=tokens M={tf.n_layers} T={tf.n_frames} K={tf.codebook_size}")
        print(f"sample_rate={tf.sample_rate} original_length={tf.original_length} "
              f"duration={tf.duration:.6f}s bitrate_bps={tf.bitrate_bps():g}")
        return 0
    if magic == SFEA_MAGIC:
        feats = load_features(args.path)
        print(f"format=features dim={feats.dim} frames={feats.frames} "
              f"frame_rate={feats.frame_rate:g}")
        return 0
    if magic == b"RIFF":
        wav = dsp.load_wav(args.path)
        print(f"format=wav samples={wav.n} sample_rate={wav.sample_rate} "
              f"duration={wav.duration:.6f}s")
        return 0
    raise FormatError(f"unknown format: magic {magic!r} is none of "
                      f"SCKP/SCTK/SFEA/RIFF")


# -- dispatch -----------------------------------------------------------------------


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, ParameterError, ShapeError, StateError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except IsADirectoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except PermissionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SemCodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
