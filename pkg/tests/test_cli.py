"""Command-line surface: exit codes, output contracts, file equivalence."""

import numpy as np
import pytest


from semcodec.cli import main
from semcodec.corpus import make_corpus, write_corpus
from semcodec.dsp import load_wav, save_wav
from semcodec.errors import DataError, FormatError
from semcodec.tokens import TokenFile, load_tokens, write_tokens
from semcodec.training import load_checkpoint

CONFIG_TEXT = """\
# desk-size run for the test suite
[codec]
stem_channels = 4
block_channels = 4,4,8,8
acoustic_hidden = 8
semantic_feature_dim = 12
semantic_hidden = 8
fused_dim = 8
codebook_size = 16
max_layers = 8

[train]
steps = 4
batch_size = 2
segment_samples = 640
lr = 0.001
seed = 7
checkpoint_every = 500
dead_code_every = 100
gamma = auto

[data]
manifest = corpus/manifest.txt
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Disk corpus + config + one trained checkpoint per mode."""
    root = tmp_path_factory.mktemp("cli")
    clips = make_corpus(n_per_cell=2, duration=0.2, seed=11, feature_dim=12)
    write_corpus(clips, root / "corpus")
    (root / "run.ini").write_text(CONFIG_TEXT, encoding="utf-8")
    paths = {"root": root, "config": root / "run.ini",
             "manifest": root / "corpus" / "manifest.txt",
             "wav": root / "corpus" / f"{clips[0].name}.wav",
             "sfea": root / "corpus" / f"{clips[0].name}.sfea"}
    for mode in ("baseline", "xcodec"):
        out = root / f"run-{mode}"
        code = main(["train", mode, str(out), "--config", str(root / "run.ini"),
                     "--quiet"])
        assert code == 0
        paths[mode] = out / f"{mode}-final.sckp"
        assert paths[mode].exists()
    return paths


# -- train ------------------------------------------------------------------------


def test_train_reports_final_checkpoint(workdir, tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["train", "baseline", str(out), "--config", str(workdir["config"])])
    stdout = capsys.readouterr().out
    assert code == 0
    assert "final checkpoint:" in stdout
    assert stdout.count("step=") == 4  # one log line per step


def test_train_quiet_prints_nothing(workdir, tmp_path, capsys):
    code = main(["train", "baseline", str(tmp_path / "q"), "--config",
                 str(workdir["config"]), "--quiet"])
    assert code == 0
    assert capsys.readouterr().out == ""


def test_train_without_config_exits_2(tmp_path, capsys):
    code = main(["train", "baseline", str(tmp_path / "x")])
    assert code == 2
    assert "--config" in capsys.readouterr().err


def test_config_parse_error_carries_line_and_column(workdir, tmp_path, capsys):
    bad = CONFIG_TEXT.replace("steps = 4", "steps = banana")
    path = tmp_path / "bad.ini"
    path.write_text(bad, encoding="utf-8")
    code = main(["train", "baseline", str(tmp_path / "x"), "--config", str(path)])
    err = capsys.readouterr().err
    line = CONFIG_TEXT.splitlines().index("steps = 4") + 1
    assert code == 2
    assert f"line {line}" in err and "column" in err and "banana" in err


def test_train_xcodec_without_features_exits_3(workdir, tmp_path, capsys):
    clips = make_corpus(n_per_cell=1, duration=0.2, seed=3, with_features=False,
                        categories=("aa", "iy"), contexts=("spk0", "spk1"))
    write_corpus(clips, tmp_path / "corpus")
    (tmp_path / "run.ini").write_text(CONFIG_TEXT, encoding="utf-8")
    code = main(["train", "xcodec", str(tmp_path / "out"), "--config",
                 str(tmp_path / "run.ini")])
    err = capsys.readouterr().err
    assert code == 3
    assert clips[0].name in err  # names the first naked clip


def test_train_determinism_byte_identical(workdir, tmp_path):
    finals = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "baseline", str(out), "--config",
                     str(workdir["config"]), "--quiet"]) == 0
        finals.append((out / "baseline-final.sckp").read_bytes())
    assert finals[0] == finals[1]
    assert finals[0] == workdir["baseline"].read_bytes()


def test_seed_flag_overrides_config(workdir, tmp_path):
    out = tmp_path / "s"
    assert main(["train", "baseline", str(out), "--config", str(workdir["config"]),
                 "--seed", "8", "--quiet"]) == 0
    assert (out / "baseline-final.sckp").read_bytes() != workdir["baseline"].read_bytes()


# -- encode / decode -----------------------------------------------------------------


def test_encode_summary_and_payload(workdir, tmp_path, capsys):
    out = tmp_path / "clip.sctk"
    code = main(["encode", str(workdir["baseline"]), str(workdir["wav"]), str(out),
                 "--m", "2"])
    stdout = capsys.readouterr().out
    assert code == 0
    # 3200 samples -> T=10; 2*10*log2(16) bits over 0.2 s = 400 bps
    assert "T=10 m=2 bitrate_bps=400" in stdout
    tf = load_tokens(str(out))
    assert tf.n_layers == 2 and tf.n_frames == 10 and tf.codebook_size == 16
    model, _, _ = load_checkpoint(str(workdir["baseline"]))
    expect = model.encode_tokens(load_wav(str(workdir["wav"])), None, m=2)
    assert np.array_equal(tf.tokens, expect)


def test_encode_single_layer_payload(workdir, tmp_path, capsys):
    out = tmp_path / "one.sctk"
    assert main(["encode", str(workdir["baseline"]), str(workdir["wav"]),
                 str(out), "--m", "1"]) == 0
    capsys.readouterr()
    assert load_tokens(str(out)).n_layers == 1


def test_encode_m_out_of_range_exits_2(workdir, tmp_path, capsys):
    code = main(["encode", str(workdir["baseline"]), str(workdir["wav"]),
                 str(tmp_path / "t.sctk"), "--m", "9"])
    assert code == 2
    assert "m" in capsys.readouterr().err


def test_encode_xcodec_requires_features(workdir, tmp_path, capsys):
    code = main(["encode", str(workdir["xcodec"]), str(workdir["wav"]),
                 str(tmp_path / "t.sctk")])
    assert code == 3
    assert "--features" in capsys.readouterr().err


def test_encode_xcodec_with_features(workdir, tmp_path, capsys):
    out = tmp_path / "xc.sctk"
    code = main(["encode", str(workdir["xcodec"]), str(workdir["wav"]), str(out),
                 "--features", str(workdir["sfea"])])
    assert code == 0
    assert load_tokens(str(out)).n_layers == 8
    capsys.readouterr()


def test_decode_matches_in_process(workdir, tmp_path, capsys):
    token_path = tmp_path / "clip.sctk"
    assert main(["encode", str(workdir["baseline"]), str(workdir["wav"]),
                 str(token_path), "--m", "3"]) == 0
    out_wav = tmp_path / "out.wav"
    code = main(["decode", str(workdir["baseline"]), str(token_path), str(out_wav)])
    stdout = capsys.readouterr().out
    assert code == 0
    assert "wrote 3200 samples" in stdout

    tf = load_tokens(str(token_path))
    model, _, _ = load_checkpoint(str(workdir["baseline"]))
    wav = model.decode_tokens(tf.tokens, tf.original_length)
    assert wav.n == 3200
    ref = tmp_path / "ref.wav"
    save_wav(wav, str(ref))
    assert out_wav.read_bytes() == ref.read_bytes()


def test_decode_mismatched_codebook_exits_2(workdir, tmp_path, capsys):
    rng = np.random.default_rng(0)
    tf = TokenFile(tokens=rng.integers(0, 8, size=(2, 10)), sample_rate=16000,
                   original_length=3200, codebook_size=8)
    path = tmp_path / "alien.sctk"
    write_tokens(tf, str(path))
    code = main(["decode", str(workdir["baseline"]), str(path),
                 str(tmp_path / "o.wav")])
    assert code == 2
    assert "codebook_size" in capsys.readouterr().err


def test_decode_mismatched_sample_rate_exits_2(workdir, tmp_path, capsys):
    rng = np.random.default_rng(1)
    tf = TokenFile(tokens=rng.integers(0, 16, size=(1, 5)), sample_rate=8000,
                   original_length=1600, codebook_size=16)
    path = tmp_path / "slow.sctk"
    write_tokens(tf, str(path))
    code = main(["decode", str(workdir["baseline"]), str(path),
                 str(tmp_path / "o.wav")])
    assert code == 2
    assert "sample_rate" in capsys.readouterr().err


def test_decode_bad_magic_exits_2(workdir, tmp_path, capsys):
    path = tmp_path / "bad.sctk"
    token_path = tmp_path / "ok.sctk"
    assert main(["encode", str(workdir["baseline"]), str(workdir["wav"]),
                 str(token_path), "--m", "1"]) == 0
    capsys.readouterr()
    data = bytearray(token_path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    code = main(["decode", str(workdir["baseline"]), str(path),
                 str(tmp_path / "o.wav")])
    assert code == 2
    assert "bad magic" in capsys.readouterr().err


def test_missing_checkpoint_exits_3(workdir, tmp_path, capsys):
    code = main(["encode", str(tmp_path / "absent.sckp"), str(workdir["wav"]),
                 str(tmp_path / "t.sctk")])
    assert code == 3
    capsys.readouterr()


# -- token format ---------------------------------------------------------------------


def test_token_file_round_trip(tmp_path, rng):
    for trial in range(5):
        m = int(rng.integers(1, 9))
        t = int(rng.integers(1, 40))
        k = int(rng.integers(2, 300))
        tf = TokenFile(tokens=rng.integers(0, k, size=(m, t)),
                       sample_rate=16000, original_length=int(rng.integers(1, 50000)),
                       codebook_size=k)
        path = tmp_path / f"t{trial}.sctk"
        write_tokens(tf, str(path))
        back = load_tokens(str(path))
        assert np.array_equal(back.tokens, tf.tokens)
        assert (back.sample_rate, back.original_length, back.codebook_size) == \
            (tf.sample_rate, tf.original_length, tf.codebook_size)


def test_token_file_negatives(tmp_path, rng):
    tf = TokenFile(tokens=rng.integers(0, 16, size=(2, 6)), sample_rate=16000,
                   original_length=1920, codebook_size=16)
    path = tmp_path / "t.sctk"
    write_tokens(tf, str(path))
    data = path.read_bytes()

    trunc = tmp_path / "trunc.sctk"
    trunc.write_bytes(data[:-5])
    with pytest.raises(FormatError, match="truncated"):
        load_tokens(str(trunc))

    padded = tmp_path / "padded.sctk"
    padded.write_bytes(data + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        load_tokens(str(padded))

    # payload id beyond the declared codebook
    hot = bytearray(data)
    hot[-2:] = (99).to_bytes(2, "little")
    bad = tmp_path / "hot.sctk"
    bad.write_bytes(bytes(hot))
    with pytest.raises(DataError, match="token id"):
        load_tokens(str(bad))

    with pytest.raises(DataError):
        TokenFile(tokens=np.array([[3]]), sample_rate=16000, original_length=10,
                  codebook_size=2)


# -- eval ------------------------------------------------------------------------------


def test_eval_abx_prints_each_m(workdir, capsys):
    code = main(["eval", "abx", "--checkpoint", str(workdir["baseline"]),
                 "--manifest", str(workdir["manifest"]), "--m-list", "1,2",
                 "--max-triples", "40"])
    stdout = capsys.readouterr().out
    assert code == 0
    for label in ("[m=1]", "[m=2]"):
        assert label in stdout
    assert stdout.count("mode=w error=") == 2
    assert stdout.count("mode=a error=") == 2


def test_eval_abx_pre_vq_single_row(workdir, capsys):
    code = main(["eval", "abx", "--checkpoint", str(workdir["baseline"]),
                 "--manifest", str(workdir["manifest"]), "--m-list", "1,2,8",
                 "--tap", "pre_vq", "--max-triples", "40"])
    stdout = capsys.readouterr().out
    assert code == 0
    assert stdout.count("[pre_vq]") == 1  # tap ignores the m sweep


def test_eval_abx_deterministic_given_seed(workdir, capsys):
    argv = ["eval", "abx", "--checkpoint", str(workdir["baseline"]),
            "--manifest", str(workdir["manifest"]), "--m-list", "1",
            "--max-triples", "40", "--seed", "5"]
    assert main(argv) == 0
    first = capsys.readouterr().out
    assert main(argv) == 0
    assert capsys.readouterr().out == first


def test_eval_recon_one_row_per_m(workdir, capsys):
    code = main(["eval", "recon", "--checkpoint", str(workdir["baseline"]),
                 "--manifest", str(workdir["manifest"]), "--m-list", "1,2"])
    stdout = capsys.readouterr().out
    assert code == 0
    assert "m=1 mel=" in stdout and "m=2 mel=" in stdout


def test_eval_compare_reports_direction(workdir, capsys):
    code = main(["eval", "abx", "--compare", str(workdir["baseline"]),
                 str(workdir["xcodec"]), "--manifest", str(workdir["manifest"]),
                 "--m-list", "1", "--max-triples", "40"])
    stdout = capsys.readouterr().out
    assert code in (0, 1)
    assert "m=1 within: baseline=" in stdout and "delta=" in stdout
    if code == 1:
        assert "direction check FAILED" in stdout
    else:
        assert "direction check passed" in stdout


def test_eval_compare_rejects_swapped_modes(workdir, capsys):
    code = main(["eval", "abx", "--compare", str(workdir["xcodec"]),
                 str(workdir["baseline"]), "--manifest", str(workdir["manifest"])])
    assert code == 2
    assert "mode" in capsys.readouterr().err


def test_eval_usage_errors(workdir, capsys):
    base = ["--manifest", str(workdir["manifest"])]
    assert main(["eval", "abx"] + base) == 2
    assert main(["eval", "recon"] + base) == 2
    assert main(["eval", "recon", "--checkpoint", str(workdir["baseline"]),
                 "--compare", str(workdir["baseline"]), str(workdir["xcodec"])]
                + base) == 2
    assert main(["eval", "abx", "--checkpoint", str(workdir["baseline"]),
                 "--m-list", "a,b"] + base) == 2
    assert main(["eval", "abx", "--checkpoint", str(workdir["baseline"]),
                 "--m-list", ","] + base) == 2
    capsys.readouterr()


# -- inspect ---------------------------------------------------------------------------


def test_inspect_checkpoint(workdir, capsys):
    code = main(["inspect", str(workdir["xcodec"])])
    stdout = capsys.readouterr().out
    assert code == 0
    assert "format=checkpoint" in stdout
    assert "semantic_enabled=True" in stdout and "gamma=" in stdout
    assert "codebook_perplexity=[" in stdout

    assert main(["inspect", str(workdir["baseline"])]) == 0
    assert "semantic_enabled=False" in capsys.readouterr().out


def test_inspect_tokens(workdir, tmp_path, capsys):
    path = tmp_path / "t.sctk"
    assert main(["encode", str(workdir["baseline"]), str(workdir["wav"]),
                 str(path), "--m", "4"]) == 0
    capsys.readouterr()
    assert main(["inspect", str(path)]) == 0
    stdout = capsys.readouterr().out
    assert "format=tokens M=4 T=10 K=16" in stdout
    assert "duration=0.200000s" in stdout


def test_inspect_features_and_wav(workdir, capsys):
    assert main(["inspect", str(workdir["sfea"])]) == 0
    assert "format=features dim=12" in capsys.readouterr().out
    assert main(["inspect", str(workdir["wav"])]) == 0
    out = capsys.readouterr().out
    assert "format=wav samples=3200" in out


def test_inspect_truncated_exits_2(workdir, tmp_path, capsys):
    path = tmp_path / "cut.sckp"
    path.write_bytes(workdir["baseline"].read_bytes()[:100])
    code = main(["inspect", str(path)])
    err = capsys.readouterr().err
    assert code == 2
    assert "truncated" in err and "bytes" in err


def test_inspect_unknown_format_exits_2(tmp_path, capsys):
    path = tmp_path / "mystery.bin"
    path.write_bytes(b"hello world, not a known container")
    assert main(["inspect", str(path)]) == 2
    assert "unknown format" in capsys.readouterr().err
