"""INI-style run configuration: [codec], [train], and [data] sections.

The parser is deliberately small and strict: unknown sections or keys,
malformed lines, and untypable values all raise with the exact line and
column, which the CLI surfaces as usage errors.

    [codec]
    downsample_rates = 2,4,5,8
    codebook_size = 1024

    [train]
    steps = 2000
    gamma = auto

    [data]
    manifest = corpus/manifest.txt
"""

from dataclasses import dataclass, fields, replace

from .codec import CodecConfig
from .errors import ConfigError, ParameterError
from .training import TrainConfig

_CODEC_TYPES = {
    "sample_rate": "int", "downsample_rates": "int_tuple", "stem_channels": "int",
    "block_channels": "int_tuple", "acoustic_hidden": "int",
    "semantic_feature_dim": "int", "semantic_hidden": "int", "fused_dim": "int",
    "codebook_size": "int", "max_layers": "int", "kernel_size": "int",
    "commitment_weight": "float", "ema_decay": "float", "dead_threshold": "float",
}
_TRAIN_TYPES = {
    "steps": "int", "batch_size": "int", "segment_samples": "int", "lr": "float",
    "seed": "int", "checkpoint_every": "int", "dead_code_every": "int",
    "gamma": "gamma",
}
_DATA_TYPES = {"manifest": "str"}
_SECTIONS = {"codec": _CODEC_TYPES, "train": _TRAIN_TYPES, "data": _DATA_TYPES}


@dataclass(frozen=True)
class RunConfig:
    codec: CodecConfig
    train: TrainConfig
    manifest: str = None

    def with_seed(self, seed):
        return replace(self, train=replace(self.train, seed=int(seed)))


def _convert(kind, raw, line, col):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "int_tuple":
            return tuple(int(part.strip()) for part in raw.split(","))
        if kind == "gamma":
            return None if raw.lower() in ("auto", "none") else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {kind}", line=line, column=col) from None


def parse_config_text(text, origin="<config>"):
    """Parse config text into {section: {key: typed value}}."""
    values = {name: {} for name in _SECTIONS}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        indent = len(raw) - len(raw.lstrip())
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", line=lineno,
                                  column=indent + 1)
            name = stripped[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigError(f"unknown section [{name}]", line=lineno,
                                  column=indent + 1)
            section = name
            continue
        if "=" not in stripped:
            raise ConfigError("expected `key = value`", line=lineno, column=indent + 1)
        if section is None:
            raise ConfigError("key outside any section", line=lineno, column=indent + 1)
        key_part, _, value_part = raw.partition("=")
        key = key_part.strip()
        key_col = len(raw) - len(raw.lstrip()) + 1
        if key not in _SECTIONS[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]",
                              line=lineno, column=key_col)
        if key in values[section]:
            raise ConfigError(f"duplicate key {key!r}", line=lineno, column=key_col)
        value_col = len(key_part) + 2  # 1-based column just past the '='
        value = value_part.strip()
        if not value:
            raise ConfigError(f"empty value for {key!r}", line=lineno, column=value_col)
        values[section][key] = _convert(_SECTIONS[section][key], value, lineno, value_col)

    try:
        codec_kwargs = {f.name: values["codec"][f.name] for f in fields(CodecConfig)
                        if f.name in values["codec"]}
        codec = CodecConfig(**codec_kwargs)
        train_kwargs = {f.name: values["train"][f.name] for f in fields(TrainConfig)
                        if f.name in values["train"]}
        train = TrainConfig(**train_kwargs)
    except (ConfigError, ParameterError) as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    return RunConfig(codec=codec, train=train,
                     manifest=values["data"].get("manifest"))


def parse_config(path):
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return parse_config_text(text, origin=path)
