"""INI config files, override flags, canonical echoes, and run manifests.

A run is reproducible from its manifest alone: the manifest stores the
full canonical config echo (every field rendered as a string), a sha256
hash of that echo, the seed list, and the artifact paths. The hash is
recomputed from the echo on load, so a manifest whose config was edited
after the fact fails loudly.
"""

import configparser
import hashlib
import json
import re
from pathlib import Path

from .errors import ConfigurationError
from .training import TrainConfig

MANIFEST_VERSION = 1

_INT_PATTERN = re.compile(r"[+-]?\d+\Z")


def _parse_int(raw, label):
    if not _INT_PATTERN.match(raw.strip()):
        raise ConfigurationError(f"{label} expects an integer, got {raw!r}", field=label)
    return int(raw)


def _parse_float(raw, label):
    try:
        return float(raw)
    except ValueError:
        raise ConfigurationError(f"{label} expects a number, got {raw!r}", field=label)


_BOOL_TOKENS = {"true": True, "1": True, "yes": True,
                "false": False, "0": False, "no": False}


def _parse_bool(raw, label):
    token = raw.strip().lower()
    if token not in _BOOL_TOKENS:
        raise ConfigurationError(f"{label} expects true or false, got {raw!r}", field=label)
    return _BOOL_TOKENS[token]


def _parse_str(raw, label):
    return raw.strip()


def _parse_hidden(raw, label):
    parts = [part.strip() for part in raw.split(",") if part.strip()]
    if not parts:
        raise ConfigurationError(f"{label} expects comma-separated widths", field=label)
    return tuple(_parse_int(part, label) for part in parts)


def _format_int(value):
    return str(int(value))


def _format_float(value):
    return repr(float(value))


def _format_bool(value):
    return "true" if value else "false"


def _format_str(value):
    return str(value)


def _format_hidden(value):
    return ",".join(str(int(width)) for width in value)


def _parse_scalar(raw, label):
    raw = raw.strip()
    if _INT_PATTERN.match(raw):
        return int(raw)
    try:
        return float(raw)
    except ValueError:
        pass
    if raw.lower() in _BOOL_TOKENS:
        return _BOOL_TOKENS[raw.lower()]
    return raw


def _format_scalar(value):
    if isinstance(value, bool):
        return _format_bool(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# (section, key, TrainConfig field, parse, format); extra keys under [env]
# pass through to the environment constructor as overrides
LAYOUT = (
    ("env", "kind", "env", _parse_str, _format_str),
    ("env", "reward", "reward_kind", _parse_str, _format_str),
    ("policy", "hidden", "hidden", _parse_hidden, _format_hidden),
    ("policy", "activation", "activation", _parse_str, _format_str),
    ("solver", "steps", "n_steps", _parse_int, _format_int),
    ("solver", "sigma", "sigma", _parse_float, _format_float),
    ("solver", "sampler", "sampler", _parse_str, _format_str),
    ("solver", "last_step_noise", "last_step_noise", _parse_bool, _format_bool),
    ("objective", "kind", "objective", _parse_str, _format_str),
    ("objective", "target", "target", _parse_str, _format_str),
    ("objective", "terminal_correction", "terminal_correction", _parse_bool, _format_bool),
    ("objective", "beta", "beta", _parse_float, _format_float),
    ("objective", "trust_weight", "trust_weight", _parse_float, _format_float),
    ("rollout", "envs", "n_envs", _parse_int, _format_int),
    ("rollout", "epochs", "rollout_epochs", _parse_int, _format_int),
    ("rollout", "selector", "selector", _parse_str, _format_str),
    ("rollout", "fixed_step", "fixed_step", _parse_int, _format_int),
    ("train", "optimizer", "optimizer", _parse_str, _format_str),
    ("train", "learning_rate", "learning_rate", _parse_float, _format_float),
    ("train", "batch_size", "batch_size", _parse_int, _format_int),
    ("train", "update_epochs", "update_epochs", _parse_int, _format_int),
    ("train", "iterations", "iterations", _parse_int, _format_int),
    ("train", "alpha_start", "alpha_start", _parse_float, _format_float),
    ("train", "alpha_end", "alpha_end", _parse_float, _format_float),
    ("train", "alpha_kind", "alpha_kind", _parse_str, _format_str),
    ("train", "seed", "seed", _parse_int, _format_int),
    ("train", "record_timing", "record_timing", _parse_bool, _format_bool),
    ("sft", "demos", "sft_demos", _parse_int, _format_int),
    ("sft", "noise", "sft_noise", _parse_float, _format_float),
    ("sft", "steps", "sft_steps", _parse_int, _format_int),
    ("sft", "batch", "sft_batch", _parse_int, _format_int),
    ("sft", "learning_rate", "sft_learning_rate", _parse_float, _format_float),
    ("eval", "episodes", "eval_episodes", _parse_int, _format_int),
    ("eval", "every", "eval_every", _parse_int, _format_int),
)

_BY_LABEL = {f"{section}.{key}": (field, parse, fmt)
             for section, key, field, parse, fmt in LAYOUT}
_SECTIONS = {section for section, _, _, _, _ in LAYOUT}


def _assign(values, env_overrides, section, key, raw):
    label = f"{section}.{key}"
    entry = _BY_LABEL.get(label)
    if entry is not None:
        field, parse, _ = entry
        values[field] = parse(raw, label)
    elif section == "env":
        env_overrides[key] = _parse_scalar(raw, label)
    else:
        raise ConfigurationError(f"unknown config key {label}", field=label)


def parse_config(path=None, overrides=()):
    """Build a TrainConfig from an optional INI file plus override strings.

    Overrides use section.key=value and win over the file. Unknown keys
    fail with the offending field named; extra keys under [env] pass
    through to the environment constructor.
    """
    values = {}
    env_overrides = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config file: {exc}")
        if parser.defaults():
            raise ConfigurationError("[DEFAULT] section is not supported")
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigurationError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                _assign(values, env_overrides, section, key, raw)
    for override in overrides:
        if "=" not in override:
            raise ConfigurationError(
                f"override must look like section.key=value, got {override!r}"
            )
        label, raw = override.split("=", 1)
        label = label.strip()
        if "." not in label:
            raise ConfigurationError(
                f"override key must look like section.key, got {label!r}"
            )
        section, key = label.split(".", 1)
        _assign(values, env_overrides, section, key, raw)
    if env_overrides:
        values["env_overrides"] = env_overrides
    return TrainConfig(**values)


def config_echo(config):
    """Canonical string rendering of every config field, keyed section.key."""
    echo = {}
    for section, key, field, _, fmt in LAYOUT:
        echo[f"{section}.{key}"] = fmt(getattr(config, field))
    for key in sorted(config.env_overrides):
        echo[f"env.{key}"] = _format_scalar(config.env_overrides[key])
    return echo


def parse_echo(echo):
    """Rebuild a TrainConfig from a canonical echo, e.g. out of a manifest."""
    values = {}
    env_overrides = {}
    for label in sorted(echo):
        if "." not in label:
            raise ConfigurationError(f"malformed echo key {label!r}", field=label)
        section, key = label.split(".", 1)
        _assign(values, env_overrides, section, key, echo[label])
    if env_overrides:
        values["env_overrides"] = env_overrides
    return TrainConfig(**values)


def hash_echo(echo):
    payload = json.dumps(echo, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def config_hash(config):
    return hash_echo(config_echo(config))


def build_manifest(command, config, seeds, artifacts, started, finished):
    echo = config_echo(config)
    return {
        "format_version": MANIFEST_VERSION,
        "command": command,
        "config": echo,
        "config_hash": hash_echo(echo),
        "seeds": [int(seed) for seed in seeds],
        "started": started,
        "finished": finished,
        "artifacts": {name: str(path) for name, path in artifacts.items()},
    }


def write_manifest(manifest, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"malformed manifest: {exc}")
    return verify_manifest(manifest)


def verify_manifest(manifest):
    """Check the stored hash against a recomputation from the echoed config."""
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise ConfigurationError(
            f"unsupported manifest format {manifest.get('format_version')!r}"
        )
    stored = manifest.get("config_hash")
    actual = hash_echo(manifest.get("config", {}))
    if stored != actual:
        raise ConfigurationError(
            f"manifest config hash mismatch: stored {stored}, recomputed {actual}"
        )
    return manifest
