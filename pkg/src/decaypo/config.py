"""Run configuration: a flat "key = value" file format with one section per
subcommand, strict unknown-key rejection, flag-over-file precedence, named
seed substreams, and resolved-config snapshots that reproduce a run."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

import numpy as np

ENV_SEED = "DECAYPO_SEED"

# named substreams off the root seed; components never share raw seeds
SEED_TAGS = {"data": 0, "sampling": 1, "sampo": 2, "init": 3}


def seed_substream(root_seed: int, tag: str) -> int:
    if tag not in SEED_TAGS:
        raise ValueError(f"unknown seed substream {tag!r}")
    ss = np.random.SeedSequence([int(root_seed) & (2**63 - 1), SEED_TAGS[tag]])
    return int(ss.generate_state(1, np.uint64)[0] & (2**63 - 1))


class ConfigError(ValueError):
    """Validation failure; the message names the offending key or flag."""


@dataclass(frozen=True)
class Option:
    name: str                 # dashed, mirrors the CLI flag without "--"
    typ: str = "str"          # str | int | float | bool | floats | ints
    default: object = None
    required: bool = False
    help: str = ""


def parse_value(opt: Option, text: str):
    try:
        if opt.typ == "int":
            return int(text)
        if opt.typ == "float":
            return float(text)
        if opt.typ == "bool":
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if opt.typ == "floats":
            return [float(v) for v in text.split(",") if v.strip()]
        if opt.typ == "ints":
            return [int(v) for v in text.split(",") if v.strip()]
        return text
    except ValueError as e:
        raise ConfigError(f"key {opt.name!r}: {e}") from e


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"malformed config file {path}: {e}") from e
    return {section: dict(parser.items(section)) for section in parser.sections()}


def resolve(command: str, options, cli_values: dict,
            config_path: str | None) -> dict:
    """Merge defaults, config-file section, CLI flags, and the seed env var.

    Precedence (lowest to highest): registry defaults, config file,
    explicit CLI flags, DECAYPO_SEED for the root seed. Unknown file keys
    are rejected with the key named.
    """
    by_name = {o.name: o for o in options}
    resolved = {o.name: o.default for o in options}
    if config_path is not None:
        sections = load_config_file(config_path)
        for section, values in sections.items():
            if section != command:
                continue
            for key, text in values.items():
                if key not in by_name:
                    raise ConfigError(f"unknown key {key!r} in section [{command}]")
                resolved[key] = parse_value(by_name[key], text)
        unknown = set(sections) - {command}
        if unknown:
            # other commands' sections are allowed so one file can drive a
            # whole pipeline; anything else is a typo
            from .cli import COMMANDS  # noqa: PLC0415  (cycle-free at call time)
            bad = unknown - set(COMMANDS)
            if bad:
                raise ConfigError(f"unknown section {sorted(bad)[0]!r}")
    for key, value in cli_values.items():
        if value is None:
            continue
        if key not in by_name:
            raise ConfigError(f"unknown flag --{key}")
        resolved[key] = value
    env = os.environ.get(ENV_SEED)
    if env is not None and "seed" in by_name:
        try:
            resolved["seed"] = int(env)
        except ValueError as e:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {env!r}") from e
    for opt in options:
        if opt.required and resolved[opt.name] is None:
            raise ConfigError(f"missing required key {opt.name!r} (flag --{opt.name})")
    return resolved


def write_resolved_snapshot(path, command: str, resolved: dict) -> None:
    """A config file that, fed back via --config, reproduces the run."""
    lines = [f"[{command}]"]
    for key in sorted(resolved):
        value = resolved[key]
        if value is None:
            continue
        lines.append(f"{key} = {format_value(value)}")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
