"""Layered run configuration: built-in defaults < TOML file < environment < ``--set``.

Environment overrides use ``CHART_TIR__SECTION__KEY=value``. Values from the
environment and from ``--set`` are parsed as TOML scalars/arrays when
possible and taken as plain strings otherwise.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import shlex
import sys
from collections.abc import Mapping, Sequence
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .clients import CassetteTransport, ChatClient, HttpTransport, Sampling
from .errors import ConfigInvalid
from .grpo import GrpoConfig
from .reward import MatchPolicy
from .rollout import RolloutConfig
from .sandbox import ExecLimits, Sandbox
from .tools import ToolConfig

ENV_PREFIX = "CHART_TIR__"
CONFIG_ENV = "CHART_TIR_CONFIG"

_ENDPOINT = {
    "endpoint_url": "",
    "model": "default",
    "api_key_env": "",
    "max_inflight": 8,
    "timeout_s": 120.0,
    "max_retries": 3,
    "backoff_s": 0.5,
    # JSONL cassette; when set, replaces (replay) or wraps (record) the HTTP transport
    "cassette": "",
    "cassette_mode": "replay",
}

DEFAULTS: dict[str, dict] = {
    "sandbox": {
        "interpreter_cmd": [],  # empty: the running Python interpreter
        "pool_size": 4,
        "wall_timeout_s": 10.0,
        "cpu_timeout_s": 0.0,  # 0 disables the CPU-time limit
        "memory_limit_bytes": 2 * 1024**3,
        "stdout_cap_bytes": 4096,
        "network_allowed": False,
        "keep_artifacts": False,
    },
    "policy": {**_ENDPOINT, "model": "policy"},
    "judge": {**_ENDPOINT, "model": "judge"},
    "llm": {**_ENDPOINT, "model": "llm"},
    "rollout": {
        "max_assistant_turns": 4,
        "max_parse_failures": 2,
        "group_size": 8,
        "temperature": 1.0,
        "max_tokens": 2048,
        "concurrency": 8,
        "failure_threshold": 0.5,
    },
    "tools": {"min_crop_side": 8, "crop_resize_factor": 1.0},
    "reward": {
        "lambda1": 0.1,
        "lambda2": 0.2,
        "numeric_rel_tol": 0.05,
        "case_fold": True,
        "strip_units": True,
        "judge_fallback": False,
    },
    "grpo": {"epsilon": 0.2, "std_floor": 1e-6},
    "synth": {
        "max_repairs": 3,
        "visual_threshold": 3,
        "semantic_threshold": 3,
        "questions_per_chart": 2,
        "votes_n": 5,
        "vote_threshold": 0.8,
        "difficulty_threshold": 3,
        "concurrency": 4,
    },
    "eval": {"concurrency": 4, "entropy_base": 2.0},
}


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _coerce(section: str, key: str, value, default):
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigInvalid(f"{where} expects a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigInvalid(f"{where} expects an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigInvalid(f"{where} expects a number, got {value!r}")
    if isinstance(default, list):
        if isinstance(value, str):
            return shlex.split(value)
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return value
        raise ConfigInvalid(f"{where} expects a list of strings, got {value!r}")
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return str(value)
    if not isinstance(value, str):
        raise ConfigInvalid(f"{where} expects a string, got {value!r}")
    return value


def _apply(cfg: dict, section: str, key: str, value) -> None:
    if section not in cfg:
        raise ConfigInvalid(f"unknown config section {section!r}")
    if key not in cfg[section]:
        raise ConfigInvalid(f"unknown config key {section}.{key}")
    cfg[section][key] = _coerce(section, key, value, DEFAULTS[section][key])


def load_config(
    path: str | Path | None = None,
    overrides: Sequence[str] = (),
    env: Mapping[str, str] | None = None,
) -> dict:
    """Merge the layers and validate every key against the defaults."""
    env = os.environ if env is None else env
    cfg = copy.deepcopy(DEFAULTS)
    if path is None and env.get(CONFIG_ENV):
        path = env[CONFIG_ENV]
    if path is not None:
        try:
            data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigInvalid(f"config file {path} does not exist") from None
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
            raise ConfigInvalid(f"config file {path}: {e}") from None
        for section, body in data.items():
            if not isinstance(body, dict):
                raise ConfigInvalid(f"top-level key {section!r} must be a table")
            for key, value in body.items():
                _apply(cfg, section, key, value)
    for name in sorted(env):
        if name.startswith(ENV_PREFIX):
            parts = name[len(ENV_PREFIX):].lower().split("__")
            if len(parts) != 2:
                raise ConfigInvalid(f"environment override {name} must look like {ENV_PREFIX}SECTION__KEY")
            _apply(cfg, parts[0], parts[1], _parse_value(env[name]))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or "." not in key:
            raise ConfigInvalid(f"--set expects section.key=value, got {item!r}")
        section, _, name = key.strip().partition(".")
        _apply(cfg, section, name, _parse_value(raw.strip()))
    return cfg


def config_hash(cfg: Mapping) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canon.encode()).hexdigest()


# --- builders ----------------------------------------------------------------


def exec_limits(cfg: Mapping) -> ExecLimits:
    s = cfg["sandbox"]
    try:
        return ExecLimits(
            wall_timeout=s["wall_timeout_s"],
            cpu_timeout=s["cpu_timeout_s"] or None,
            memory_limit=s["memory_limit_bytes"] or None,
            stdout_cap=s["stdout_cap_bytes"],
            network_allowed=s["network_allowed"],
        )
    except ValueError as e:
        raise ConfigInvalid(f"sandbox: {e}") from None


def make_sandbox(cfg: Mapping) -> Sandbox:
    s = cfg["sandbox"]
    return Sandbox(s["interpreter_cmd"] or None, s["pool_size"], exec_limits(cfg), s["keep_artifacts"])


def make_client(cfg: Mapping, role: str) -> ChatClient:
    """Client for ``role`` in {policy, judge, llm}; a cassette takes precedence over the URL in replay mode."""
    c = cfg[role]
    if c["cassette"] and c["cassette_mode"] == "replay":
        transport = CassetteTransport(c["cassette"], "replay")
    else:
        if not c["endpoint_url"]:
            raise ConfigInvalid(f"{role}.endpoint_url is not set (or give {role}.cassette)")
        transport = HttpTransport(c["endpoint_url"], c["api_key_env"] or None, c["timeout_s"])
        if c["cassette"]:
            if c["cassette_mode"] != "record":
                raise ConfigInvalid(f"{role}.cassette_mode must be 'replay' or 'record'")
            transport = CassetteTransport(c["cassette"], "record", transport)
    return ChatClient(transport, c["model"], c["max_retries"], c["backoff_s"], c["max_inflight"])


def tool_config(cfg: Mapping) -> ToolConfig:
    t = cfg["tools"]
    try:
        return ToolConfig(t["min_crop_side"], t["crop_resize_factor"], exec_limits(cfg))
    except ValueError as e:
        raise ConfigInvalid(f"tools: {e}") from None


def rollout_config(cfg: Mapping) -> RolloutConfig:
    r = cfg["rollout"]
    try:
        return RolloutConfig(
            max_assistant_turns=r["max_assistant_turns"],
            max_parse_failures=r["max_parse_failures"],
            group_size=r["group_size"],
            sampling=Sampling(r["temperature"], r["max_tokens"]),
            tool_cfg=tool_config(cfg),
            concurrency=r["concurrency"],
            failure_threshold=r["failure_threshold"],
        )
    except ValueError as e:
        raise ConfigInvalid(f"rollout: {e}") from None


def match_policy(cfg: Mapping) -> MatchPolicy:
    r = cfg["reward"]
    try:
        return MatchPolicy(r["numeric_rel_tol"], r["case_fold"], r["strip_units"], r["judge_fallback"])
    except ValueError as e:
        raise ConfigInvalid(f"reward: {e}") from None


def grpo_config(cfg: Mapping) -> GrpoConfig:
    g = cfg["grpo"]
    try:
        return GrpoConfig(g["epsilon"], g["std_floor"])
    except ValueError as e:
        raise ConfigInvalid(f"grpo: {e}") from None
