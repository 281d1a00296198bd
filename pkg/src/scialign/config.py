"""Run configuration: plain-text dotted key-value files, two profiles, and
reproducible resolved snapshots.

Precedence is defaults < config file < command-line overrides.  Unknown keys
and duplicate keys are errors, never silently ignored.  The ``desk`` profile
holds small settings sized for a laptop CPU; ``paper_faithful`` loads the
published hyper-parameter tables verbatim (batch sizes, learning rates, step
counts, churn and preference-weight defaults).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


def _opt_int(text: str):
    return None if text.lower() in ("none", "null", "") else int(text)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _float(text: str) -> float:
    return math.inf if text.lower() in ("inf", "infinity") else float(text)


# key -> (parser, desk default, paper-faithful default); None second default
# means "same as desk"
SCHEMA: dict[str, tuple] = {
    "profile": (str, "desk", None),
    "seed": (int, 0, None),
    "out_dir": (str, "runs", None),
    "run_id": (str, "run0", None),

    "world.seed": (int, 0, None),
    "world.train_per_combo": (int, 30, None),
    "world.test_per_combo": (int, 40, None),

    "reward.batch_size": (int, 32, 128),
    "reward.learning_rate": (_float, 1e-3, 2e-6),
    "reward.weight_decay": (_float, 0.01, 0.3),
    "reward.steps": (int, 300, 600),
    "reward.warmup_steps": (int, 30, 150),
    "reward.lambda_weight": (_float, 0.25, 0.25),
    "reward.schedule": (str, "cosine", "cosine"),
    "reward.embed_dim": (int, 32, None),
    "reward.temperature_init": (_float, 10.0, None),
    "reward.seed": (int, 0, None),

    "sft.batch_size": (int, 32, 32),
    "sft.learning_rate": (_float, 1e-3, 2e-5),
    "sft.steps": (int, 400, 900),
    "sft.grad_accum": (int, 1, 8),
    "sft.warmup_steps": (int, 20, 0),
    "sft.data_mode": (str, "implicit", None),
    "sft.init_from": (str, "", None),
    "sft.seed": (int, 0, None),

    "oft.beta": (_float, 10.0, 10.0),
    "oft.batch_size": (int, 8, 8),
    "oft.learning_rate": (_float, 3e-4, 3e-4),
    "oft.steps": (int, 40, 140),
    "oft.grad_accum": (int, 2, 2),
    "oft.prompts_per_epoch": (int, 32, 32),
    "oft.prompt_pool_size": (int, 300, 300),
    "oft.images_per_prompt": (int, 2, 2),
    "oft.n_sample_steps": (int, 8, 8),
    "oft.s_churn": (_float, 0.1, 0.1),
    "oft.s_min": (_float, 0.0, 0.0),
    "oft.s_max": (_float, math.inf, math.inf),
    "oft.s_noise": (_float, 1.0, 1.0),
    "oft.mask_padding": (_float, 0.1, 0.1),
    "oft.use_mask": (_bool, True, None),
    "oft.step_subsample": (_opt_int, None, None),
    "oft.eval_every": (int, 10, None),
    "oft.eval_prompts": (int, 16, None),
    "oft.eval_images_per_prompt": (int, 2, 2),
    "oft.eval_n_steps": (int, 8, None),
    "oft.seed": (int, 0, None),

    "bench.images_per_prompt": (int, 2, 2),
    "bench.judge": (str, "oracle", None),
    "bench.judge_url": (str, "", None),
    "bench.split": (str, "test_simple", None),
    "bench.n_steps": (int, 8, None),
    "bench.seed": (int, 0, None),
}

LAMBDA_SWEEP_GRID = (0.0, 0.1, 0.25, 0.5, 0.75)


@dataclass
class RunConfig:
    values: dict[str, object]

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def run_dir(self) -> Path:
        return Path(str(self.values["out_dir"])) / str(self.values["run_id"])

    def snapshot_text(self) -> str:
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if value is None:
                value = "none"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.snapshot_text().encode()).hexdigest()[:16]

    def save_snapshot(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.snapshot_text())
        return path


def _parse_file(path: str | Path) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def load_config(path: str | Path | None = None,
                overrides: dict[str, str] | None = None) -> RunConfig:
    """Resolve defaults < file < overrides into a full RunConfig."""
    file_values = _parse_file(path) if path is not None else {}
    overrides = dict(overrides or {})
    for source, mapping in (("config file", file_values), ("override", overrides)):
        for key in mapping:
            if key not in SCHEMA:
                raise ConfigError(f"unknown {source} key {key!r}")

    profile_text = overrides.get("profile", file_values.get("profile", SCHEMA["profile"][1]))
    if profile_text not in ("desk", "paper_faithful"):
        raise ConfigError(f"unknown profile {profile_text!r}")

    values: dict[str, object] = {}
    for key, (parser, desk_default, paper_default) in SCHEMA.items():
        if profile_text == "paper_faithful" and paper_default is not None:
            default = paper_default
        else:
            default = desk_default
        if key in overrides:
            values[key] = parser(overrides[key])
        elif key in file_values:
            values[key] = parser(file_values[key])
        else:
            values[key] = default
    values["profile"] = profile_text
    return RunConfig(values)
