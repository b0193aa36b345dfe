"""Line-oriented ``key = value`` run configuration, presets and run manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, object] = {
    "paths.interactions": "interactions.tsv",
    "paths.metadata": "",
    "paths.image_labels": "",
    "paths.workdir": "",
    "data.min_item_count": 5,
    "data.split_seed": 0,
    "kg.domain": "ecommerce",
    "kg.use_images": True,
    "kg.merge_edges": True,
    "kg.image_min_conf": 0.5,
    "kg.image_top_k": 5,
    "model.d": 100,
    "model.d_se": 100,
    "model.d_proj": 100,
    "model.encoder": "gru",
    "model.session_agent": True,
    "embed.epochs": 100,
    "embed.lr": 0.01,
    "embed.margin": 1.0,
    "embed.batch_size": 256,
    "embed.seed": 0,
    "training.lr": 1e-4,
    "training.alpha": 0.01,
    "training.beta": 0.005,
    "training.gamma": 0.99,
    "training.epochs": 150,
    "training.batch": 256,
    "training.T": 5,
    "training.seed": 0,
    "training.midpoint_reward": True,
    "inference.widths": (100, 1),
    "inference.K": 20,
    "inference.sample": False,
    "inference.sample_seed": 0,
    "action.a_max": 200,
    "action.dropout": 0.7,
    "eval.ks": (5, 10, 20),
    "eval.min_prefix": 1,
}

# (lr, alpha, beta) per encoder and dataset
PRESETS: dict[str, dict[str, object]] = {}
for _encoder, _rows in {
    "gru": {
        "beauty": (1e-4, 0.005, 0.005),
        "cellphones": (1e-4, 0.05, 0.01),
        "baby": (5e-5, 0.01, 0.005),
        "douban": (1e-3, 0.01, 0.005),
    },
    "attention": {
        "beauty": (1e-4, 0.01, 0.005),
        "cellphones": (1e-4, 0.005, 0.01),
        "baby": (5e-4, 0.01, 0.005),
        "douban": (1e-3, 0.005, 0.0075),
    },
}.items():
    for _dataset, (_lr, _alpha, _beta) in _rows.items():
        PRESETS[f"{_encoder}-{_dataset}"] = {
            "model.encoder": _encoder,
            "training.lr": _lr,
            "training.alpha": _alpha,
            "training.beta": _beta,
            "training.epochs": 50 if _dataset == "douban" else 150,
            "kg.domain": "movie" if _dataset == "douban" else "ecommerce",
        }


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(key: str, raw) -> object:
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(default, tuple) else raw
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return raw


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Config:
    """Flat dotted-key configuration; unset keys fall back to ``DEFAULTS``."""

    def __init__(self, values: dict | None = None, base_dir=None, preset: str | None = None):
        self.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        self.preset = preset
        self.values = dict(DEFAULTS)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; known presets: {', '.join(sorted(PRESETS))}")
            self.values.update(PRESETS[preset])
        for key, raw in (values or {}).items():
            self.set(key, raw)
        self.validate()

    @classmethod
    def parse(cls, text: str, base_dir=None) -> "Config":
        values, preset = {}, None
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key == "preset":
                preset = raw
            else:
                if key not in DEFAULTS:
                    raise ConfigError(_unknown(key, n))
                values[key] = raw
        return cls(values, base_dir, preset)

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), base_dir=path.parent)

    def set(self, key: str, raw) -> None:
        if key not in DEFAULTS:
            raise ConfigError(_unknown(key))
        self.values[key] = _coerce(key, raw)

    def override(self, assignments) -> "Config":
        """Apply ``key=value`` strings (``--set`` flags) and re-validate."""
        for item in assignments or ():
            if "=" not in item:
                raise ConfigError(f"override must look like key=value, got {item!r}")
            key, raw = item.split("=", 1)
            self.set(key.strip(), raw)
        self.validate()
        return self

    def with_values(self, overrides: dict) -> "Config":
        """Copy with some keys replaced (values may be typed or strings)."""
        out = Config(None, self.base_dir, None)
        out.preset = self.preset
        out.values = dict(self.values)
        for key, raw in overrides.items():
            out.set(key, raw)
        out.validate()
        return out

    def __getitem__(self, key: str):
        return self.values[key]

    def validate(self) -> None:
        v = self.values
        if not 0 < v["training.gamma"] <= 1:
            raise ConfigError("training.gamma must be in (0, 1]")
        if not 0 <= v["action.dropout"] < 1:
            raise ConfigError("action.dropout must be in [0, 1)")
        for key in ("model.d", "model.d_se", "model.d_proj", "training.epochs", "training.batch", "training.T",
                    "inference.K", "action.a_max", "embed.epochs", "embed.batch_size", "kg.image_top_k"):
            if v[key] < 1:
                raise ConfigError(f"{key} must be >= 1")
        if v["training.lr"] <= 0 or v["embed.lr"] <= 0 or v["embed.margin"] <= 0:
            raise ConfigError("learning rates and margin must be positive")
        if v["training.alpha"] < 0 or v["training.beta"] < 0:
            raise ConfigError("training.alpha and training.beta must be non-negative")
        if len(v["inference.widths"]) != 2 or min(v["inference.widths"]) < 1:
            raise ConfigError("inference.widths needs two positive integers")
        if v["model.encoder"] not in ("gru", "attention"):
            raise ConfigError("model.encoder must be 'gru' or 'attention'")
        if v["kg.domain"] not in ("ecommerce", "movie"):
            raise ConfigError("kg.domain must be 'ecommerce' or 'movie'")

    # typed views -------------------------------------------------------------------------

    def path(self, key: str) -> Path | None:
        raw = self.values[key]
        if not raw:
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(
            d_se=v["model.d_se"], d_proj=v["model.d_proj"], encoder=v["model.encoder"],
            a_max=v["action.a_max"], session_agent=v["model.session_agent"], seed=v["training.seed"],
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            lr=v["training.lr"], alpha=v["training.alpha"], beta=v["training.beta"], gamma=v["training.gamma"],
            epochs=v["training.epochs"], batch_size=v["training.batch"], seed=v["training.seed"], T=v["training.T"],
            dropout=v["action.dropout"], midpoint_reward=v["training.midpoint_reward"],
        )

    def dump(self) -> str:
        return "".join(f"{k} = {_format(self.values[k])}\n" for k in sorted(self.values))

    def digest(self) -> str:
        return hashlib.sha256(self.dump().encode("utf-8")).hexdigest()

    def seeds(self) -> dict[str, int]:
        return {k: self.values[k] for k in ("data.split_seed", "embed.seed", "training.seed", "inference.sample_seed")}


def _unknown(key: str, line: int | None = None) -> str:
    where = f"line {line}: " if line is not None else ""
    return f"{where}unknown key {key!r}; valid keys: {', '.join(sorted(DEFAULTS))}, preset"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, command: str, config: Config, inputs: dict | None = None, extra: dict | None = None) -> Path:
    """Record what produced a directory's artifacts. No timestamps or absolute paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_sha256": config.digest(),
        "config": {k: _format(v) for k, v in sorted(config.values.items())},
        "preset": config.preset,
        "seeds": config.seeds(),
        "inputs": {name: {"file": Path(p).name, "sha256": file_digest(p)} for name, p in sorted((inputs or {}).items())},
    }
    manifest.update(extra or {})
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
