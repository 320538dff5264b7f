"""Run configuration files: INI-style "key = value" sections.

Sections: model, data, train, metrics, augment. Every key has a default;
`psanet config --dump-defaults` prints the complete annotated set. Unknown
sections or keys are rejected rather than ignored so typos fail loudly.
Precedence: command-line flags > config file > defaults.
"""

import configparser
import io

from .augment import AUGMENT_KINDS, AugmentSpec
from .errors import ConfigError
from .metrics import TdcfParams
from .model import PSAConfig, StemConfig

DEFAULTS = {
    "model": {
        "cardinality": 4,
        "bottleneck_width": 64,
        "depth": 18,
        "width_scale": 1.0,
        "se": True,
        "se_reduction": 16,
        "skip": True,
        "dropout": 0.2,
        "aggregation": "sum",
        "stem_activation": "relu",
        "input_len": 64000,
    },
    "data": {
        "root": "",
        "sample_rate": 16000,
    },
    "train": {
        "epochs": 50,
        "batch_size": 16,
        "lr": 1e-4,
        "weight_decay": 0.001,
        "warmup_steps": 1000,
        "seed": 0,
        "unified": True,
        "attack_filter": "",
        "out_dir": "runs",
    },
    "metrics": {
        "p_spoof": 0.05,
        "p_target": 0.9405,
        "p_nontarget": 0.0095,
        "cost_miss_cm": 1.0,
        "cost_fa_cm": 10.0,
        "cost_miss_asv": 1.0,
        "cost_fa_asv": 10.0,
        "asv_p_miss": 0.05,
        "asv_p_fa": 0.05,
        "asv_p_fa_spoof": 0.75,
    },
    "augment": {
        "enabled": True,
        "kinds": ",".join(AUGMENT_KINDS),
        "probability": 0.1,
        "highpass_hz": 300.0,
        "lowpass_hz": 3400.0,
        "reverb_decay_s": 0.3,
        "trim_threshold_db": -40.0,
        "trim_frame_ms": 25.0,
        "codec_bits": 8,
        "codec_factor": 2,
    },
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(section: str, key: str, raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"[{section}] {key}: {e}") from e
    return raw.strip()


def default_config() -> dict:
    return {s: dict(kv) for s, kv in DEFAULTS.items()}


def load_config(path: str | None = None, text: str | None = None) -> dict:
    """Defaults overlaid with a config file; unknown names are errors."""
    cfg = default_config()
    if path is None and text is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    try:
        if text is not None:
            parser.read_string(text)
        else:
            with open(path, "r", encoding="utf-8") as f:
                parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"bad config file: {e}") from e
    for section in parser.sections():
        if section not in cfg:
            raise ConfigError(f"unknown config section [{section}] (have {sorted(cfg)})")
        for key, raw in parser.items(section):
            if key not in cfg[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}] "
                                  f"(have {sorted(cfg[section])})")
            cfg[section][key] = _coerce(section, key, raw, DEFAULTS[section][key])
    return cfg


def apply_overrides(cfg: dict, overrides: dict) -> dict:
    """In-place flag overrides given as {(section, key): value}; values may be
    strings (coerced) or already-typed."""
    for (section, key), value in overrides.items():
        if section not in cfg or key not in cfg[section]:
            raise ConfigError(f"unknown config name [{section}] {key}")
        if isinstance(value, str):
            value = _coerce(section, key, value, DEFAULTS[section][key])
        cfg[section][key] = value
    return cfg


def dump_defaults() -> str:
    out = io.StringIO()
    for section, kv in DEFAULTS.items():
        out.write(f"[{section}]\n")
        for key, value in kv.items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            out.write(f"{key} = {value}\n")
        out.write("\n")
    return out.getvalue()


def model_config(cfg: dict) -> PSAConfig:
    m = cfg["model"]
    return PSAConfig(
        cardinality=m["cardinality"],
        bottleneck_width=m["bottleneck_width"],
        depth_preset=m["depth"],
        width_scale=m["width_scale"],
        use_se=m["se"],
        se_reduction=m["se_reduction"],
        use_skip=m["skip"],
        spatial_dropout_rate=m["dropout"],
        aggregation=m["aggregation"],
        stem=StemConfig(activation=m["stem_activation"]),
        input_len=m["input_len"],
    )


def tdcf_params(cfg: dict) -> TdcfParams:
    return TdcfParams(**cfg["metrics"])


def augment_specs(cfg: dict) -> list:
    a = cfg["augment"]
    if not a["enabled"]:
        return []
    specs = []
    for kind in (k.strip() for k in a["kinds"].split(",") if k.strip()):
        if kind not in AUGMENT_KINDS:
            raise ConfigError(f"unknown augmentation kind {kind!r} in [augment] kinds")
        specs.append(AugmentSpec(
            kind=kind,
            probability=a["probability"],
            cutoff_hz=a["highpass_hz"] if kind == "highpass" else a["lowpass_hz"] if kind == "lowpass" else 0.0,
            decay_s=a["reverb_decay_s"],
            threshold_db=a["trim_threshold_db"],
            frame_ms=a["trim_frame_ms"],
            bit_depth=a["codec_bits"],
            downrate_factor=a["codec_factor"],
        ))
    return specs


def train_run_config(cfg: dict):
    from .train import TrainRunConfig  # local import keeps config importable early
    t = cfg["train"]
    return TrainRunConfig(
        model=model_config(cfg),
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        peak_lr=t["lr"],
        weight_decay=t["weight_decay"],
        warmup_steps=t["warmup_steps"],
        seed=t["seed"],
        unified_mode=t["unified"],
        attack_filter=t["attack_filter"],
        augment_specs=augment_specs(cfg),
        out_dir=t["out_dir"],
    )
