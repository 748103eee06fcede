"""Flat key=value run configuration with [section] headers.

Every knob defaults to the reference hyperparameters (noise budget 16/255,
step size 5e-3, 100 PGD steps, both guidance weights 0.5, purification
timestep 10 with 2 rounds x 20 iterations and residual weight 0.1). A parsed
config is a plain dict of sections; `format_config` emits a canonical text
form whose parse round-trips exactly, which is what makes config snapshots
replayable bit-for-bit.
"""

from __future__ import annotations

from .attack import AttackConfig
from .denoiser import DenoiserSpec
from .purify import PurifyConfig

DEFAULTS: dict[str, dict] = {
    "diffusion": {"timesteps": 100, "beta_start": 1e-4, "beta_end": 0.02},
    "denoiser": {"in_channels": 1, "base_channels": 16, "num_blocks": 2, "embed_dim": 32},
    "data": {"train_count": 256, "eval_count": 64, "image_size": 32, "seed": 7},
    "train": {"steps": 2000, "lr": 0.01, "seed": 1},
    "attack": {"eta": 16.0 / 255.0, "alpha": 5e-3, "steps": 100,
               "lambda1": 0.5, "lambda2": 0.5, "t_err": 99, "t_p": 10,
               "patch_size": 8, "losses": "ddpm,fre,err_t", "seed": 3,
               "frozen_noise": False},
    "purify": {"t_p": 10, "iterations": 20, "rounds": 2, "gamma": 0.1,
               "grid_size": 32, "grid_stride": 32, "seed": 5},
    "finetune": {"steps": 400, "lr": 0.005, "seed": 13},
    "workflow": {"arms": "none,pgd_ddpm,antipure", "checkpoints": "",
                 "sample_count": 16, "seed": 9},
    "sample": {"count": 16, "seed": 11},
    "probe": {"timesteps": "10,50"},
    "paths": {},  # free-form strings, validated by each command
}

SECTION_ORDER = tuple(DEFAULTS)


def default_config() -> dict[str, dict]:
    return {sec: dict(vals) for sec, vals in DEFAULTS.items()}


def _coerce(section: str, key: str, raw: str):
    """Parse a raw string by the type of the default value."""
    if section == "paths":
        return raw
    defaults = DEFAULTS.get(section)
    if defaults is None or key not in defaults:
        raise ValueError(f"unknown config key [{section}] {key}")
    ref = defaults[key]
    if isinstance(ref, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"[{section}] {key}: expected a boolean, got {raw!r}")
    if isinstance(ref, int):
        return int(raw)
    if isinstance(ref, float):
        return float(raw)
    return raw


def parse_config(text: str, base: dict | None = None) -> dict[str, dict]:
    """Parse config text over `base` (defaults when omitted)."""
    cfg = default_config() if base is None else {s: dict(v) for s, v in base.items()}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in DEFAULTS:
                raise ValueError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line or section is None:
            raise ValueError(f"line {lineno}: expected 'key = value' inside a section")
        key, _, raw = line.partition("=")
        cfg[section][key.strip()] = _coerce(section, key.strip(), raw.strip())
    return cfg


def apply_overrides(cfg: dict[str, dict], overrides) -> dict[str, dict]:
    """Apply `section.key=value` strings (the --set flag) in order."""
    cfg = {s: dict(v) for s, v in cfg.items()}
    for item in overrides or ():
        head, eq, raw = item.partition("=")
        sec, dot, key = head.partition(".")
        if not eq or not dot or sec not in DEFAULTS:
            raise ValueError(f"bad override {item!r}; expected section.key=value")
        cfg[sec][key.strip()] = _coerce(sec, key.strip(), raw.strip())
    return cfg


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)  # shortest round-tripping decimal
    return str(v)


def format_config(cfg: dict[str, dict]) -> str:
    """Canonical text form; parsing it reproduces `cfg` exactly."""
    lines = []
    for sec in SECTION_ORDER:
        vals = cfg.get(sec, {})
        if sec != "paths" and not vals:
            continue
        lines.append(f"[{sec}]")
        keys = list(DEFAULTS[sec]) if sec != "paths" else sorted(vals)
        for key in keys:
            if key in vals:
                lines.append(f"{key} = {_format_value(vals[key])}")
        lines.append("")
    return "\n".join(lines)


def parse_int_list(raw: str) -> list[int]:
    return [int(v) for v in raw.split(",") if v.strip() != ""]


def parse_str_list(raw: str) -> list[str]:
    return [v.strip() for v in raw.split(",") if v.strip() != ""]


# --- dataclass builders --------------------------------------------------------

def attack_config(cfg: dict) -> AttackConfig:
    a = cfg["attack"]
    return AttackConfig(eta=a["eta"], alpha=a["alpha"], steps=a["steps"],
                        lambda1=a["lambda1"], lambda2=a["lambda2"],
                        t_err=a["t_err"], t_p=a["t_p"], patch_size=a["patch_size"],
                        losses=tuple(parse_str_list(a["losses"])), seed=a["seed"],
                        frozen_noise=a["frozen_noise"])


def purify_config(cfg: dict) -> PurifyConfig:
    p = cfg["purify"]
    return PurifyConfig(t_p=p["t_p"], iterations=p["iterations"], rounds=p["rounds"],
                        gamma=p["gamma"], grid_size=p["grid_size"],
                        grid_stride=p["grid_stride"], seed=p["seed"])


def denoiser_spec(cfg: dict) -> DenoiserSpec:
    d = cfg["denoiser"]
    return DenoiserSpec(in_channels=d["in_channels"], base_channels=d["base_channels"],
                        num_blocks=d["num_blocks"], embed_dim=d["embed_dim"])
