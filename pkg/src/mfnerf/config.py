"""INI config files for scenes and training runs.

Five sections: [scene], [train], [losses], [cluster], [eval].  Every key
has a default below; unknown keys or sections are hard errors with the
offending line number, so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import configparser

from .losses import LossWeights
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return tuple(float(tok) for tok in s.replace(",", " ").split())


# section -> key -> (default, parser)
SCHEMA = {
    "scene": {
        "room_half_extents": ((2.2, 1.8, 1.4), _floats),
        "n_boxes": (5, int),
        "n_spheres": (0, int),
        "n_rot_boxes": (0, int),
        "checker_period": (1.0, float),
        "mf_offset_yaw": (0.0, float),
        "mf_offset_pitch": (0.0, float),
        "mf_offset_roll": (0.0, float),
        "seed": (0, int),
        "n_views": (60, int),
        "image_width": (64, int),
        "image_height": (64, int),
        "fov_deg": (75.0, float),
        "camera_margin": (0.5, float),
    },
    "train": {
        "steps": (3000, int),
        "batch_size": (768, int),
        "lr": (1e-2, float),
        "adam_beta1": (0.9, float),
        "adam_beta2": (0.999, float),
        "adam_eps": (1e-15, float),
        "grad_clip_norm": (0.05, float),
        "opacity_reg": (1e-3, float),
        "cosine_anneal": (True, _bool),
        "grid_resolution": (48, int),
        "n_samples_per_ray": (64, int),
        "t_near": (0.05, float),
        "t_far": (0.0, float),
        "seed": (0, int),
        "mode": ("ours", str),
        "precision": ("f64", str),
        "background": ((0.0, 0.0, 0.0), _floats),
        "gap": (0, int),
        "density_bias": (-2.0, float),
        "save_every": (0, int),
        "threads": (1, int),
    },
    "losses": {
        "lambda_ctr": (2e-3, float),
        "lambda_ort": (2e-3, float),
        "lambda_man": (2e-3, float),
        "delay_steps": (500, int),
        "ramp_steps": (2500, int),
    },
    "cluster": {
        "k_train": (20, int),
        "k_eval": (30, int),
        "merge_t": (0.05, float),
        "kmeans_iters_train": (50, int),
        "kmeans_iters_eval": (200, int),
    },
    "eval": {
        "save_views": (True, _bool),
    },
}


def default_config():
    return {sec: {k: v for k, (v, _) in keys.items()} for sec, keys in SCHEMA.items()}


def _line_numbers(path):
    """Map 'section.key' -> line number for diagnostics."""
    table = {}
    section = None
    try:
        with open(path) as f:
            for lineno, line in enumerate(f, start=1):
                s = line.strip()
                if not s or s.startswith(("#", ";")):
                    continue
                if s.startswith("[") and s.endswith("]"):
                    section = s[1:-1].strip()
                    table[section] = lineno
                elif "=" in s or ":" in s:
                    key = s.replace(":", "=").split("=", 1)[0].strip().lower()
                    table[f"{section}.{key}"] = lineno
    except OSError as err:
        raise ConfigError(str(err))
    return table


def load_config(path):
    """Parse and type-check an INI file against the schema.

    Returns {section: {key: typed value}} with defaults filled in.
    """
    lines = _line_numbers(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as f:
            parser.read_file(f, source=path)
    except OSError as err:
        raise ConfigError(str(err))
    except configparser.Error as err:
        raise ConfigError(f"{path}: {err}")

    cfg = default_config()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{path}:{lines.get(section, '?')}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                loc = lines.get(f"{section}.{key}", "?")
                raise ConfigError(f"{path}:{loc}: unknown key '{key}' in [{section}]")
            _, parse = SCHEMA[section][key]
            try:
                cfg[section][key] = parse(raw)
            except ValueError as err:
                loc = lines.get(f"{section}.{key}", "?")
                raise ConfigError(f"{path}:{loc}: bad value for '{key}': {err}")
    return cfg


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_config(cfg, path, sections=None):
    """Write a canonical INI that load_config parses back identically."""
    with open(path, "w") as f:
        for section in sections or cfg.keys():
            f.write(f"[{section}]\n")
            for key, value in cfg[section].items():
                f.write(f"{key} = {_fmt(value)}\n")
            f.write("\n")


def set_key(cfg, dotted, raw):
    """Override 'section.key' from a string value (sweep CLI)."""
    if "." not in dotted:
        raise ConfigError(f"expected section.key, got {dotted!r}")
    section, key = dotted.split(".", 1)
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key {dotted!r}")
    _, parse = SCHEMA[section][key]
    try:
        cfg[section][key] = parse(raw) if isinstance(raw, str) else raw
    except ValueError as err:
        raise ConfigError(f"bad value for {dotted}: {err}")
    return cfg


def train_config_from(cfg, overrides=None):
    """Build a TrainConfig from the [train]/[losses]/[cluster] sections."""
    t = dict(cfg["train"])
    if overrides:
        t.update(overrides)
    weights = LossWeights(
        lambda_ctr=cfg["losses"]["lambda_ctr"],
        lambda_ort=cfg["losses"]["lambda_ort"],
        lambda_man=cfg["losses"]["lambda_man"],
        delay_steps=cfg["losses"]["delay_steps"],
        ramp_steps=cfg["losses"]["ramp_steps"],
    )
    return TrainConfig(
        steps=t["steps"],
        batch_size=t["batch_size"],
        lr=t["lr"],
        adam_beta1=t["adam_beta1"],
        adam_beta2=t["adam_beta2"],
        adam_eps=t["adam_eps"],
        grad_clip_norm=t["grad_clip_norm"],
        opacity_reg=t["opacity_reg"],
        cosine_anneal=t["cosine_anneal"],
        weights=weights,
        k_train=cfg["cluster"]["k_train"],
        k_eval=cfg["cluster"]["k_eval"],
        merge_t=cfg["cluster"]["merge_t"],
        gap=t["gap"],
        n_samples_per_ray=t["n_samples_per_ray"],
        grid_resolution=t["grid_resolution"],
        t_near=t["t_near"],
        t_far=t["t_far"],
        seed=t["seed"],
        mode=t["mode"],
        precision=t["precision"],
        background=tuple(t["background"]),
        kmeans_iters_train=cfg["cluster"]["kmeans_iters_train"],
        kmeans_iters_eval=cfg["cluster"]["kmeans_iters_eval"],
        density_bias=t["density_bias"],
        save_every=t["save_every"],
        threads=t["threads"],
    )


def scene_spec_from(cfg):
    from .scenegen import random_scene_spec

    s = cfg["scene"]
    return random_scene_spec(
        room_half_extents=s["room_half_extents"],
        n_boxes=s["n_boxes"],
        n_spheres=s["n_spheres"],
        n_rot_boxes=s["n_rot_boxes"],
        checker_period=s["checker_period"],
        mf_offset_ypr_deg=(s["mf_offset_yaw"], s["mf_offset_pitch"], s["mf_offset_roll"]),
        seed=s["seed"],
    )
