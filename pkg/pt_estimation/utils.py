import copy
import hashlib
import json
import os
import platform
from importlib import metadata
from typing import Any, Dict, Sequence

import numpy as np
import yaml

# Mirrors the shipped config.yaml so the CLI works without one.
DEFAULT_CONFIG: Dict[str, Any] = {
    "analysis": {
        "bootstrap": 1000,
        "k_min": 1,
        "k_max": 10,
        "exhaustive_limit": 1_000_000,
        "format": "json",
    },
    "decide": {
        "llm_budget": 1,
        "k_min": 1,
        "k_max": 10,
        "llm_estimator": None,
        "human_estimator": "human_pt",
    },
    "dpt": {
        "bootstrap": 2000,
        "zero_tol": 0.0,
        "reference": "human_pt",
        "sided": "two-sided",
    },
    "simulate": {
        "scenarios": [
            "h1_budget_regime",
            "h2_coupling",
            "h3_representation_limits",
            "h4_engineerability",
            "degenerate",
        ],
    },
    "verify": {
        "trials": 10_000,
        "mc_trials": 20,
        "mc_panels": 100_000,
    },
    "mix": {
        "name": None,
    },
}


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(config_path: str | None = None) -> Dict[str, Any]:
    """Defaults overlaid with the YAML file at config_path, if any."""
    if config_path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    with open(config_path, "r") as f:
        loaded = yaml.safe_load(f) or {}
    if not isinstance(loaded, dict):
        raise ValueError(f"{config_path}: expected a mapping at the top level")
    return _merge(DEFAULT_CONFIG, loaded)


def get_latest_experiment_number(root: str = "results") -> int:
    """Finds the largest n such that results/n exists"""
    if not os.path.isdir(root):
        return 0
    existing = [d for d in os.listdir(root) if d.isdigit()]
    return max(int(d) for d in existing) if existing else 0


def resolve_out_dir(override_dir: str | None = None, root: str = "results") -> str:
    """
    If override_dir is provided, use (and create) that. If not, claim the next results/n.
    """
    if override_dir:
        os.makedirs(override_dir, exist_ok=True)
        return override_dir

    experiment_num = get_latest_experiment_number(root) + 1
    out_dir = os.path.join(root, str(experiment_num))
    try:
        os.makedirs(out_dir, exist_ok=False)
    except FileExistsError:
        raise RuntimeError(
            f"Results directory {out_dir} already exists. Another run may be in progress."
        )
    return out_dir


def substream(seed: int, *key: Any) -> np.random.Generator:
    """Independent generator for one cell of work, derived from (seed, key) only."""
    digest = hashlib.sha256("\x1f".join(str(k) for k in key).encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *words]))


def config_hash(config: Dict[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in ("pt-estimation", "numpy", "scipy", "pandas"):
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_json(obj: Any, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=False)
        f.write("\n")


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(
    out_dir: str,
    command: str,
    config: Dict[str, Any],
    seed: int | None,
    inputs: Sequence[str] = (),
) -> str:
    """Freeze the resolved config and write run_manifest.json next to the outputs."""
    frozen_config_path = os.path.join(out_dir, "config.yaml")
    with open(frozen_config_path, "w") as f:
        yaml.dump(config, f, default_flow_style=False)

    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "seed": seed,
        "inputs": {path: file_sha256(path) for path in inputs},
        "versions": package_versions(),
    }
    manifest_path = os.path.join(out_dir, "run_manifest.json")
    write_json(manifest, manifest_path)
    return manifest_path


def banner(title: str) -> None:
    print("=" * 50)
    print(title)
    print("=" * 50)
