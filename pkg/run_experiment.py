import argparse
import os
import subprocess

import yaml

from pt_estimation.utils import get_latest_experiment_number, load_config


def run_step(command: str, frozen_config_path: str, out_dir: str, seed: int) -> int:
    return subprocess.run(
        [
            "uv",
            "run",
            "python",
            "-m",
            "pt_estimation.cli",
            command,
            "--config",
            frozen_config_path,
            "--out",
            out_dir,
            "--seed",
            str(seed),
        ],
    ).returncode


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--config", required=True)
    parser.add_argument("--seed", type=int, required=True)
    args = parser.parse_args()

    config = load_config(args.config)

    experiment_num = get_latest_experiment_number() + 1
    results_dir = f"results/{experiment_num}"

    try:
        os.makedirs(results_dir, exist_ok=False)
    except FileExistsError:
        raise RuntimeError(
            f"Results directory {results_dir} already exists. Another experiment may be running."
        )

    print(f"Running experiment {experiment_num}")
    print(f"Results will be saved to: {results_dir}")

    # Frozen so every step sees the same settings even if config.yaml is edited mid-run
    frozen_config_path = os.path.join(results_dir, "config.yaml")
    with open(frozen_config_path, "w") as f:
        yaml.dump(config, f, default_flow_style=False)
    print(f"Frozen config saved to: {frozen_config_path}")

    code = run_step(
        "simulate", frozen_config_path, os.path.join(results_dir, "simulate"), args.seed
    )
    if code != 0:
        raise RuntimeError(f"simulate exited with code {code}")

    code = run_step(
        "verify", frozen_config_path, os.path.join(results_dir, "verify"), args.seed
    )
    if code == 3:
        print("Theory ledger FAILED, see verify/ledger.txt")
    elif code != 0:
        raise RuntimeError(f"verify exited with code {code}")

    print(f"Experiment {experiment_num} completed!")


if __name__ == "__main__":
    main()
