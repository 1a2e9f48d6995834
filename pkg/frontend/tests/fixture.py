"""Build the tiny artifact set the dashboard tests serve against."""

import sys

from drivevqa import cli

FLAGS = ["--episodes", "2", "--per-category-train", "3",
         "--per-category-test", "2", "--vqa-epochs", "4",
         "--driver", "autopilot", "--seed", "5"]

if __name__ == "__main__":
    out = sys.argv[1]
    for stage in ("train-agent", "record", "build-dataset", "train-vqa"):
        code = cli.main([stage, *FLAGS, "--out", out])
        if code != 0:
            sys.exit(code)
    print("fixture ready")
