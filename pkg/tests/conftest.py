import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from drivevqa import cli


TINY_FLAGS = [
    "--episodes", "2",
    "--per-category-train", "3",
    "--per-category-test", "2",
    "--vqa-epochs", "4",
    "--driver", "autopilot",
    "--seed", "5",
]


def run_tiny_pipeline(out_dir) -> cli.RunConfig:
    """Drive every CLI stage with desk-tiny settings; returns the config."""
    flags = TINY_FLAGS + ["--out", str(out_dir)]
    for stage in ("train-agent", "record", "build-dataset", "train-vqa",
                  "eval-vqa"):
        code = cli.main([stage, *flags])
        assert code == 0, f"stage {stage} failed"
    parser = cli.build_parser()
    args = parser.parse_args(["eval-vqa", *flags])
    return cli.resolve_config(args)


@pytest.fixture(scope="session")
def tiny_pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    return run_tiny_pipeline(out)
