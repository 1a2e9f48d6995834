"""Command line pipeline: train-agent, record, build-dataset, train-vqa,
eval-vqa, explain and serve.

Every stage writes its artifacts plus a reproducibility stamp (seed, config
hash, versions) into its output directory; stages check that their
prerequisite artifacts exist and name the missing file otherwise.  Flags
mirror the RunConfig fields in kebab-case and a --config JSON file supplies
overrides in bulk (flags win over the file, the file wins over defaults).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, dataset, ddpg, render, sim, vqa
from . import track as trackmod


class MissingPrerequisite(FileNotFoundError):
    """A required artifact from an earlier stage does not exist."""


@dataclass
class RunConfig:
    track: str = "track-a"
    test_track: str = "track-b"
    out: str = "runs/desk"
    seed: int = 7
    profile: str = "desk"            # or "paper" (640x480 RGB, paper-size nets)
    episodes: int = 500
    fps: int = 30
    driver: str = "agent"            # or "autopilot" for scripted recordings
    per_category_train: int = 50
    per_category_test: int = 20
    vqa_epochs: int = 100
    min_run_length: int = 10
    distractors: str = ""            # path; empty = shipped list
    overrides: str = ""              # manual relabel file (JSON)
    topk: int = 5
    port: int = 0                    # 0 = env DRIVEVQA_PORT or 8000
    static_dir: str = ""             # dashboard files served at /
    mode: str = "replay"             # serve mode; "live" steps the frozen policy

    def render_config(self) -> render.RenderConfig:
        if self.profile == "paper":
            return render.PAPER_SCALE
        return render.RenderConfig()

    def vqa_config(self) -> vqa.VqaConfig:
        base = vqa.PAPER_PROFILE if self.profile == "paper" else vqa.VqaConfig()
        base.epochs = self.vqa_epochs
        base.seed = self.seed
        return base

    # artifact layout
    @property
    def agent_dir(self) -> Path:
        return Path(self.out) / "agent"

    @property
    def drives_dir(self) -> Path:
        return Path(self.out) / "drives"

    @property
    def corpus_dir(self) -> Path:
        return Path(self.out) / "corpus"

    @property
    def vqa_dir(self) -> Path:
        return Path(self.out) / "vqa"

    @property
    def manifest_path(self) -> Path:
        return self.corpus_dir / "manifest.jsonl"

    @property
    def agent_ckpt(self) -> Path:
        return self.agent_dir / "agent.ckpt"

    @property
    def model_dir(self) -> Path:
        return self.vqa_dir / "model"

    @property
    def report_path(self) -> Path:
        return self.vqa_dir / "report.txt"


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def write_stamp(cfg: RunConfig, stage: str, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = {
        "stage": stage,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "drivevqa": __version__,
        },
    }
    (out_dir / "stamp.json").write_text(json.dumps(stamp, sort_keys=True), "utf-8")


def require(path: Path, hint: str) -> Path:
    if not Path(path).exists():
        raise MissingPrerequisite(f"missing {path} - run `drivevqa {hint}` first")
    return Path(path)


START_OFFSETS = (0.0, 0.35, -0.35)  # lateral spawn shifts, one drive each


def standard_drive_specs(cfg: RunConfig):
    """(drive_id, track name, route name, start offset) for the corpus
    recordings: every route of both tracks, driven from three laterally
    shifted spawns so each segment is covered by distinct trajectories."""
    train_track = trackmod.load_track(cfg.track)
    test_track = trackmod.load_track(cfg.test_track)
    specs = []
    for prefix, track_name, spec in (("a", cfg.track, train_track),
                                     ("b", cfg.test_track, test_track)):
        for route_name in sorted(spec.routes):
            for i, offset in enumerate(START_OFFSETS):
                drive_id = f"{prefix}-{route_name.replace('_', '-')}-v{i}"
                specs.append((drive_id, track_name, route_name, offset))
    return specs


# ---------------------------------------------------------------------------
# stages

def training_route_order(spec) -> list[str]:
    """Main route first, then the rest alphabetically; the round-robin
    episode schedule is part of the deterministic training recipe."""
    names = sorted(spec.routes)
    if "train" in names:
        names.remove("train")
        names.insert(0, "train")
    return names


def cmd_train_agent(cfg: RunConfig) -> int:
    spec = trackmod.load_track(cfg.track)
    envs = [sim.make_env(spec, name) for name in training_route_order(spec)]
    hp = ddpg.Hyperparams(episodes=cfg.episodes, seed=cfg.seed)
    print(f"training DDPG on {cfg.track} ({len(envs)} routes, "
          f"{cfg.episodes} episodes, seed {cfg.seed})")
    agent, log = ddpg.train(envs, hp, progress=_episode_progress)
    cfg.agent_dir.mkdir(parents=True, exist_ok=True)
    agent.save(cfg.agent_ckpt)
    ddpg.write_learning_log(log, cfg.agent_dir / "learning_curve.jsonl")
    write_stamp(cfg, "train-agent", cfg.agent_dir)
    returns = [e["return"] for e in log[-20:]]
    if returns:
        print(f"done; mean return of last 20 episodes: {np.mean(returns):.1f}")
    return 0


def _episode_progress(entry):
    if entry["episode"] % 50 == 0:
        print(f"  episode {entry['episode']}: return {entry['return']:.1f} "
              f"({entry['steps']} steps, {entry['event']})")


def load_agent(cfg: RunConfig) -> ddpg.DdpgAgent:
    require(cfg.agent_ckpt, "train-agent")
    agent = ddpg.DdpgAgent(ddpg.obs_dim(), 2, ddpg.Hyperparams(seed=cfg.seed))
    agent.load(cfg.agent_ckpt)
    return agent


def make_driver(cfg: RunConfig):
    if cfg.driver == "autopilot":
        return sim.Autopilot()
    return ddpg.ActorPolicy(load_agent(cfg))


def cmd_record(cfg: RunConfig) -> int:
    driver = make_driver(cfg)
    rcfg = cfg.render_config()
    for drive_id, track_name, route_name, offset in standard_drive_specs(cfg):
        spec = trackmod.load_track(track_name)
        env = sim.make_env(spec, route_name, start_offset=offset)
        drive = dataset.record_drive(driver, env, fps=cfg.fps, cfg=rcfg,
                                     track_id=track_name, drive_id=drive_id)
        dataset.save_drive(drive, cfg.drives_dir / drive_id)
        print(f"recorded {drive_id}: {len(drive.frames)} frames, "
              f"ended {drive.final_event}")
        if drive.final_event != sim.EVENT_GOAL:
            print(f"warning: {drive_id} did not reach the goal", file=sys.stderr)
    write_stamp(cfg, "record", cfg.drives_dir)
    return 0


def cmd_build_dataset(cfg: RunConfig) -> int:
    specs = standard_drive_specs(cfg)
    for drive_id, _, _, _ in specs:
        require(cfg.drives_dir / drive_id / "log.jsonl", "record")
    overrides = dataset.load_overrides(cfg.overrides) if cfg.overrides else None

    train_track = trackmod.load_track(cfg.track)
    train_route = sim.plan_route(train_track, *train_track.routes["train"])
    train_edges = set(train_route.edge_keys)

    train_runs, heldout_runs, test_track_runs = [], [], []
    for drive_id, track_name, route_name, _ in specs:
        drive = dataset.load_drive(cfg.drives_dir / drive_id)
        runs = dataset.extract_segments(drive, min_len=cfg.min_run_length,
                                        overrides=overrides)
        if track_name == cfg.test_track:
            test_track_runs += runs
        elif route_name == "train":
            train_runs += runs
        else:
            edges = {e["edge_key"] for e in drive.entries}
            heldout_runs += dataset.filter_runs_to_edges(runs, edges - train_edges)

    records = dataset.build_corpus(
        train_runs, [heldout_runs, test_track_runs], cfg.corpus_dir / "frames",
        per_category_train=cfg.per_category_train,
        per_category_test=cfg.per_category_test)
    cfg.corpus_dir.mkdir(parents=True, exist_ok=True)
    dataset.write_manifest(records, cfg.manifest_path)
    write_stamp(cfg, "build-dataset", cfg.corpus_dir)
    n_train = sum(1 for r in records if r.split == "train")
    print(f"manifest: {n_train} train / {len(records) - n_train} test records "
          f"-> {cfg.manifest_path}")
    return 0


def cmd_train_vqa(cfg: RunConfig) -> int:
    require(cfg.manifest_path, "build-dataset")
    records = dataset.read_manifest(cfg.manifest_path)
    distractors = dataset.load_distractors(cfg.distractors or None)
    qvocab, avocab = dataset.build_vocabs(records, distractors)
    vcfg = cfg.vqa_config()
    print(f"training VQA: {sum(1 for r in records if r.split == 'train')} records, "
          f"{vcfg.epochs} epochs, {avocab.size} candidate answers")
    model, losses = vqa.train_vqa(records, qvocab, avocab, vcfg,
                                  progress=_epoch_progress)
    model.save(cfg.model_dir)
    with open(cfg.vqa_dir / "loss_log.jsonl", "w", encoding="utf-8") as fh:
        for epoch, loss in enumerate(losses):
            fh.write(json.dumps({"epoch": epoch, "loss": loss}) + "\n")
    write_stamp(cfg, "train-vqa", cfg.vqa_dir)
    train_records = [r for r in records if r.split == "train"]
    frames = vqa.load_frames(train_records)
    report = vqa.evaluate(train_records, model, frames=frames)
    print(f"final train accuracy: {report['accuracy']:.4f}")
    return 0


def _epoch_progress(epoch, loss):
    if epoch % 10 == 0:
        print(f"  epoch {epoch}: loss {loss:.4f}")


def cmd_eval_vqa(cfg: RunConfig) -> int:
    require(cfg.model_dir / "model.ckpt", "train-vqa")
    require(cfg.manifest_path, "build-dataset")
    model = vqa.VqaModel.load(cfg.model_dir)
    records = [r for r in dataset.read_manifest(cfg.manifest_path)
               if r.split == "test"]
    report = vqa.evaluate(records, model)
    vqa.write_report(report, cfg.report_path)
    write_stamp(cfg, "eval-vqa", cfg.vqa_dir)
    print(vqa.format_report(report), end="")
    print(f"report -> {cfg.report_path}")
    return 0


def cmd_explain(args, cfg: RunConfig) -> int:
    model = vqa.VqaModel.load(require(Path(args.model or cfg.model_dir), "train-vqa"))
    frame = render.read_frame(args.frame)
    prediction = vqa.predict_topk(frame, args.question, model, k=args.k)
    if args.format == "json":
        payload = {"answers": [{"text": t, "prob": p} for t, p in prediction.items]}
        print(json.dumps(payload))
    else:
        for text, prob in prediction.items:
            print(f"{prob:.4f}  {text}")
    return 0


def cmd_serve(cfg: RunConfig) -> int:
    from .service import ServiceApp, run_server
    port = cfg.port or int(os.environ.get("DRIVEVQA_PORT", "8000"))
    if cfg.mode == "live":
        app = ServiceApp(model_dir=require(cfg.model_dir, "train-vqa"),
                         mode="live",
                         agent_ckpt=require(cfg.agent_ckpt, "train-agent"),
                         live_track=cfg.track, live_route="train",
                         history_path=Path(cfg.out) / "history.jsonl",
                         static_dir=cfg.static_dir or None)
    else:
        app = ServiceApp(model_dir=require(cfg.model_dir, "train-vqa"),
                         drive_dir=require(cfg.drives_dir / "a-train-v0", "record"),
                         history_path=Path(cfg.out) / "history.jsonl",
                         static_dir=cfg.static_dir or None)
    app.load()
    print(f"serving on http://127.0.0.1:{port} ({cfg.mode} mode)")
    run_server(app, port)
    return 0


# ---------------------------------------------------------------------------
# argument plumbing

def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with RunConfig overrides")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, type=type(f.default), default=None,
                            help=f"default: {f.default!r}")


def resolve_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(json.loads(Path(args.config).read_text()))
    for f in fields(RunConfig):
        given = getattr(args, f.name, None)
        if given is not None:
            values[f.name] = given
    return RunConfig(**values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivevqa",
        description="explainable-driving sandbox: agent training, corpus "
                    "building, question answering and the review service")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("train-agent", cmd_train_agent),
                     ("record", cmd_record),
                     ("build-dataset", cmd_build_dataset),
                     ("train-vqa", cmd_train_vqa),
                     ("eval-vqa", cmd_eval_vqa),
                     ("serve", cmd_serve)):
        p = sub.add_parser(name)
        _add_config_flags(p)
        p.set_defaults(func=lambda a, fn=fn: fn(resolve_config(a)))

    p = sub.add_parser("explain", help="rank answers for one frame + question")
    _add_config_flags(p)
    p.add_argument("--frame", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=lambda a: cmd_explain(a, resolve_config(a)))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MissingPrerequisite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (vqa.EmptyQuestion, dataset.RolloutFailed, dataset.InsufficientFrames,
            render.FormatError, trackmod.InvalidTrack, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
