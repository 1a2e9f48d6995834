"""Recorded drives -> annotated question-answer corpus.

A drive is rendered at a fixed frame rate, each frame tagged with the
action category of the route span under the vehicle.  Frames are grouped
into maximal constant-category runs, subsampled uniformly per category and
paired with that category's canonical question and answer.  The train
split comes from the training route; the test split draws half from
held-out segments of the same track and half from the second track.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .render import Frame, RenderConfig, read_frame, render_frame, write_frame
from .sim import (EVENT_COLLISION, EVENT_LANE_DEPARTURE, Environment,
                  project_to_route)
from .track import CATEGORIES

QA_TEMPLATES: dict[str, tuple[str, str]] = {
    "go_straight": (
        "Why is the car going straight?",
        "Because the road is clear."),
    "turn_left": (
        "Why is the car turning to the left?",
        "Because the road is bending to the left."),
    "turn_left_t": (
        "Why is the car turning left at T-junction?",
        "Because there is no obstacle on the right side and turning left can "
        "be performed safely."),
    "turn_right": (
        "Why is the car turning to the right?",
        "Because the road is bending to the right."),
    "turn_right_t": (
        "Why is the car turning right at T-junction?",
        "Because there is no obstacle on the left side and turning right can "
        "be performed safely."),
}

CRASH_EXCLUSION_FRAMES = 5  # frames this close to a crash are never annotated
MIN_RUN_LENGTH = 10

MANIFEST_FIELDS = ("frame_id", "frame_path", "category", "question", "answer",
                   "track_id", "split")


class RolloutFailed(RuntimeError):
    """The driver crashed before covering any T-junction of the route."""


class InsufficientFrames(ValueError):
    """A category cannot supply the requested number of frames."""


class UnknownCategory(ValueError):
    pass


@dataclass(frozen=True)
class QARecord:
    frame_id: str
    frame_path: str
    category: str
    question: str
    answer: str
    track_id: str
    split: str


@dataclass
class DriveRecord:
    drive_id: str
    track_id: str
    fps: int
    frames: list[Frame]
    entries: list[dict]
    final_event: str


@dataclass(frozen=True)
class SegmentRun:
    category: str
    indices: tuple[int, ...]  # into the drive's frame/entry lists
    drive: DriveRecord = field(compare=False, repr=False, default=None)


# ---------------------------------------------------------------------------
# recording

def record_drive(driver, env: Environment, fps: int = 30, *,
                 cfg: RenderConfig | None = None, track_id: str = "",
                 drive_id: str = "drive", max_steps: int | None = None) -> DriveRecord:
    """Greedy rollout rendered at ``fps`` frames per simulated second.

    Frame k is captured at the first sim step whose time reaches k / fps,
    at most one frame per step, so sim times are strictly increasing and
    the effective rate is min(fps, 1/dt).  Raises RolloutFailed when the
    episode ends in a crash before any junction span was covered, since
    such a recording could never complete the corpus.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    cfg = cfg or RenderConfig()
    state = env.reset()
    frames: list[Frame] = []
    entries: list[dict] = []

    def capture(state, event):
        idx = len(frames)
        s_here, _, _ = project_to_route(env.route, state.pose.x, state.pose.y,
                                        state.route_progress)
        category = env.route.category_at(s_here)
        frame_id = f"{drive_id}-{idx:05d}"
        meta = {"frame_id": frame_id, "sim_time": round(env.sim_time, 9),
                "action_category": category}
        frames.append(render_frame(env.track, state, cfg, meta=meta))
        entries.append({
            "frame_id": frame_id, "index": idx,
            "sim_time": round(env.sim_time, 9),
            "category": category,
            "edge_key": env.route.edge_key_at(s_here),
            "track_id": track_id, "drive_id": drive_id,
            "event": event,
        })

    capture(state, "none")
    limit = max_steps or env.params.max_steps
    final_event = "none"
    next_frame = 1
    for _ in range(limit):
        action = driver.act(env, state)
        outcome, truncated = env.step(action)
        state = outcome.next_state
        if env.sim_time >= next_frame / fps - 1e-9:
            capture(state, outcome.event)
            next_frame += 1
        if outcome.done or truncated:
            final_event = outcome.event if outcome.done else "max_steps"
            break

    has_junction_span = any(tag.endswith("_t") for _, _, tag in env.route.spans)
    covered_junction = any(e["category"].endswith("_t") for e in entries)
    if (final_event in (EVENT_COLLISION, EVENT_LANE_DEPARTURE)
            and has_junction_span and not covered_junction):
        raise RolloutFailed(
            f"drive {drive_id!r} ended in {final_event} before any T-junction")
    return DriveRecord(drive_id=drive_id, track_id=track_id, fps=fps,
                       frames=frames, entries=entries, final_event=final_event)


def save_drive(drive: DriveRecord, root) -> None:
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    for frame, entry in zip(drive.frames, drive.entries):
        write_frame(frame, root / "frames" / f"{entry['frame_id']}.png")
    with open(root / "log.jsonl", "w", encoding="utf-8") as fh:
        for entry in drive.entries:
            fh.write(json.dumps(entry) + "\n")
    with open(root / "drive.json", "w", encoding="utf-8") as fh:
        json.dump({"drive_id": drive.drive_id, "track_id": drive.track_id,
                   "fps": drive.fps, "final_event": drive.final_event}, fh)


def load_drive(root) -> DriveRecord:
    root = Path(root)
    head = json.loads((root / "drive.json").read_text())
    entries = [json.loads(line)
               for line in (root / "log.jsonl").read_text().splitlines()]
    frames = [read_frame(root / "frames" / f"{e['frame_id']}.png") for e in entries]
    return DriveRecord(drive_id=head["drive_id"], track_id=head["track_id"],
                       fps=head["fps"], frames=frames,
                       final_event=head["final_event"], entries=entries)


# ---------------------------------------------------------------------------
# segmentation

def extract_segments(drive: DriveRecord, min_len: int = MIN_RUN_LENGTH,
                     overrides: dict[str, str] | None = None) -> list[SegmentRun]:
    """Maximal constant-category frame runs, short runs dropped.

    Frames within CRASH_EXCLUSION_FRAMES of a collision or departure are
    discarded first; a manual override map may relabel frames by id before
    runs are formed.
    """
    entries = drive.entries
    if not entries:
        return []
    bad = set()
    for i, e in enumerate(entries):
        if e["event"] in (EVENT_COLLISION, EVENT_LANE_DEPARTURE):
            bad.update(range(max(0, i - CRASH_EXCLUSION_FRAMES), i + 1))
    categories = []
    for e in entries:
        cat = (overrides or {}).get(e["frame_id"], e["category"])
        if cat not in CATEGORIES:
            raise UnknownCategory(f"frame {e['frame_id']}: {cat!r}")
        categories.append(cat)

    runs: list[SegmentRun] = []
    start = None
    for i in range(len(entries) + 1):
        boundary = (i == len(entries) or i in bad
                    or (start is not None and categories[i] != categories[start]))
        if start is not None and boundary:
            if i - start >= min_len:
                runs.append(SegmentRun(categories[start], tuple(range(start, i)),
                                       drive))
            start = None
        if i < len(entries) and start is None and i not in bad:
            start = i
    return runs


def filter_runs_to_edges(runs: list[SegmentRun], allowed_edge_keys) -> list[SegmentRun]:
    """Restrict runs to frames on the given edges (held-out selection)."""
    allowed = set(allowed_edge_keys)
    out = []
    for run in runs:
        keep = tuple(i for i in run.indices
                     if run.drive.entries[i]["edge_key"] in allowed)
        if keep:
            out.append(SegmentRun(run.category, keep, run.drive))
    return out


# ---------------------------------------------------------------------------
# corpus building

def select_uniform(count: int, available: int) -> list[int]:
    """Positions of a uniform subsample of ``count`` out of ``available``."""
    if count > available:
        raise ValueError("cannot subsample more items than available")
    step = available / count
    return [int(i * step) for i in range(count)]


def _pool_by_category(runs: list[SegmentRun]) -> dict[str, list[tuple[DriveRecord, int]]]:
    pool: dict[str, list[tuple[DriveRecord, int]]] = {c: [] for c in CATEGORIES}
    for run in runs:
        pool[run.category].extend((run.drive, i) for i in run.indices)
    return pool


def build_split(pools: list[list[SegmentRun]], per_category: int, split: str,
                frame_root, templates=QA_TEMPLATES) -> list[QARecord]:
    """Uniformly draw per_category frames per category, spread evenly over
    the given pools, attach the category templates and write the frames.

    Raises InsufficientFrames naming the starved category.
    """
    frame_root = Path(frame_root)
    frame_root.mkdir(parents=True, exist_ok=True)
    quotas = [per_category // len(pools)] * len(pools)
    for i in range(per_category - sum(quotas)):
        quotas[i] += 1

    records = []
    for category in CATEGORIES:
        question, answer = templates[category]
        for pool, quota in zip(pools, quotas):
            if quota == 0:
                continue
            candidates = _pool_by_category(pool)[category]
            if len(candidates) < quota:
                raise InsufficientFrames(
                    f"category {category!r}: pool offers {len(candidates)} "
                    f"frames, need {quota} for split {split!r}")
            for pos in select_uniform(quota, len(candidates)):
                drive, idx = candidates[pos]
                entry = drive.entries[idx]
                frame = drive.frames[idx]
                path = frame_root / f"{entry['frame_id']}.png"
                if not path.exists():
                    write_frame(frame, path)
                records.append(QARecord(
                    frame_id=entry["frame_id"], frame_path=str(path),
                    category=category, question=question, answer=answer,
                    track_id=drive.track_id, split=split))
    return records


def build_corpus(train_runs: list[SegmentRun], test_pools: list[list[SegmentRun]],
                 frame_root, per_category_train: int = 50,
                 per_category_test: int = 20,
                 templates=QA_TEMPLATES) -> list[QARecord]:
    """The full manifest: train split from one pool, test split spread over
    the given pools (held-out segments and the second track)."""
    frame_root = Path(frame_root)
    records = build_split([train_runs], per_category_train, "train",
                          frame_root / "train", templates)
    records += build_split(test_pools, per_category_test, "test",
                           frame_root / "test", templates)
    train_ids = {r.frame_id for r in records if r.split == "train"}
    test_ids = {r.frame_id for r in records if r.split == "test"}
    overlap = train_ids & test_ids
    if overlap:
        raise ValueError(f"train/test frame overlap: {sorted(overlap)[:3]}")
    return records


# ---------------------------------------------------------------------------
# manifest i/o

def write_manifest(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({k: getattr(rec, k) for k in MANIFEST_FIELDS}) + "\n")


def read_manifest(path) -> list[QARecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(QARecord(**json.loads(line)))
    return records


def load_overrides(path) -> dict[str, str]:
    """Manual relabel file: JSON object {frame_id: category}."""
    overrides = json.loads(Path(path).read_text())
    for frame_id, category in overrides.items():
        if category not in CATEGORIES:
            raise UnknownCategory(f"override for {frame_id!r}: {category!r}")
    return overrides


# ---------------------------------------------------------------------------
# vocabularies

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation except hyphens, split on whitespace."""
    cleaned = [ch if (ch.isalnum() or ch == "-") else " " for ch in text.lower()]
    return "".join(cleaned).split()


@dataclass
class QuestionVocab:
    index: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.index)

    def encode(self, text: str) -> list[int]:
        unk = self.index[UNK_TOKEN]
        return [self.index.get(tok, unk) for tok in tokenize(text)]

    def to_lines(self) -> list[str]:
        ordered = sorted(self.index.items(), key=lambda kv: kv[1])
        return [tok for tok, _ in ordered]

    @classmethod
    def from_lines(cls, lines) -> "QuestionVocab":
        return cls({tok: i for i, tok in enumerate(lines)})


@dataclass
class AnswerVocab:
    answers: list[str]

    def __post_init__(self):
        if len(set(self.answers)) != len(self.answers):
            raise ValueError("duplicate candidate answers")
        self._index = {a: i for i, a in enumerate(self.answers)}

    @property
    def size(self) -> int:
        return len(self.answers)

    def index_of(self, answer: str) -> int:
        return self._index[answer]

    def __contains__(self, answer: str) -> bool:
        return answer in self._index

    def to_lines(self) -> list[str]:
        return list(self.answers)

    @classmethod
    def from_lines(cls, lines) -> "AnswerVocab":
        return cls(list(lines))


def load_distractors(path=None) -> list[str]:
    if path is None:
        text = (resources.files("drivevqa.data") / "distractor_answers.txt").read_text()
    else:
        text = Path(path).read_text()
    return [line.strip() for line in text.splitlines() if line.strip()]


def build_vocabs(records, distractors=None) -> tuple[QuestionVocab, AnswerVocab]:
    """Question tokens from the manifest; answers = distractors + the five
    canonical answers, deduplicated with stable order."""
    if distractors is None:
        distractors = load_distractors()
    tokens: list[str] = []
    seen = set()
    for rec in records:
        for tok in tokenize(rec.question):
            if tok not in seen:
                seen.add(tok)
                tokens.append(tok)
    index = {PAD_TOKEN: 0, UNK_TOKEN: 1}
    for tok in sorted(tokens):
        index[tok] = len(index)
    qvocab = QuestionVocab(index)

    answers: list[str] = []
    seen_ans = set()
    targets = [answer for _, answer in QA_TEMPLATES.values()]
    for answer in list(distractors) + targets:
        if answer not in seen_ans:
            seen_ans.add(answer)
            answers.append(answer)
    return qvocab, AnswerVocab(answers)
