"""Build the annotated corpus from scripted drives and inspect it: segment
runs, the five question-answer templates, manifest balance and the answer
vocabulary.

Run:  python3 demos/03_corpus_and_vocabs.py
"""

import pathlib
from collections import Counter

from drivevqa import dataset, sim, track

out = pathlib.Path("demo_out/03")
out.mkdir(parents=True, exist_ok=True)

ta = track.load_track("track-a")
tb = track.load_track("track-b")
pilot = sim.Autopilot()

train_route = sim.plan_route(ta, *ta.routes["train"])
train_edges = set(train_route.edge_keys)

print("recording drives (autopilot)...")
train_runs, heldout, tb_runs = [], [], []
for spec, route_name, drive_id in ((ta, "train", "a-train"),
                                   (ta, "alt_left", "a-alt-left"),
                                   (ta, "alt_right", "a-alt-right"),
                                   (tb, "main", "b-main")):
    env = sim.make_env(spec, route_name)
    drive = dataset.record_drive(pilot, env, fps=30, track_id=spec.name,
                                 drive_id=drive_id)
    runs = dataset.extract_segments(drive)
    print(f"  {drive_id}: {len(drive.frames)} frames -> "
          + ", ".join(f"{r.category}[{len(r.indices)}]" for r in runs))
    if spec is tb:
        tb_runs += runs
    elif route_name == "train":
        train_runs += runs
    else:
        edges = {e["edge_key"] for e in drive.entries}
        heldout += dataset.filter_runs_to_edges(runs, edges - train_edges)

records = dataset.build_corpus(train_runs, [heldout, tb_runs], out / "frames",
                               per_category_train=50, per_category_test=20)
dataset.write_manifest(records, out / "manifest.jsonl")

print(f"\nmanifest: {len(records)} records")
print(Counter((r.split, r.category) for r in records))

print("\nthe five annotation templates:")
for cat, (question, answer) in dataset.QA_TEMPLATES.items():
    print(f"  {cat:13s} Q: {question}")
    print(f"  {'':13s} A: {answer}")

qvocab, avocab = dataset.build_vocabs(records)
print(f"\nquestion vocabulary ({qvocab.size} tokens): {qvocab.to_lines()}")
print(f"answer vocabulary: {avocab.size} candidates; the five canonical "
      f"answers sit at indices "
      f"{[avocab.index_of(a) for _, a in dataset.QA_TEMPLATES.values()]}")
