"""Train the question-answering model on a freshly built corpus, then ask
it the five canonical questions about held-out frames and print the top-5
ranked answers, misclassifications included.

Run:  python3 demos/04_ask_the_model.py      (about two minutes)
"""

import pathlib

from drivevqa import dataset, render, sim, track, vqa

out = pathlib.Path("demo_out/04")
out.mkdir(parents=True, exist_ok=True)

ta, tb = track.load_track("track-a"), track.load_track("track-b")
pilot = sim.Autopilot()
train_route = sim.plan_route(ta, *ta.routes["train"])
train_edges = set(train_route.edge_keys)

train_runs, heldout, tb_runs = [], [], []
for spec, route_name in ((ta, "train"), (ta, "alt_left"), (ta, "alt_right"),
                         (tb, "main")):
    env = sim.make_env(spec, route_name)
    drive = dataset.record_drive(pilot, env, fps=30, track_id=spec.name,
                                 drive_id=f"{spec.name}-{route_name}")
    runs = dataset.extract_segments(drive)
    if spec is tb:
        tb_runs += runs
    elif route_name == "train":
        train_runs += runs
    else:
        edges = {e["edge_key"] for e in drive.entries}
        heldout += dataset.filter_runs_to_edges(runs, edges - train_edges)

records = dataset.build_corpus(train_runs, [heldout, tb_runs], out / "frames")
qvocab, avocab = dataset.build_vocabs(records)

print("training the answering model (40 epochs)...")
model, losses = vqa.train_vqa(records, qvocab, avocab, epochs=40,
                              progress=lambda e, l: print(f"  epoch {e:3d} "
                                                          f"loss {l:.4f}")
                              if e % 10 == 0 else None)

test_records = [r for r in records if r.split == "test"]
report = vqa.evaluate(test_records, model)
print("\n" + vqa.format_report(report))

print("one held-out example per category, top-5 answers:")
for cat in track.CATEGORIES:
    rec = next(r for r in test_records if r.category == cat)
    frame = render.read_frame(rec.frame_path)
    prediction = model.predict(frame, rec.question, k=5)
    mark = "correct" if prediction.answer == rec.answer else "WRONG"
    print(f"\n  [{cat}] {rec.question}  ({mark})")
    for text, prob in prediction.items:
        print(f"    {prob:8.4f}  {text}")
