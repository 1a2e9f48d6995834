"""Tour of the track world: plan a route, drive it with the scripted
autopilot, and save a filmstrip of rendered frames.

Run:  python3 demos/01_world_and_autopilot.py
"""

import pathlib

from drivevqa import render, sim, track

out = pathlib.Path("demo_out/01")
out.mkdir(parents=True, exist_ok=True)

spec = track.load_track("track-a")
print(f"track {spec.name}: {len(spec.segments)} segments, "
      f"lane width {spec.lane_width} m, routes {sorted(spec.routes)}")

route = sim.plan_route(spec, *spec.routes["train"])
print(f"\ntrain route: {route.length:.1f} m, {len(route.waypoints)} waypoints")
print("spans:")
for s0, s1, tag in route.spans:
    print(f"  {s0:7.2f} .. {s1:7.2f} m   {tag}")

env = sim.make_env(spec, "train")
records, event = sim.rollout(env, sim.Autopilot())
returns = sum(r["reward"] for r in records)
print(f"\nautopilot drive: {event} after {len(records)} steps "
      f"({records[-1]['t']:.1f} s), return {returns:.1f}")
sim.export_trajectory(records, out / "trajectory.jsonl")

# filmstrip: one frame per second of driving
env.reset()
state = env.state
pilot = sim.Autopilot()
shots = 0
while True:
    if env.steps % 20 == 0:
        frame = render.render_frame(spec, state, render.RenderConfig())
        render.write_frame(frame, out / f"shot_{shots:02d}.png")
        shots += 1
    outcome, truncated = env.step(pilot.act(env, state))
    state = outcome.next_state
    if outcome.done or truncated:
        break
print(f"saved {shots} frames and the trajectory log under {out}/")
