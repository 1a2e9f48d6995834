"""Train the DDPG agent on the single-lane mini track and plot the
learning curve as ASCII.  Takes half a minute or so on a laptop CPU.

Run:  python3 demos/02_train_agent_mini.py
"""

import numpy as np

from drivevqa import ddpg, sim, track

spec = track.load_track("mini-straight")
env = sim.make_env(spec, "main")
hp = ddpg.Hyperparams(episodes=120, seed=7)

print(f"training {hp.episodes} episodes on {spec.name} (seed {hp.seed});")
agent, log = ddpg.train(env, hp, progress=lambda e: print(
    f"  ep {e['episode']:3d}  return {e['return']:8.1f}  "
    f"steps {e['steps']:4d}  {e['event']}") if e["episode"] % 20 == 0 else None)

returns = np.array([e["return"] for e in log])
lo, hi = returns.min(), returns.max()
print("\nlearning curve (each bar = one episode bucket of 6):")
for i in range(0, len(returns), 6):
    mean = returns[i:i + 6].mean()
    width = int(48 * (mean - lo) / (hi - lo + 1e-9))
    print(f"  {i:3d} {'#' * width} {mean:8.1f}")

records, event = ddpg.greedy_rollout(agent, env)
print(f"\ngreedy rollout: {event} in {len(records)} steps, "
      f"return {sum(r['reward'] for r in records):.1f}")
