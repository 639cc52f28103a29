"""Random-policy returns on every task, plus a recorded episode of one of them."""
import sys
from pathlib import Path

from nprl.env import TASK_IDS, load_task
from nprl.env.rollout import random_policy, random_policy_stats, record_episode


def main(out="demo_recording"):
    for tid in TASK_IDS:
        stats = random_policy_stats(tid, 20, seed=0)
        lo, hi = load_task(tid).return_bounds()
        print(f"{tid:18} mean {stats['mean']:9.2f}  sd {stats['std']:8.2f}  bounds [{lo:g}, {hi:g}]")
    task = load_task("defend-center")
    info = record_episode(task, random_policy(task, 0), seed=0, out_path=Path(out), resolution=64)
    print(f"recorded defend-center to {out}: return {info['return']:g} over {info['ticks']} ticks")


if __name__ == "__main__":
    main(*sys.argv[1:])
