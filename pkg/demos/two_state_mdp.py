"""Train the dueling DQN on the two-state MDP and compare with value iteration.

Runs in about ten seconds on one core.
"""
import numpy as np

from nprl.dqn import greedy_q, train_dqn
from nprl.fixtures import mdp_anchor_config
from nprl.mdp import TwoStateEnv, state_image, value_iteration


def main():
    cfg = mdp_anchor_config()
    q_star = value_iteration(cfg.gamma)
    result = train_dqn("two-state-mdp", cfg, env=TwoStateEnv(cfg.resolution))
    q = np.array([greedy_q(result.model, state_image(s, cfg.resolution)) for s in (0, 1)])
    np.set_printoptions(precision=6, suppress=True)
    print("value iteration Q*:\n", q_star)
    print(f"learned Q after {result.updates} updates:\n", q)
    print(f"max abs error {np.abs(q - q_star).max():.2e}")


if __name__ == "__main__":
    main()
