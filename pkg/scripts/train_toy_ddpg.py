"""Train the DDPG selector on the stationary toy environment and report greedy quality.

    python3 scripts/train_toy_ddpg.py --seeds 0 1 2 --episodes 500
"""

import argparse

import numpy as np

from drlfl import ddpg


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--devices", type=int, default=8)
    ap.add_argument("--select", type=int, default=2)
    ap.add_argument("--episodes", type=int, default=500)
    ap.add_argument("--horizon", type=int, default=10)
    ap.add_argument("--eval-episodes", type=int, default=100)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = ap.parse_args()

    profiles = ddpg.toy_profiles(args.devices)
    best, r_opt = ddpg.exhaustive_best(profiles, args.select)
    print(f"optimum {best} with reward {r_opt:.4f}")
    for seed in args.seeds:
        agent = ddpg.DdpgAgent(args.devices, ddpg.DdpgConfig(seed=seed))
        env = ddpg.StationarySelectionEnv(profiles, args.select, args.horizon, seed)
        history = ddpg.train_on_env(agent, env, args.episodes)
        rewards, hits = ddpg.evaluate_greedy(
            agent, ddpg.StationarySelectionEnv(profiles, args.select, args.horizon, 1000 + seed),
            args.eval_episodes, best)
        print(f"seed {seed}: last-50 training reward {np.mean(history[-50:]):.3f}, "
              f"greedy reward {np.mean(rewards):.3f}, optimal pair {np.mean(hits):.0%}")


if __name__ == "__main__":
    main()
