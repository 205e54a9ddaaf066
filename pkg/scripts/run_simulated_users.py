#!/usr/bin/env python3
"""Run the full personalization loop against all five simulated listeners and
print a summary table (per-user run artifacts land under --out)."""

import argparse
from pathlib import Path

import numpy as np

from prefcomp.audio import make_fixture_corpus
from prefcomp.orchestrator import desk_run_config, run_protocol
from prefcomp.simuser import builtin_profiles


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/sim_users")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--episodes", type=int, default=50)
    parser.add_argument("--corpus", help="WAV directory (default: synthetic fixture)")
    parser.add_argument("--noise", help="noise WAV (default: synthetic fixture)")
    parser.add_argument("--users", nargs="+", default=["1", "2", "3", "4", "5"])
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.corpus and args.noise:
        corpus_dir, noise_path = args.corpus, args.noise
    else:
        corpus_dir, noise_path = make_fixture_corpus(
            out / "fixture", n_clips=8, duration_s=0.6, seed=args.seed
        )

    rows = []
    for user in args.users:
        cfg = desk_run_config(
            corpus_dir, noise_path, user=user, seed=args.seed, n_episodes=args.episodes
        )
        result = run_protocol(cfg, out / f"user{user}")
        rewards = [m["mean_reward"] for m in result.log.episode_metrics]
        slope = float(np.polyfit(np.arange(len(rewards)), rewards, 1)[0])
        target = builtin_profiles()[user].target_adjustment
        rows.append(
            {
                "user": user,
                "actions": cfg.action_space().size,
                "final": result.final_adjustment,
                "hit": result.final_adjustment == target,
                "slope": slope,
                "tally": result.tally,
            }
        )

    print(f"\n{'user':4s} {'|A|':>4s} {'target hit':>10s} {'reward slope':>13s} "
          f"{'pers':>5s} {'ref':>4s} {'eq':>4s}")
    for r in rows:
        t = r["tally"]
        print(f"{r['user']:4s} {r['actions']:4d} {str(r['hit']):>10s} {r['slope']:13.4f} "
              f"{t['personalized']:5d} {t['reference']:4d} {t['equal']:4d}")


if __name__ == "__main__":
    main()
