#!/usr/bin/env python3
"""Generate the synthetic fixture corpus (tone-complex "speech" plus a
filtered-noise "babble" bed) used by tests and demos."""

import argparse

from prefcomp.audio import make_fixture_corpus


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="fixture_corpus")
    parser.add_argument("--clips", type=int, default=12)
    parser.add_argument("--speakers", type=int, default=3)
    parser.add_argument("--duration", type=float, default=2.0)
    parser.add_argument("--rate", type=int, default=16000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    corpus_dir, noise_path = make_fixture_corpus(
        args.out,
        n_clips=args.clips,
        n_speakers=args.speakers,
        duration_s=args.duration,
        sample_rate=args.rate,
        seed=args.seed,
    )
    print(f"speech clips: {corpus_dir}")
    print(f"noise bed:    {noise_path}")


if __name__ == "__main__":
    main()
