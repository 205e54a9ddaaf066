"""Command-line entry points.

Subcommands: ``run`` (protocol from a config file), ``simulate`` (automatic
loop against a built-in simulated user), ``evaluate`` (re-run the blinded A/B
assessment of a finished run), ``serve`` (HTTP preference service for human
listeners), and ``compress`` (standalone file compression).
"""

import argparse
import json
import sys
import threading
from pathlib import Path

import numpy as np

from .actions import build_action_space
from .audio import make_fixture_corpus, read_wav, write_wav
from .drc import BandSpec, CompressionParams, compress
from .errors import ListenerUnavailable
from .orchestrator import (
    RunConfig,
    build_env,
    desk_run_config,
    evaluate_ab,
    make_listener,
    run_protocol,
)


def _print_tally(tally: dict) -> None:
    pairs = tally.get("pairs", 0)
    print(f"evaluation over {pairs} pairs:")
    for key in ("personalized", "reference", "equal", "neither"):
        count = tally.get(key, 0)
        pct = 100.0 * count / pairs if pairs else 0.0
        print(f"  {key:13s} {count:4d}  ({pct:5.1f}%)")


def cmd_run(args) -> int:
    if args.resume:
        run_dir = Path(args.resume)
        cfg = RunConfig.from_json_file(run_dir / "config.json")
        resume = True
    else:
        cfg = RunConfig.from_json_file(args.config)
        run_dir = Path(args.out) if args.out else Path("runs") / cfg.config_hash()
        resume = False
    try:
        result = run_protocol(cfg, run_dir, resume=resume)
    except ListenerUnavailable as exc:
        print(f"suspended: {exc}\nresume with: prefcomp run --resume {run_dir}")
        return 3
    print(f"run complete; artifacts in {run_dir}")
    print(f"final adjustment: {list(result.final_adjustment)}")
    _print_tally(result.tally)
    return 0


def cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.corpus and args.noise:
        corpus_dir, noise_path = Path(args.corpus), Path(args.noise)
    else:
        corpus_dir, noise_path = make_fixture_corpus(
            out_dir / "fixture", n_clips=8, duration_s=0.6, seed=args.seed
        )
    if args.full:
        cfg = RunConfig(corpus_dir=str(corpus_dir), noise_path=str(noise_path),
                        seed=args.seed,
                        listener={"type": "simulated", "profile": args.user})
    else:
        cfg = desk_run_config(corpus_dir, noise_path, user=args.user, seed=args.seed,
                              n_episodes=args.episodes)
    if args.simulated_user:
        cfg.listener = {"type": "simulated", "profile": args.simulated_user}
    result = run_protocol(cfg, out_dir / f"user{args.user}")
    print(f"simulated user {args.user}: final adjustment {list(result.final_adjustment)}")
    _print_tally(result.tally)
    return 0


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    cfg = RunConfig.from_json_file(run_dir / "config.json")
    from .agent import QLearner
    from .orchestrator import probe_greedy_action

    learner = QLearner.load(run_dir / "policy.ckpt", cfg.agent)
    env = build_env(cfg)
    seq = np.random.SeedSequence(cfg.seed + 1)
    env_ss, eval_ss, listener_ss = seq.spawn(3)
    env_rng = np.random.default_rng(env_ss)
    env.reset(env_rng)
    listener = make_listener(cfg, np.random.default_rng(listener_ss))
    action = probe_greedy_action(learner, env, env_rng)
    tally = evaluate_ab(
        env, env.action_space.vector(action), args.pairs, listener,
        np.random.default_rng(eval_ss),
    )
    _print_tally(tally)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import PairBroker, ServiceListener, create_app

    run_dir = Path(args.run)
    run_dir.mkdir(parents=True, exist_ok=True)
    broker = PairBroker(
        run_dir / "feedback_log.jsonl",
        pairs_per_block=args.pairs_per_block,
        blocks=args.blocks,
        side_rng=np.random.default_rng(args.seed),
    )
    ui_dir = Path(args.ui_dir) if args.ui_dir else None
    app = create_app(broker, ui_dir=ui_dir)

    if args.demo_pairs:
        _seed_demo_round(broker, run_dir, args.demo_pairs, args.seed)
        broker.attach_run()
        print(f"demo round of {args.demo_pairs} pairs ready")
    else:
        config_path = Path(args.config) if args.config else run_dir / "config.json"
        cfg = RunConfig.from_json_file(config_path)
        listener = ServiceListener(broker, timeout_s=args.timeout)
        broker.attach_run()

        def _protocol():
            try:
                run_protocol(cfg, run_dir, listener=listener)
                print("protocol complete")
            except ListenerUnavailable as exc:
                print(f"suspended: {exc}")

        threading.Thread(target=_protocol, daemon=True).start()

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _seed_demo_round(broker, run_dir, n_pairs: int, seed: int) -> None:
    """Standalone round of synthetic pairs for UI development and testing."""
    from .actions import prescription_from_fitting
    from .audio import load_corpus
    from .environment import CompressionEnv
    from .features import DESK_FEATURES

    corpus_dir, noise_path = make_fixture_corpus(
        run_dir / "fixture", n_clips=6, duration_s=0.5, seed=seed
    )
    env = CompressionEnv(
        manifest=load_corpus(corpus_dir),
        noise=read_wav(noise_path),
        prescription=prescription_from_fitting(0),
        action_space=build_action_space(5, {1, 4}, active_bands=(0, 4)),
        feature_cfg=DESK_FEATURES,
        queue_capacity=64,
    )
    rng = np.random.default_rng(seed)
    env.reset(rng)
    for _ in range(16):
        env.step(int(rng.integers(0, env.n_actions)), rng)
    for _ in range(n_pairs):
        broker.enqueue(env.sample_query_pair(rng), "training_query")


def cmd_compress(args) -> int:
    clip = read_wav(args.in_path)
    params = CompressionParams.from_json_file(args.params)
    bands = BandSpec(tuple(args.band_edges)) if args.band_edges else BandSpec()
    out = compress(clip, bands, params, input_calibration_db=args.calibration)
    write_wav(args.out_path, out, pcm16=args.pcm16)
    if out.meta.get("peak_rescale", 1.0) < 1.0:
        print(f"peak guard engaged (scale {out.meta['peak_rescale']:.3f})")
    print(f"wrote {args.out_path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="prefcomp",
        description="Preference-driven personalization of hearing-aid compression",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute the fitting protocol from a config file")
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--out", help="run directory (default runs/<config hash>)")
    p.add_argument("--resume", help="resume a suspended run directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="automatic loop against a simulated user")
    p.add_argument("--user", default="1", choices=["1", "2", "3", "4", "5"])
    p.add_argument("--simulated-user", help="custom listener profile JSON file")
    p.add_argument("--out", default="runs/simulate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--corpus", help="WAV directory (default: synthetic fixture)")
    p.add_argument("--noise", help="noise WAV (default: synthetic fixture)")
    p.add_argument("--full", action="store_true", help="full-scale configuration")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="blinded A/B assessment of a finished run")
    p.add_argument("--run", required=True)
    p.add_argument("--pairs", type=int, default=60)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="HTTP preference service for human listeners")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--config", help="RunConfig JSON (default <run>/config.json)")
    p.add_argument("--timeout", type=float, default=3600.0,
                   help="seconds to wait for feedback before suspending")
    p.add_argument("--pairs-per-block", type=int, default=30)
    p.add_argument("--blocks", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ui-dir", default="frontend/dist",
                   help="static UI directory (mounted at /ui when present)")
    p.add_argument("--demo-pairs", type=int, default=0,
                   help="serve a standalone synthetic round instead of a run")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("compress", help="compress one WAV file")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--params", required=True, help="CompressionParams JSON file")
    p.add_argument("--calibration", type=float, default=100.0)
    p.add_argument("--band-edges", type=float, nargs="+")
    p.add_argument("--pcm16", action="store_true")
    p.set_defaults(func=cmd_compress)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
