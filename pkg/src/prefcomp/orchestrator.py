"""End-to-end fitting protocol: warm-up queries, reward training, agent
training with periodic query/fine-tune rounds, and the final blinded A/B
assessment. Every run writes an append-only event log plus CSV artifacts
under one run directory, so a crash loses at most one step and a suspended
human session can resume without losing any labels.
"""

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .actions import (
    ActionSpace,
    Prescription,
    apply_adjustment,
    build_action_space,
    prescription_from_fitting,
)
from .agent import AgentConfig, QLearner
from .audio import load_corpus, read_wav
from .drc import BandSpec
from .environment import AgentView, CompressionEnv, PairQuery
from .errors import ListenerUnavailable
from .features import FeatureConfig
from .reward import (
    PreferenceDataset,
    PreferenceTriplet,
    RewardNetConfig,
    RewardPredictor,
    finetune_reward,
    train_reward,
)
from .simuser import (
    CHOICE_A,
    CHOICE_B,
    CHOICE_EQUAL,
    CHOICE_NEITHER,
    SimulatedListener,
    builtin_profiles,
    SimUserProfile,
)

_MU = {CHOICE_A: (1.0, 0.0), CHOICE_B: (0.0, 1.0), CHOICE_EQUAL: (0.5, 0.5)}


@dataclass
class ProtocolConfig:
    warmup_steps: int = 50
    n_initial_pairs: int = 200
    finetune_rounds: int = 10  # 0 keeps the reward model fixed for the whole run
    queries_per_round: int = 30
    finetune_batches: int = 20
    eval_pairs: int = 60

    def __post_init__(self):
        for name in ("warmup_steps", "n_initial_pairs", "queries_per_round",
                     "finetune_batches", "eval_pairs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class RunConfig:
    corpus_dir: str
    noise_path: str
    seed: int = 0
    snr_db: float = 0.0
    sample_rate_hz: int | None = None
    input_calibration_db: float = 100.0
    queue_capacity: int = 256
    band_edges_hz: tuple = (0.0, 500.0, 1000.0, 2000.0, 4000.0, 6000.0)
    fitting_index: int = 0
    gains_soft_db: tuple | None = None
    cr_reference: tuple | None = None
    scales: tuple = (1.0, 4.0)
    active_bands: tuple | None = None
    drc: dict = field(default_factory=dict)  # CompressionParams overrides
    listener: dict = field(default_factory=lambda: {"type": "simulated", "profile": "1"})
    features: FeatureConfig = field(default_factory=FeatureConfig)
    reward: RewardNetConfig = field(default_factory=RewardNetConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)

    def __post_init__(self):
        self.band_edges_hz = tuple(float(e) for e in self.band_edges_hz)
        self.scales = tuple(float(s) for s in self.scales)
        if self.active_bands is not None:
            self.active_bands = tuple(int(b) for b in self.active_bands)
        if isinstance(self.features, dict):
            self.features = FeatureConfig(**self.features)
        if isinstance(self.reward, dict):
            self.reward = RewardNetConfig(**self.reward)
        if isinstance(self.agent, dict):
            self.agent = AgentConfig(**self.agent)
        if isinstance(self.protocol, dict):
            self.protocol = ProtocolConfig(**self.protocol)
        if not Path(self.corpus_dir).exists():
            raise FileNotFoundError(f"corpus directory not found: {self.corpus_dir}")
        if not Path(self.noise_path).exists():
            raise FileNotFoundError(f"noise file not found: {self.noise_path}")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def prescription(self) -> Prescription:
        bands = BandSpec(self.band_edges_hz)
        if self.gains_soft_db is not None and self.cr_reference is not None:
            return Prescription(
                bands=bands,
                gains_soft_db=tuple(self.gains_soft_db),
                cr_reference=tuple(self.cr_reference),
            )
        return prescription_from_fitting(self.fitting_index, bands)

    def action_space(self) -> ActionSpace:
        return build_action_space(
            len(self.band_edges_hz) - 1, self.scales, self.active_bands
        )


class RunLog:
    """Append-only protocol log plus the in-memory aggregates exported as
    CSV artifacts. Each record lands on disk before the protocol proceeds."""

    def __init__(self, run_dir, seed: int, config_hash: str):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.seed = seed
        self.config_hash = config_hash
        self.reward_history: list = []  # (epoch, train_loss, val_loss)
        self.episode_metrics: list = []  # dicts
        self.eval_tally: dict = {}
        self.dataset_records: list = []  # labeled-pair provenance
        self._events_path = self.run_dir / "events.jsonl"

    def event(self, kind: str, **data) -> None:
        record = {"t": time.time(), "kind": kind, **data}
        with open(self._events_path, "a") as fh:
            fh.write(json.dumps(record) + "\n")

    def add_reward_epoch(self, epoch: int, train_loss: float, val_loss: float) -> None:
        self.reward_history.append((epoch, train_loss, val_loss))
        self.event("reward_epoch", epoch=epoch, train=train_loss, val=val_loss)

    def add_episode(self, row) -> None:
        d = {
            "episode": row.episode,
            "mean_reward": row.mean_reward,
            "mean_q": row.mean_q,
            "epsilon": row.epsilon,
            "loss": row.loss,
        }
        self.episode_metrics.append(d)
        self.event("episode", **d)

    def add_pair(self, record: dict) -> None:
        self.dataset_records.append(record)
        self.event("pair", **record)

    def set_eval(self, tally: dict) -> None:
        self.eval_tally = tally
        self.event("evaluation", **tally)

    @classmethod
    def load(cls, run_dir, seed: int = 0, config_hash: str = "") -> "RunLog":
        log = cls(run_dir, seed, config_hash)
        path = log._events_path
        if not path.exists():
            return log
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("kind")
            rec.pop("t", None)
            if kind == "reward_epoch":
                log.reward_history.append((rec["epoch"], rec["train"], rec["val"]))
            elif kind == "episode":
                log.episode_metrics.append(rec)
            elif kind == "pair":
                log.dataset_records.append(rec)
            elif kind == "evaluation":
                log.eval_tally = rec
        return log


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def export_run_artifacts(log: RunLog, out_dir, config: RunConfig | None = None) -> list:
    """Write the CSV/JSON artifact set; returns the file paths written."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"run artifact directory not writable: {out_dir}") from exc

    paths = []

    p = out_dir / "reward_loss.csv"
    rows = ["epoch,train_loss,val_loss"]
    rows += [f"{e},{_fmt(tr)},{_fmt(va)}" for e, tr, va in log.reward_history]
    p.write_text("\n".join(rows) + "\n")
    paths.append(p)

    p = out_dir / "episode_metrics.csv"
    rows = ["episode,mean_reward,mean_q,epsilon,loss"]
    rows += [
        f"{d['episode']},{_fmt(d['mean_reward'])},{_fmt(d['mean_q'])},"
        f"{_fmt(d['epsilon'])},{_fmt(d['loss'])}"
        for d in log.episode_metrics
    ]
    p.write_text("\n".join(rows) + "\n")
    paths.append(p)

    p = out_dir / "eval_tally.csv"
    rows = ["outcome,count,percent"]
    total = max(1, int(log.eval_tally.get("pairs", 0)))
    for key in ("personalized", "reference", "equal", "neither"):
        count = int(log.eval_tally.get(key, 0))
        rows.append(f"{key},{count},{_fmt(100.0 * count / total)}")
    p.write_text("\n".join(rows) + "\n")
    paths.append(p)

    p = out_dir / "config.json"
    if config is not None:
        p.write_text(config.canonical_json() + "\n")
    elif not p.exists():
        p.write_text("{}\n")
    paths.append(p)

    p = out_dir / "dataset_manifest.jsonl"
    p.write_text(
        "".join(json.dumps(r, sort_keys=True) + "\n" for r in log.dataset_records)
    )
    paths.append(p)
    return paths


def _mu_for_choice(choice: str) -> tuple | None:
    return _MU.get(choice)


def _label_all(listener, queries) -> list:
    if hasattr(listener, "label_batch"):
        return listener.label_batch(queries)
    return [listener.label(q) for q in queries]


def collect_queries(
    env: CompressionEnv,
    listener,
    n_pairs: int,
    rng: np.random.Generator,
    log: RunLog | None = None,
    phase: str = "training_query",
    already_labeled: int = 0,
):
    """Present ``n_pairs`` query pairs and fold the answers into triplets.

    The whole round is rendered before any label is requested, so a service
    listener can serve every pair without blocking on DSP. NEITHER answers
    are logged but excluded from the dataset.
    """
    queries = [env.sample_query_pair(rng) for _ in range(already_labeled, n_pairs)]
    choices = _label_all(listener, queries)
    triplets = []
    origin = getattr(listener, "origin", "simulated")
    for i, (query, choice) in enumerate(zip(queries, choices), start=already_labeled):
        record = {
            "phase": phase,
            "index": i,
            "clip_id": query.clip_id,
            "noise_offset": query.noise_offset,
            "cr_a": list(query.cr_a),
            "cr_b": list(query.cr_b),
            "adj_a": list(query.adj_a),
            "adj_b": list(query.adj_b),
            "choice": choice,
            "origin": origin,
        }
        if log is not None:
            log.add_pair(record)
        mu = _mu_for_choice(choice)
        if mu is None:
            continue  # excluded from the dataset, kept in the log
        obs_a = env.observe(query.clip_a, query.adj_a)
        obs_b = env.observe(query.clip_b, query.adj_b)
        triplets.append(PreferenceTriplet(obs_a=obs_a, obs_b=obs_b, mu=mu, origin=origin))
    return triplets


def triplets_from_records(env: CompressionEnv, records) -> list:
    """Re-render labeled pairs from their provenance rows (resume path)."""
    triplets = []
    for rec in records:
        mu = _mu_for_choice(rec["choice"])
        if mu is None:
            continue
        clip_a = env.render(rec["clip_id"], rec["noise_offset"], tuple(rec["cr_a"]))
        clip_b = env.render(rec["clip_id"], rec["noise_offset"], tuple(rec["cr_b"]))
        obs_a = env.observe(clip_a, tuple(rec["adj_a"]))
        obs_b = env.observe(clip_b, tuple(rec["adj_b"]))
        triplets.append(
            PreferenceTriplet(obs_a=obs_a, obs_b=obs_b, mu=mu, origin=rec.get("origin", "human"))
        )
    return triplets


def evaluate_ab(
    env: CompressionEnv,
    personalized_adjustment,
    n_pairs: int,
    listener,
    rng: np.random.Generator,
    log: RunLog | None = None,
) -> dict:
    """Blinded comparison of personalized vs reference compression over fresh
    noisy sentences; side order is randomized per pair and inverted before
    tallying."""
    pres = env.prescription
    identity = (1.0,) * pres.n_bands
    adj_pers = tuple(float(a) for a in personalized_adjustment)
    cr_pers = apply_adjustment(pres, adj_pers)
    cr_ref = pres.cr_reference
    queries, swaps = [], []
    personalized_as_a = 0
    for _ in range(n_pairs):
        idx = int(rng.integers(0, len(env.manifest.entries)))
        clip_id = env.manifest.entries[idx].clip_id
        offset = int(rng.integers(0, len(env.noise.samples)))
        clip_pers = env.render(clip_id, offset, cr_pers)
        clip_ref = env.render(clip_id, offset, cr_ref)
        swap = bool(rng.random() < 0.5)  # True: reference is presented as side A
        if swap:
            query = PairQuery(
                clip_id, offset, cr_ref, cr_pers, identity, adj_pers, clip_ref, clip_pers,
                roles=("reference", "personalized"),
            )
        else:
            query = PairQuery(
                clip_id, offset, cr_pers, cr_ref, adj_pers, identity, clip_pers, clip_ref,
                roles=("personalized", "reference"),
            )
            personalized_as_a += 1
        queries.append(query)
        swaps.append(swap)
    choices = _label_all(listener, queries)
    tally = {"personalized": 0, "reference": 0, "equal": 0, "neither": 0}
    for i, (query, swap, choice) in enumerate(zip(queries, swaps, choices)):
        if choice == CHOICE_EQUAL:
            tally["equal"] += 1
        elif choice == CHOICE_NEITHER:
            tally["neither"] += 1
        elif (choice == CHOICE_A) != swap:
            tally["personalized"] += 1
        else:
            tally["reference"] += 1
        if log is not None:
            log.event(
                "eval_pair", index=i, clip_id=query.clip_id, swap=swap, choice=choice
            )
    tally["pairs"] = n_pairs
    tally["personalized_as_a"] = personalized_as_a
    decided = tally["personalized"] + tally["reference"]
    tally["personalized_share_of_decided"] = (
        tally["personalized"] / decided if decided else float("nan")
    )
    return tally


def make_listener(cfg: RunConfig, rng: np.random.Generator):
    listener_cfg = cfg.listener or {}
    kind = listener_cfg.get("type", "simulated")
    if kind == "simulated":
        profile = listener_cfg.get("profile", "1")
        if isinstance(profile, str) and profile in builtin_profiles():
            prof = builtin_profiles()[profile]
        elif isinstance(profile, dict):
            prof = SimUserProfile.from_json(json.dumps(profile))
        else:
            prof = SimUserProfile.from_json_file(profile)
        listener = SimulatedListener(prof, rng)
        listener.origin = "simulated"
        return listener
    raise ValueError(f"unknown listener type {kind!r}; pass a listener object instead")


def build_env(cfg: RunConfig) -> CompressionEnv:
    manifest = load_corpus(cfg.corpus_dir)
    noise = read_wav(cfg.noise_path)
    return CompressionEnv(
        manifest=manifest,
        noise=noise,
        prescription=cfg.prescription(),
        action_space=cfg.action_space(),
        feature_cfg=cfg.features,
        snr_db=cfg.snr_db,
        input_calibration_db=cfg.input_calibration_db,
        queue_capacity=cfg.queue_capacity,
        sample_rate_hz=cfg.sample_rate_hz,
        drc_overrides=cfg.drc,
    )


def _segments(n_episodes: int, rounds: int) -> list:
    if rounds <= 0:
        return [n_episodes]
    base = n_episodes // rounds
    rem = n_episodes % rounds
    return [base + (1 if i < rem else 0) for i in range(rounds)]


def probe_greedy_action(learner: QLearner, env: CompressionEnv, rng, n_probe: int = 5) -> int:
    """Majority greedy action over a few consecutive greedy steps."""
    state = learner.state if learner.state is not None else env.reset(rng)
    votes = []
    for _ in range(n_probe):
        action = learner.greedy_action(state)
        votes.append(action)
        state, _ = env.step(action, rng)
    counts = {}
    for a in votes:
        counts[a] = counts.get(a, 0) + 1
    best = max(counts.values())
    return min(a for a, c in counts.items() if c == best)


@dataclass
class RunResult:
    log: RunLog
    predictor: RewardPredictor
    learner: QLearner
    final_action: int
    final_adjustment: tuple
    tally: dict


def desk_run_config(
    corpus_dir,
    noise_path,
    user: str = "4",
    seed: int = 0,
    n_episodes: int = 50,
    **overrides,
) -> RunConfig:
    """Reduced-scale configuration: small nets and features, short schedule.

    Completes a full personalization loop in minutes on a laptop; the
    defaults of RunConfig itself match the full-scale setup.
    """
    from .features import DESK_FEATURES
    from .reward import DESK_REWARD

    active = {"1": None, "2": None, "3": None, "4": (0, 4), "5": (0, 2, 4)}[user]
    base = dict(
        corpus_dir=str(corpus_dir),
        noise_path=str(noise_path),
        seed=seed,
        active_bands=active,
        listener={"type": "simulated", "profile": user},
        features=DESK_FEATURES,
        reward=DESK_REWARD,
        agent=AgentConfig(
            n_episodes=n_episodes,
            steps_per_episode=20,
            train_frequency=2,
            batch_size=32,
            gamma=0.6,  # rewards hinge on the current action; short horizon converges fast
            no_op_steps=30,
            replay_capacity=600,
            learning_rate=2e-3,
            conv_filters=(8, 16),
            dense_units=64,
        ),
        protocol=ProtocolConfig(
            warmup_steps=40,
            n_initial_pairs=120,
            finetune_rounds=5,
            queries_per_round=24,
            finetune_batches=15,
            eval_pairs=60,
        ),
        drc={"ct_loud_db": 90.0},  # keep the CR corridor wide at fixture levels
    )
    base.update(overrides)
    return RunConfig(**base)


class _StateFile:
    """Tiny stage tracker enabling resumable runs."""

    def __init__(self, run_dir):
        self.path = Path(run_dir) / "state.json"

    def read(self) -> dict:
        if self.path.exists():
            return json.loads(self.path.read_text())
        return {"stage": "fresh", "segments_done": 0}

    def write(self, **state) -> None:
        self.path.write_text(json.dumps(state, indent=2))


def run_protocol(cfg: RunConfig, run_dir, listener=None, resume: bool = False) -> RunResult:
    """Execute the full fitting protocol and persist all artifacts.

    A ListenerUnavailable from a human session checkpoints the run (no label
    is lost; the dataset manifest is the source of truth) and re-raises so
    the caller can resume later with ``resume=True``.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(1)

    seq = np.random.SeedSequence(cfg.seed)
    env_ss, agent_ss, query_ss, listener_ss, eval_ss, reward_ss = seq.spawn(6)
    env_rng = np.random.default_rng(env_ss)
    agent_rng = np.random.default_rng(agent_ss)
    query_rng = np.random.default_rng(query_ss)
    eval_rng = np.random.default_rng(eval_ss)
    reward_seed = int(reward_ss.generate_state(1)[0])

    statefile = _StateFile(run_dir)
    log = RunLog(run_dir, cfg.seed, cfg.config_hash())
    if resume:
        # Keep only the irreplaceable records (human labels): other stages
        # re-execute deterministically and re-log their rows.
        log.dataset_records = RunLog.load(run_dir).dataset_records
    (run_dir / "config.json").write_text(cfg.canonical_json() + "\n")

    env = build_env(cfg)
    if listener is None:
        listener = make_listener(cfg, np.random.default_rng(listener_ss))
    proto = cfg.protocol

    # (a)+(b): initialize at the prescription CRs, then a random-policy
    # rollout fills the segment queue.
    env.reset(env_rng)
    for _ in range(proto.warmup_steps):
        env.step(int(agent_rng.integers(0, env.n_actions)), env_rng)
    log.event("warmup_done", steps=proto.warmup_steps)

    # Initial preference queries (steps 4-6).
    initial_records = [r for r in log.dataset_records if r["phase"] == "initial"]
    try:
        triplets = triplets_from_records(env, initial_records)
        triplets += collect_queries(
            env,
            listener,
            proto.n_initial_pairs,
            query_rng,
            log,
            phase="initial",
            already_labeled=len(initial_records),
        )
    except ListenerUnavailable:
        statefile.write(stage="initial_queries", segments_done=0)
        raise
    statefile.write(stage="queries_done", segments_done=0)

    # (c): first reward-model fit (step 7).
    predictor, history = train_reward(
        PreferenceDataset(triplets), cfg.reward, seed=reward_seed
    )
    for epoch, train_loss, val_loss in history:
        log.add_reward_epoch(epoch, train_loss, val_loss)
    predictor.save(run_dir / "reward.ckpt")
    statefile.write(stage="reward_trained", segments_done=0)

    # (d): agent training, optionally interleaved with query/fine-tune rounds
    # (steps 8-14). The reward model is fixed within each segment.
    learner = QLearner(
        obs_shape=env.observation_shape,
        adj_dim=env.adjustment_dim,
        n_actions=env.n_actions,
        cfg=cfg.agent,
        seed=int(agent_ss.generate_state(1)[0]),
    )
    view = AgentView(env)
    reward_fn = lambda obs: predictor.reward(obs)  # noqa: E731 - rebound per snapshot
    segments = _segments(cfg.agent.n_episodes, proto.finetune_rounds)
    for seg_index, n_ep in enumerate(segments):
        rows = learner.train_episodes(view, reward_fn, n_ep, agent_rng)
        for row in rows:
            log.add_episode(row)
        if proto.finetune_rounds > 0:
            round_phase = f"round_{seg_index}"
            done = [r for r in log.dataset_records if r["phase"] == round_phase]
            try:
                new_triplets = triplets_from_records(env, done)
                new_triplets += collect_queries(
                    env,
                    listener,
                    proto.queries_per_round,
                    query_rng,
                    log,
                    phase=round_phase,
                    already_labeled=len(done),
                )
            except ListenerUnavailable:
                learner.save(run_dir / "policy.ckpt")
                statefile.write(stage=f"segment_{seg_index}", segments_done=seg_index)
                raise
            finetune_reward(
                predictor, new_triplets, proto.finetune_batches, seed=reward_seed + seg_index
            )
            predictor.save(run_dir / "reward.ckpt")
            log.event(
                "finetune", segment=seg_index, batches=proto.finetune_batches,
                new_pairs=len(new_triplets),
            )
    learner.save(run_dir / "policy.ckpt")
    statefile.write(stage="agent_trained", segments_done=len(segments))

    # (e): final hearing assessment (step 15).
    if hasattr(listener, "set_phase"):
        listener.set_phase("evaluation")
    final_action = probe_greedy_action(learner, env, env_rng)
    final_adjustment = env.action_space.vector(final_action)
    tally = evaluate_ab(env, final_adjustment, proto.eval_pairs, listener, eval_rng, log)
    log.set_eval(tally)
    statefile.write(stage="evaluated", segments_done=len(segments))

    export_run_artifacts(log, run_dir, cfg)
    statefile.write(stage="done", segments_done=len(segments))
    log.event("done", final_action=final_action, final_adjustment=list(final_adjustment))
    return RunResult(
        log=log,
        predictor=predictor,
        learner=learner,
        final_action=final_action,
        final_adjustment=tuple(final_adjustment),
        tally=tally,
    )
