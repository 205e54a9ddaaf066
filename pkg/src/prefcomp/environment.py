"""Interaction environment: renders noisy compressed clips per action.

Each step updates the per-band CRs from the action dictionary, draws a fresh
sentence, mixes noise at the configured SNR, compresses, and returns the
observation of the compressed clip. The environment shares no reward and no
episode-end signal; (clip, CR set) records accumulate in a bounded segment
queue from which preference query pairs are drawn. A query pair re-renders
both CR sets on the same underlying noisy clip, so the comparison isolates
compression.
"""

from collections import OrderedDict, deque
from dataclasses import dataclass

import numpy as np

from .actions import ActionSpace, Prescription, apply_adjustment
from .audio import AudioClip, CorpusManifest, mix_at_snr, read_wav, resample
from .drc import compress
from .errors import NoAudioFound, QueueExhausted
from .features import FeatureConfig, Observation, make_observation


@dataclass(frozen=True)
class QueueRecord:
    """One environment step, sufficient to re-render its audio exactly."""

    clip_id: str
    noise_offset: int
    cr: tuple
    adjustment: tuple


class SegmentQueue:
    """FIFO-bounded buffer of (clip, CR set) records."""

    def __init__(self, capacity: int = 256):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def push(self, record: QueueRecord) -> None:
        self._items.append(record)

    def clear(self) -> None:
        self._items.clear()

    def records(self) -> list:
        return list(self._items)

    def distinct_cr_count(self) -> int:
        return len({r.cr for r in self._items})

    def __len__(self) -> int:
        return len(self._items)

    def to_json_records(self) -> list:
        return [
            {
                "clip_id": r.clip_id,
                "noise_offset": r.noise_offset,
                "cr": list(r.cr),
                "adjustment": list(r.adjustment),
            }
            for r in self._items
        ]


def sample_query_records(queue: SegmentQueue, rng: np.random.Generator, max_tries: int = 200):
    """Draw two records with distinct CR sets (uniformly over record pairs)."""
    records = queue.records()
    if queue.distinct_cr_count() < 2:
        raise QueueExhausted("queue holds no two records with distinct CR sets")
    for _ in range(max_tries):
        i, j = rng.integers(0, len(records), size=2)
        if records[i].cr != records[j].cr:
            return records[i], records[j]
    for i, a in enumerate(records):  # deterministic fallback, unreachable in practice
        for b in records[i + 1 :]:
            if a.cr != b.cr:
                return a, b
    raise QueueExhausted("no distinct pair found")


@dataclass
class PairQuery:
    """Two renderings of one noisy clip under different CR sets."""

    clip_id: str
    noise_offset: int
    cr_a: tuple
    cr_b: tuple
    adj_a: tuple
    adj_b: tuple
    clip_a: AudioClip
    clip_b: AudioClip
    roles: tuple | None = None  # evaluation only: (role of side a, role of side b)


@dataclass
class EnvState:
    clip_id: str
    adjustment: tuple
    cr: tuple
    step_count: int


class CompressionEnv:
    """Single-owner environment over a corpus, a noise bed, and a fitting."""

    def __init__(
        self,
        manifest: CorpusManifest,
        noise: AudioClip,
        prescription: Prescription,
        action_space: ActionSpace,
        feature_cfg: FeatureConfig = FeatureConfig(),
        snr_db: float = 0.0,
        input_calibration_db: float = 100.0,
        queue_capacity: int = 256,
        sample_rate_hz: int | None = None,
        drc_overrides: dict | None = None,
        clip_cache_size: int = 256,
    ):
        if len(manifest) == 0:
            raise NoAudioFound("manifest is empty")
        if action_space.n_bands != prescription.n_bands:
            raise ValueError("action space and prescription band counts differ")
        self.manifest = manifest
        self.prescription = prescription
        self.action_space = action_space
        self.feature_cfg = feature_cfg
        self.snr_db = snr_db
        self.input_calibration_db = input_calibration_db
        self.sample_rate_hz = sample_rate_hz
        self.queue = SegmentQueue(queue_capacity)
        self._params_template = prescription.compression_params(**(drc_overrides or {}))
        self._entries = {e.clip_id: e for e in manifest.entries}
        self._clip_cache: OrderedDict = OrderedDict()
        self._clip_cache_size = clip_cache_size
        if self.sample_rate_hz is None:
            first = read_wav(manifest.entries[0].path)
            self.sample_rate_hz = first.sample_rate_hz
        self.noise = self._at_rate(noise)
        self._state: EnvState | None = None

    # -- audio plumbing ---------------------------------------------------

    def _at_rate(self, clip: AudioClip) -> AudioClip:
        if clip.sample_rate_hz != self.sample_rate_hz:
            return resample(clip, self.sample_rate_hz)
        return clip

    def _clip(self, clip_id: str) -> AudioClip:
        cached = self._clip_cache.get(clip_id)
        if cached is not None:
            self._clip_cache.move_to_end(clip_id)
            return cached
        entry = self._entries[clip_id]
        clip = self._at_rate(read_wav(entry.path))
        clip.id = clip_id
        self._clip_cache[clip_id] = clip
        if len(self._clip_cache) > self._clip_cache_size:
            self._clip_cache.popitem(last=False)
        return clip

    def render(self, clip_id: str, noise_offset: int, cr: tuple) -> AudioClip:
        """Deterministically re-render a noisy clip under a CR set."""
        speech = self._clip(clip_id)
        noisy = mix_at_snr(speech, self.noise, self.snr_db, noise_offset=noise_offset)
        params = self._params_template.with_ratios(cr)
        return compress(
            noisy, self.prescription.bands, params, self.input_calibration_db
        )

    def observe(self, clip: AudioClip, adjustment) -> Observation:
        obs = make_observation(clip, self.feature_cfg)
        obs.cr_adj_context = tuple(float(a) for a in adjustment)
        return obs

    # -- agent-facing protocol --------------------------------------------

    @property
    def n_actions(self) -> int:
        return self.action_space.size

    @property
    def adjustment_dim(self) -> int:
        return self.action_space.n_bands

    @property
    def observation_shape(self) -> tuple:
        return self.feature_cfg.shape

    @property
    def state(self) -> EnvState | None:
        return self._state

    def current_params(self) -> tuple:
        if self._state is None:
            raise RuntimeError("environment not reset")
        return self._state.cr

    def _advance(self, adjustment: tuple, rng: np.random.Generator):
        cr = apply_adjustment(self.prescription, adjustment)
        idx = int(rng.integers(0, len(self.manifest.entries)))
        clip_id = self.manifest.entries[idx].clip_id
        offset = int(rng.integers(0, len(self.noise.samples)))
        rendered = self.render(clip_id, offset, cr)
        step_count = 0 if self._state is None else self._state.step_count + 1
        self._state = EnvState(
            clip_id=clip_id, adjustment=adjustment, cr=cr, step_count=step_count
        )
        return rendered, offset

    def reset(self, rng: np.random.Generator) -> Observation:
        """Start from the prescription CRs (all-ones adjustment), fresh clip,
        empty queue."""
        self.queue.clear()
        self._state = None
        identity = (1.0,) * self.prescription.n_bands
        rendered, _ = self._advance(identity, rng)
        return self.observe(rendered, identity)

    def step(self, action: int, rng: np.random.Generator):
        """Apply an action; returns (observation, rendered compressed clip).

        No reward, no episode-end flag: neither is shared with the agent.
        """
        if not 0 <= action < self.action_space.size:
            raise IndexError(f"action {action} outside dictionary of size {self.action_space.size}")
        if self._state is None:
            raise RuntimeError("call reset() before step()")
        adjustment = self.action_space.vector(action)
        rendered, offset = self._advance(adjustment, rng)
        self.queue.push(
            QueueRecord(
                clip_id=self._state.clip_id,
                noise_offset=offset,
                cr=self._state.cr,
                adjustment=adjustment,
            )
        )
        return self.observe(rendered, adjustment), rendered

    # -- preference queries -------------------------------------------------

    def sample_query_pair(self, rng: np.random.Generator) -> PairQuery:
        """Draw two distinct CR sets from the queue and render both on one
        shared noisy clip."""
        rec_a, rec_b = sample_query_records(self.queue, rng)
        clip_a = self.render(rec_a.clip_id, rec_a.noise_offset, rec_a.cr)
        clip_b = self.render(rec_a.clip_id, rec_a.noise_offset, rec_b.cr)
        return PairQuery(
            clip_id=rec_a.clip_id,
            noise_offset=rec_a.noise_offset,
            cr_a=rec_a.cr,
            cr_b=rec_b.cr,
            adj_a=rec_a.adjustment,
            adj_b=rec_b.adjustment,
            clip_a=clip_a,
            clip_b=clip_b,
        )


class AgentView:
    """Adapter narrowing an environment to the agent's protocol (observation
    in, observation out)."""

    def __init__(self, env: CompressionEnv):
        self.env = env

    @property
    def n_actions(self):
        return self.env.n_actions

    @property
    def adjustment_dim(self):
        return self.env.adjustment_dim

    @property
    def observation_shape(self):
        return self.env.observation_shape

    def reset(self, rng):
        return self.env.reset(rng)

    def step(self, action, rng):
        obs, _ = self.env.step(action, rng)
        return obs
