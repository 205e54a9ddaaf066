"""Preference-driven personalization of multiband hearing-aid compression."""

__version__ = "0.1.0"

from .audio import AudioClip, CorpusManifest, load_corpus, mix_at_snr, read_wav, resample, write_wav
from .drc import BandSpec, CompressionParams, compress, smooth_gain, split_bands, static_gain_db
from .actions import (
    ActionSpace,
    Prescription,
    apply_adjustment,
    build_action_space,
    cr_from_gains,
    prescription_from_fitting,
)
from .features import FeatureConfig, Observation, log_mel_spectrogram, make_observation
from .reward import (
    PreferenceDataset,
    PreferenceTriplet,
    RewardNetConfig,
    RewardPredictor,
    augment,
    balance,
    pair_probability,
    preference_loss,
    train_reward,
)
from .agent import AgentConfig, QLearner, ReplayBuffer, Transition, select_action
from .environment import CompressionEnv, PairQuery, SegmentQueue
from .simuser import SimUserProfile, SimulatedListener, answer, builtin_profiles, score
from .orchestrator import RunConfig, RunLog, evaluate_ab, export_run_artifacts, run_protocol
