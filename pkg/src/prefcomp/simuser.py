"""Simulated listeners answering preference queries.

Each persona hides a target adjustment vector and scores a candidate by the
weighted count of mismatched bands over the bands it cares about; answers
fall out of the score difference, a neutral margin, and an optional
random-answer probability. The five built-in profiles cover: a consistent
listener, an unreliable one, one strict about two bands and neutral
elsewhere, and two reduced-band listeners.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError

CHOICE_A = "A"
CHOICE_B = "B"
CHOICE_EQUAL = "EQUAL"
CHOICE_NEITHER = "NEITHER"
CHOICES = (CHOICE_A, CHOICE_B, CHOICE_EQUAL, CHOICE_NEITHER)


@dataclass
class SimUserProfile:
    name: str
    target_adjustment: tuple
    band_weights: tuple
    neutral_margin: float = 0.0
    flip_prob: float = 0.0
    active_bands: tuple | None = None  # None = all bands
    neither_prob: float = 0.0  # built-ins keep this at 0; custom profiles may not

    def __post_init__(self):
        self.target_adjustment = tuple(float(v) for v in self.target_adjustment)
        self.band_weights = tuple(float(w) for w in self.band_weights)
        if len(self.band_weights) != len(self.target_adjustment):
            raise DimensionError("weights and target must cover the same bands")
        if any(w < 0 for w in self.band_weights):
            raise ValueError("band weights must be non-negative")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")
        if not 0.0 <= self.neither_prob <= 1.0:
            raise ValueError("neither_prob must lie in [0, 1]")
        if self.neutral_margin < 0:
            raise ValueError("neutral margin must be non-negative")
        if self.active_bands is not None:
            self.active_bands = tuple(sorted(int(b) for b in self.active_bands))

    @property
    def n_bands(self) -> int:
        return len(self.target_adjustment)

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "target_adjustment": list(self.target_adjustment),
                "band_weights": list(self.band_weights),
                "neutral_margin": self.neutral_margin,
                "flip_prob": self.flip_prob,
                "active_bands": list(self.active_bands) if self.active_bands else None,
                "neither_prob": self.neither_prob,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SimUserProfile":
        d = json.loads(text)
        return cls(
            name=d.get("name", "custom"),
            target_adjustment=tuple(d["target_adjustment"]),
            band_weights=tuple(d["band_weights"]),
            neutral_margin=d.get("neutral_margin", 0.0),
            flip_prob=d.get("flip_prob", 0.0),
            active_bands=tuple(d["active_bands"]) if d.get("active_bands") else None,
            neither_prob=d.get("neither_prob", 0.0),
        )

    @classmethod
    def from_json_file(cls, path) -> "SimUserProfile":
        return cls.from_json(Path(path).read_text())


@dataclass
class SimAnswer:
    choice: str
    score_a: float
    score_b: float


def score(profile: SimUserProfile, adjustment) -> float:
    """Negative weighted mismatch count over the profile's active bands."""
    adjustment = tuple(float(v) for v in adjustment)
    if len(adjustment) != profile.n_bands:
        raise DimensionError(
            f"profile covers {profile.n_bands} bands, adjustment has {len(adjustment)}"
        )
    active = profile.active_bands or tuple(range(profile.n_bands))
    total = 0.0
    for f in active:
        if adjustment[f] != profile.target_adjustment[f]:
            total -= profile.band_weights[f]
    return total


def answer(profile: SimUserProfile, adj_a, adj_b, rng: np.random.Generator) -> SimAnswer:
    """Label a pair of adjustments as the profile would."""
    s_a = score(profile, adj_a)
    s_b = score(profile, adj_b)
    if profile.neither_prob > 0 and rng.random() < profile.neither_prob:
        choice = CHOICE_NEITHER
    elif profile.flip_prob > 0 and rng.random() < profile.flip_prob:
        choice = (CHOICE_A, CHOICE_B, CHOICE_EQUAL)[int(rng.integers(0, 3))]
    elif abs(s_a - s_b) <= profile.neutral_margin:
        choice = CHOICE_EQUAL
    elif s_a > s_b:
        choice = CHOICE_A
    else:
        choice = CHOICE_B
    return SimAnswer(choice=choice, score_a=s_a, score_b=s_b)


def builtin_profiles(n_bands: int = 5) -> dict:
    """The five named personas, keyed "1".."5"."""
    if n_bands != 5:
        raise ValueError("built-in profiles are defined over five bands")
    ones = (1.0,) * 5
    return {
        "1": SimUserProfile(
            name="consistent",
            target_adjustment=(4.0, 1.0, 1.0, 4.0, 4.0),
            band_weights=ones,
        ),
        "2": SimUserProfile(
            name="unreliable",
            target_adjustment=(4.0, 1.0, 1.0, 4.0, 4.0),
            band_weights=ones,
            flip_prob=0.4,
        ),
        "3": SimUserProfile(
            name="strict-two-bands",
            target_adjustment=(4.0, 1.0, 1.0, 1.0, 4.0),
            band_weights=(1.0, 0.0, 0.0, 0.0, 1.0),
        ),
        "4": SimUserProfile(
            name="two-band",
            target_adjustment=(4.0, 1.0, 1.0, 1.0, 4.0),
            band_weights=ones,
            active_bands=(0, 4),
        ),
        "5": SimUserProfile(
            name="three-band",
            target_adjustment=(4.0, 1.0, 4.0, 1.0, 1.0),
            band_weights=ones,
            active_bands=(0, 2, 4),
        ),
    }


class SimulatedListener:
    """Listener interface backed by a persona; labels PairQuery objects by
    their adjustment vectors."""

    def __init__(self, profile: SimUserProfile, rng: np.random.Generator):
        self.profile = profile
        self.rng = rng
        self.answers: list = []

    def label(self, query) -> str:
        ans = answer(self.profile, query.adj_a, query.adj_b, self.rng)
        self.answers.append(ans)
        return ans.choice
