"""Prescription math and the action dictionary.

An action is an index into a dictionary of per-band compression-ratio
multipliers; applying an action multiplies the reference (prescriptive) CRs
elementwise. The dictionary enumerates every combination of the admissible
multipliers over the adjustable bands.
"""

import json
from dataclasses import dataclass
from itertools import product

from .drc import BandSpec, CompressionParams, DEFAULT_BANDS
from .errors import BandSpecError, DimensionError, ExpansionError


@dataclass(frozen=True)
class Prescription:
    """Reference fitting: per-band soft gains and prescriptive CRs."""

    bands: BandSpec
    gains_soft_db: tuple
    cr_reference: tuple
    gains_loud_db: tuple | None = None

    def __post_init__(self):
        n = self.bands.n_bands
        object.__setattr__(self, "gains_soft_db", tuple(float(g) for g in self.gains_soft_db))
        object.__setattr__(self, "cr_reference", tuple(float(c) for c in self.cr_reference))
        if len(self.gains_soft_db) != n or len(self.cr_reference) != n:
            raise DimensionError("prescription fields must match the band count")
        if self.gains_loud_db is not None:
            object.__setattr__(self, "gains_loud_db", tuple(float(g) for g in self.gains_loud_db))
            if len(self.gains_loud_db) != n:
                raise DimensionError("gains_loud_db must match the band count")
        if any(c < 1.0 for c in self.cr_reference):
            raise ValueError("reference CRs must be >= 1")

    @property
    def n_bands(self) -> int:
        return self.bands.n_bands

    def compression_params(self, **overrides) -> CompressionParams:
        """Reference compression with soft gains as the linear-region gain."""
        return CompressionParams(
            ratios=self.cr_reference, gains_db=self.gains_soft_db, **overrides
        )


@dataclass(frozen=True)
class ActionSpace:
    """Immutable action dictionary: index -> per-band CR multiplier vector."""

    n_bands: int
    scales: tuple
    active_bands: tuple
    dictionary: tuple

    @property
    def size(self) -> int:
        return len(self.dictionary)

    def vector(self, index: int) -> tuple:
        return self.dictionary[index]

    def index_of(self, vector) -> int:
        key = tuple(float(v) for v in vector)
        lookup = getattr(self, "_index", None)
        if lookup is None:
            lookup = {v: i for i, v in enumerate(self.dictionary)}
            object.__setattr__(self, "_index", lookup)
        if key not in lookup:
            raise KeyError(f"vector {key} is not in the action dictionary")
        return lookup[key]

    @property
    def identity_index(self) -> int:
        """Index of the all-ones adjustment, if present."""
        return self.index_of((1.0,) * self.n_bands)

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_bands": self.n_bands,
                "scales": list(self.scales),
                "active_bands": list(self.active_bands),
                "actions": {str(i): list(v) for i, v in enumerate(self.dictionary)},
            },
            indent=2,
        )


def build_action_space(n_bands: int, scales, active_bands=None) -> ActionSpace:
    """Enumerate every multiplier combination in lexicographic order.

    Band 0 varies slowest; index 0 is the all-smallest-scale vector. With
    ``active_bands`` given, only those bands vary and the rest are pinned to
    multiplier 1 (the two- and three-band spaces of the reduced experiments).
    """
    if n_bands < 1:
        raise ValueError("need at least one band")
    scales = tuple(sorted(float(s) for s in set(scales)))
    if not scales:
        raise ValueError("need at least one scale")
    if active_bands is None:
        active = tuple(range(n_bands))
    else:
        active = tuple(sorted(int(b) for b in active_bands))
        if any(b < 0 or b >= n_bands for b in active):
            raise ValueError(f"active bands {active} out of range for {n_bands} bands")
        if len(set(active)) != len(active):
            raise ValueError("active bands must be unique")
    vectors = []
    for combo in product(scales, repeat=len(active)):
        vec = [1.0] * n_bands
        for band, scale in zip(active, combo):
            vec[band] = scale
        vectors.append(tuple(vec))
    return ActionSpace(
        n_bands=n_bands, scales=scales, active_bands=active, dictionary=tuple(vectors)
    )


def apply_adjustment(reference, adjustment) -> tuple:
    """Elementwise product of reference CRs and a multiplier vector."""
    ref = reference.cr_reference if isinstance(reference, Prescription) else tuple(reference)
    adj = tuple(float(a) for a in adjustment)
    if len(ref) != len(adj):
        raise DimensionError(
            f"reference has {len(ref)} bands but adjustment has {len(adj)}"
        )
    return tuple(max(r * a, 1.0) for r, a in zip(ref, adj))


def cr_from_gains(
    level_soft_db: float,
    level_loud_db: float,
    gain_soft_db: float,
    gain_loud_db: float,
) -> float:
    """Compression ratio implied by gains at a soft and a loud input level."""
    if level_loud_db <= level_soft_db:
        raise ValueError("loud level must exceed soft level")
    delta_in = level_loud_db - level_soft_db
    delta_out = (level_loud_db + gain_loud_db) - (level_soft_db + gain_soft_db)
    if delta_out <= 0:
        raise ExpansionError(
            "output level does not grow with input level (infinite compression)"
        )
    return delta_in / delta_out


def map_band_gains(gains_src, edges_src, edges_dst) -> tuple:
    """Remap per-band gains between band layouts by bandwidth-weighted
    averaging of the overlapping source bands."""
    gains_src = [float(g) for g in gains_src]
    src = BandSpec(tuple(edges_src))
    dst = BandSpec(tuple(edges_dst))
    if len(gains_src) != src.n_bands:
        raise DimensionError("gains must match the source band count")
    out = []
    for j in range(dst.n_bands):
        lo, hi = dst.edges_hz[j], dst.edges_hz[j + 1]
        total_w = 0.0
        acc = 0.0
        for i in range(src.n_bands):
            a, b = src.edges_hz[i], src.edges_hz[i + 1]
            w = max(0.0, min(hi, b) - max(lo, a))
            total_w += w
            acc += w * gains_src[i]
        if total_w == 0.0:
            raise BandSpecError(
                f"target band [{lo}, {hi}] Hz overlaps no source band"
            )
        out.append(acc / total_w)
    return tuple(out)


# Convenience alias matching the five-band default layout.
def map_nine_to_five_bands(gains_9, edges_9, edges_5=DEFAULT_BANDS.edges_hz) -> tuple:
    return map_band_gains(gains_9, edges_9, edges_5)


@dataclass(frozen=True)
class ReferenceFitting:
    """A measured fitting: audiogram, prescriptive soft gains and CRs, and the
    personalized CRs a listener settled on. Used as demo prescriptions and as
    exact fixtures for the adjustment math."""

    audiogram_db_hl: tuple
    gains_soft_db: tuple
    cr_reference: tuple
    cr_personalized: tuple


REFERENCE_FITTINGS = (
    ReferenceFitting(
        audiogram_db_hl=(15, 20, 20, 30, 30),
        gains_soft_db=(7, 8, 14, 17, 15),
        cr_reference=(1.1, 1.2, 1.3, 1.2, 1.3),
        cr_personalized=(1.1, 1.2, 1.3, 4.8, 5.2),
    ),
    ReferenceFitting(
        audiogram_db_hl=(15, 15, 20, 20, 30),
        gains_soft_db=(5, 6, 14, 15, 15),
        cr_reference=(1.1, 1.2, 1.3, 1.2, 1.2),
        cr_personalized=(4.4, 1.2, 5.2, 1.2, 4.8),
    ),
    ReferenceFitting(
        audiogram_db_hl=(20, 20, 40, 50, 60),
        gains_soft_db=(11, 12, 24, 29, 34),
        cr_reference=(1.1, 1.2, 1.3, 1.2, 1.4),
        cr_personalized=(4.4, 1.2, 1.3, 4.8, 5.6),
    ),
    ReferenceFitting(
        audiogram_db_hl=(25, 20, 20, 40, 30),
        gains_soft_db=(13, 11, 14, 22, 15),
        cr_reference=(1.1, 1.3, 1.3, 1.3, 1.3),
        cr_personalized=(4.4, 1.3, 1.3, 5.2, 1.3),
    ),
    ReferenceFitting(
        audiogram_db_hl=(20, 20, 30, 40, 40),
        gains_soft_db=(6, 11, 20, 23, 20),
        cr_reference=(1.1, 1.2, 1.3, 1.2, 1.4),
        cr_personalized=(1.1, 1.2, 1.3, 4.8, 5.6),
    ),
)


def prescription_from_fitting(index: int = 0, bands: BandSpec = DEFAULT_BANDS) -> Prescription:
    fit = REFERENCE_FITTINGS[index]
    return Prescription(
        bands=bands, gains_soft_db=fit.gains_soft_db, cr_reference=fit.cr_reference
    )
