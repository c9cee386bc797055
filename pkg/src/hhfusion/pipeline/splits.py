"""Speaker subsets and utterance folds."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError
from .corpus import SEVERITIES, SyntheticSpeaker, derive_rng

NUM_FOLDS = 5


@dataclass
class SplitPlan:
    subsets: List[Tuple[str, ...]]
    always_source: List[str]
    target_subset: int = 0
    data_fraction: float = 0.6
    fold_fractions: Tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if not 0 <= self.target_subset < len(self.subsets):
            raise ConfigError(f"target subset {self.target_subset} out of range (have {len(self.subsets)})")
        if not 0.0 < self.data_fraction <= self.fold_fractions[0]:
            raise ConfigError(
                f"data_fraction must be in (0, {self.fold_fractions[0]}], got {self.data_fraction}"
            )

    @property
    def target_speakers(self) -> List[str]:
        return list(self.subsets[self.target_subset])

    @property
    def source_subsets(self) -> List[Tuple[str, ...]]:
        return [s for i, s in enumerate(self.subsets) if i != self.target_subset]

    @property
    def source_speakers(self) -> List[str]:
        return [sid for s in self.source_subsets for sid in s] + list(self.always_source)

    def shared_adapter_split(self) -> Optional[Tuple[List[str], List[str]]]:
        """(train, validation) speakers for the jointly trained adapter.

        The last source subset is held out for validation. With a single
        source subset there is nothing to hold out and ``None`` is returned;
        callers then split each source speaker's utterances instead.
        """
        subsets = self.source_subsets
        if len(subsets) < 2:
            return None
        valid = list(subsets[-1])
        train = [sid for s in subsets[:-1] for sid in s] + list(self.always_source)
        return train, valid


def plan_from_corpus(speakers: Sequence[SyntheticSpeaker], target_subset: int = 0,
                     data_fraction: float = 0.6) -> SplitPlan:
    """Group balanced speakers into one-per-severity triples; leftovers are always-source."""
    by_sev: Dict[str, List[str]] = {s: [] for s in SEVERITIES}
    extra = []
    balanced = [s for s in speakers if not s.speaker_id.startswith("x")]
    for spk in balanced:
        if spk.severity not in by_sev:
            raise ConfigError(f"speaker {spk.speaker_id} has unknown severity {spk.severity!r}")
        by_sev[spk.severity].append(spk.speaker_id)
    k = min(len(v) for v in by_sev.values())
    subsets = [tuple(by_sev[sev][i] for sev in SEVERITIES) for i in range(k)]
    for sev in SEVERITIES:
        extra.extend(by_sev[sev][k:])
    extra.extend(s.speaker_id for s in speakers if s.speaker_id.startswith("x"))
    if len(subsets) < 2:
        raise ConfigError("need at least two severity-balanced subsets (one target, one source)")
    return SplitPlan(subsets, extra, target_subset, data_fraction)


def split_indices(n: int, fractions: Sequence[float], rng: np.random.Generator) -> List[np.ndarray]:
    """Shuffle ``range(n)`` and cut it into consecutive parts of the given fractions."""
    order = rng.permutation(n)
    bounds = np.round(np.cumsum(fractions)[:-1] * n).astype(int)
    return [np.sort(p) for p in np.split(order, bounds)]


def holdout_split(n: int, seed: int, name: str, valid_fraction: float = 0.1) -> Tuple[np.ndarray, np.ndarray]:
    rng = derive_rng(seed, "holdout", name)
    train, valid = split_indices(n, (1.0 - valid_fraction, valid_fraction), rng)
    if valid.size == 0:
        train, valid = train[:-1], train[-1:]
    return train, valid


@dataclass
class Fold:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray


def target_fold(n: int, fold: int, seed: int, speaker_id: str, data_fraction: float = 0.6) -> Fold:
    """Five parts: one for testing, the next for validation, the other three for training.

    ``data_fraction`` below the three-part share (0.6) keeps only the first
    ``round(data_fraction * n)`` training utterances (at least one).
    """
    if not 0 <= fold < NUM_FOLDS:
        raise ConfigError(f"fold must be in [0, {NUM_FOLDS}), got {fold}")
    rng = derive_rng(seed, "folds", speaker_id)
    parts = split_indices(n, [1.0 / NUM_FOLDS] * NUM_FOLDS, rng)
    test = parts[fold]
    valid = parts[(fold + 1) % NUM_FOLDS]
    train_parts = [parts[i] for i in range(NUM_FOLDS) if i not in (fold, (fold + 1) % NUM_FOLDS)]
    train = np.concatenate(train_parts)
    keep = max(1, int(round(data_fraction * n)))
    if data_fraction < 3 / NUM_FOLDS and keep < train.size:
        train = train[:keep]
    return Fold(np.sort(train), valid, test)
