"""Synthetic multi-speaker command corpora.

Utterances follow a home-automation template
``<verb> <particle> the <object> <prep> the <room>``. The label sequence is
the intended words; the input sequence is what a speaker "produces". Each
speaker confuses a seeded set of word pairs (always swapping the two words
of a pair) and replaces a small fraction of words with random ones. Both the
number of confused pairs and the noise rate grow with the distortion level,
which is ordered by severity: high < medium < low intelligibility.

Confusable pairs are drawn from one word category at a time, so speakers
share structure (a common pool of confusions) but differ individually.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError, DataError

CATEGORIES: Dict[str, Tuple[str, ...]] = {
    "verb": ("turn", "switch", "open", "close", "dim", "raise", "lock"),
    "particle": ("on", "off", "up", "down"),
    "article": ("the",),
    "object": ("light", "lamp", "door", "blinds", "heater", "tv", "radio", "fan", "window"),
    "prep": ("in", "at"),
    "room": ("kitchen", "bedroom", "hall", "bathroom", "garage", "office", "attic", "cellar", "garden"),
}
TEMPLATE = ("verb", "particle", "article", "object", "prep", "article", "room")
VOCAB: Tuple[str, ...] = tuple(w for words in CATEGORIES.values() for w in words)
WORD_ID = {w: i for i, w in enumerate(VOCAB)}
SEVERITIES = ("high", "medium", "low")
SEVERITY_LEVEL = {"high": 1, "medium": 2, "low": 3}


def derive_rng(seed: int, *names) -> np.random.Generator:
    """Independent generator for a named sub-task of a seeded run."""
    keys = [zlib.crc32(str(n).encode("utf-8")) for n in names]
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + keys))


@dataclass
class CorpusSpec:
    num_speakers: int = 6
    always_source: int = 0
    utterances_per_speaker: int = 40
    canonical_utterances: int = 600
    swaps_per_level: int = 1
    base_swaps: int = 1
    noise_per_level: float = 0.01

    def __post_init__(self):
        balanced = self.num_speakers - self.always_source
        if self.num_speakers < 6:
            raise ConfigError(f"need at least 6 speakers for severity balance, got {self.num_speakers}")
        if self.always_source < 0 or balanced < 6 or balanced % 3:
            raise ConfigError(
                f"{self.num_speakers} speakers with {self.always_source} always-source speakers "
                "cannot be split evenly over three severity levels"
            )
        if self.utterances_per_speaker < 5:
            raise ConfigError("each speaker needs at least 5 utterances (one per target fold)")

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class SyntheticSpeaker:
    speaker_id: str
    severity: str
    inputs: np.ndarray
    labels: np.ndarray
    utterance_ids: List[str]
    distortion_level: Optional[int] = None
    swaps: List[Tuple[str, str]] = field(default_factory=list)
    noise: float = 0.0

    @property
    def utterances(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.inputs, self.labels))

    def __len__(self) -> int:
        return len(self.utterance_ids)


def confusion_pool(rng: np.random.Generator) -> List[Tuple[str, str]]:
    """Disjoint within-category word pairs, randomly matched."""
    pool = []
    for cat, words in CATEGORIES.items():
        if len(words) < 2:
            continue
        order = rng.permutation(len(words))
        for i in range(0, len(words) - 1, 2):
            pool.append((words[order[i]], words[order[i + 1]]))
    return pool


def sample_labels(n: int, rng: np.random.Generator) -> np.ndarray:
    cols = [rng.integers(0, len(CATEGORIES[slot]), size=n) for slot in TEMPLATE]
    out = np.empty((n, len(TEMPLATE)), dtype=np.int64)
    for j, slot in enumerate(TEMPLATE):
        out[:, j] = [WORD_ID[CATEGORIES[slot][k]] for k in cols[j]]
    return out


def distort(labels: np.ndarray, swaps: Sequence[Tuple[str, str]], noise: float,
            rng: np.random.Generator) -> np.ndarray:
    table = np.arange(len(VOCAB))
    for a, b in swaps:
        table[WORD_ID[a]], table[WORD_ID[b]] = WORD_ID[b], WORD_ID[a]
    inputs = table[labels]
    if noise > 0:
        hit = rng.random(labels.shape) < noise
        inputs = np.where(hit, rng.integers(0, len(VOCAB), size=labels.shape), inputs)
    return inputs


def make_speaker(speaker_id: str, severity: str, level: int, n: int, pool, spec: CorpusSpec,
                 rng: np.random.Generator) -> SyntheticSpeaker:
    num_swaps = 0 if level == 0 else min(spec.base_swaps + spec.swaps_per_level * level, len(pool))
    chosen = rng.choice(len(pool), size=num_swaps, replace=False) if num_swaps else []
    swaps = [pool[i] for i in sorted(chosen)]
    noise = spec.noise_per_level * level
    labels = sample_labels(n, rng)
    inputs = distort(labels, swaps, noise, rng)
    ids = [f"{speaker_id}-{i:04d}" for i in range(n)]
    return SyntheticSpeaker(speaker_id, severity, inputs, labels, ids, level, swaps, noise)


def generate_corpus(spec: CorpusSpec, seed: int) -> List[SyntheticSpeaker]:
    """Deterministic dysarthric-speaker stand-ins, balanced over severities.

    Balanced speakers are ordered so consecutive triples hold one speaker per
    severity; always-source speakers (medium severity) come last.
    """
    pool = confusion_pool(derive_rng(seed, "pool"))
    per_level = (spec.num_speakers - spec.always_source) // 3
    speakers = []
    for i in range(per_level):
        for sev in SEVERITIES:
            sid = f"s{len(speakers):02d}{sev[0]}"
            rng = derive_rng(seed, "speaker", sid)
            speakers.append(make_speaker(sid, sev, SEVERITY_LEVEL[sev], spec.utterances_per_speaker, pool, spec, rng))
    for j in range(spec.always_source):
        sid = f"x{j:02d}m"
        rng = derive_rng(seed, "speaker", sid)
        speakers.append(make_speaker(sid, "medium", SEVERITY_LEVEL["medium"], spec.utterances_per_speaker, pool, spec, rng))
    return speakers


def generate_canonical(spec: CorpusSpec, seed: int) -> SyntheticSpeaker:
    """Undistorted (level 0) speech used for pretraining."""
    rng = derive_rng(seed, "canonical")
    return make_speaker("canonical", "none", 0, spec.canonical_utterances, [], spec, rng)


def decode(ids) -> List[str]:
    return [VOCAB[int(i)] for i in ids]


def write_corpus(path, speakers: Sequence[SyntheticSpeaker]) -> None:
    lines = []
    for spk in speakers:
        for x, y in zip(spk.inputs, spk.labels):
            lines.append(f"{spk.speaker_id}\t{spk.severity}\t{' '.join(decode(x))}\t{' '.join(decode(y))}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_corpus(path) -> List[SyntheticSpeaker]:
    rows: Dict[str, dict] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
        sid, sev, xs, ys = fields
        try:
            x = [WORD_ID[w] for w in xs.split()]
            y = [WORD_ID[w] for w in ys.split()]
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: unknown word {exc.args[0]!r}") from None
        if len(x) != len(y):
            raise DataError(f"{path}:{lineno}: input and label lengths differ")
        entry = rows.setdefault(sid, {"severity": sev, "x": [], "y": []})
        entry["x"].append(x)
        entry["y"].append(y)
    out = []
    for sid, e in rows.items():
        n = len(e["x"])
        out.append(SyntheticSpeaker(sid, e["severity"], np.array(e["x"], dtype=np.int64),
                                    np.array(e["y"], dtype=np.int64), [f"{sid}-{i:04d}" for i in range(n)]))
    return out
