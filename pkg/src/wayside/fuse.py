"""
Classifier inputs for the fusion strategies.

A strategy combines an optional signal representation block ``S`` (VAE
embedding or any fixed-length descriptor) with semantic blocks from axle
detection: ``Z`` (wheel count), ``X`` (wheel times) and ``Y`` (strain per
wheel).  Starred strategies append the payload in tonnes and the speed in km/h.
X and Y are padded to a fixed width; padded slots carry ``MASK_SENTINEL`` in the
model input so their stored values can never reach the classifier.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed import Embedding, encode_batch, make_window
from .peaks import SemanticFeatures, detect, extract_semantics

MAX_WHEELS = 48
MASK_SENTINEL = -1.0


@dataclass(frozen=True)
class FusionStrategy:
    code: str
    uses_embedding: bool
    semantic_fields: tuple[str, ...]
    starred: bool = False

    @property
    def name(self) -> str:
        return self.code + ("*" if self.starred else "")


_BASE = {
    "S-WC": (True, ("Z",)),
    "S-WI": (True, ("X",)),
    "I-WI": (False, ("X",)),
    "I-WD": (False, ("Y",)),
    "S-WD": (True, ("Y",)),
}
STRATEGIES = {}
for _code, (_emb, _sem) in _BASE.items():
    for _star in (False, True):
        _s = FusionStrategy(_code, _emb, _sem, _star)
        STRATEGIES[_s.name] = _s
BASE_CODES = tuple(_BASE)


def strategy(name) -> FusionStrategy:
    if isinstance(name, FusionStrategy):
        return name
    try:
        return STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown fusion strategy {name!r}; expected one of {sorted(STRATEGIES)}")


def layout_for(strat: FusionStrategy, embed_dim: int = 40, max_wheels: int = MAX_WHEELS
               ) -> tuple[str, ...]:
    names = []
    if strat.uses_embedding:
        names += [f"S{i}" for i in range(embed_dim)]
    for f in ("Z", "X", "Y"):
        if f not in strat.semantic_fields:
            continue
        names += ["Z"] if f == "Z" else [f"{f}{i}" for i in range(max_wheels)]
    if strat.starred:
        names += ["load_t", "speed_kmh"]
    return tuple(names)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: tuple[str, ...]
    mask: np.ndarray                    # True where the slot holds real data
    label: int | None = None
    soft_label: float | None = None
    domain_id: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        m = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "layout", tuple(self.layout))
        if v.ndim != 1 or v.size != len(self.layout) or m.shape != v.shape:
            raise ValueError("values, layout and mask must have equal length")

    def model_input(self) -> np.ndarray:
        return np.where(self.mask, self.values, MASK_SENTINEL)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (self.layout == other.layout and np.array_equal(self.values, other.values)
                and np.array_equal(self.mask, other.mask) and self.label == other.label
                and self.soft_label == other.soft_label and self.domain_id == other.domain_id)

    __hash__ = None


def _padded(v, width):
    v = np.asarray(v, dtype=float)[:width]
    out = np.full(width, MASK_SENTINEL)
    out[:v.size] = v
    valid = np.zeros(width, dtype=bool)
    valid[:v.size] = True
    return out, valid


def fuse(strat, embedding, sem: SemanticFeatures, max_wheels: int = MAX_WHEELS,
         label: int | None = None, soft_label: float | None = None,
         domain_id: int | None = None) -> FeatureVector:
    """Concatenate ``[S?, Z?, X?, Y?, load?, speed?]`` for one passage.

    ``embedding`` is an :class:`Embedding` (its fused view is used), a plain
    vector, or None when the strategy does not use the signal block.
    """
    strat = strategy(strat)
    blocks, masks = [], []
    if strat.uses_embedding:
        if embedding is None:
            raise ValueError(f"{strat.name} needs a signal embedding")
        s = embedding.fused_view if isinstance(embedding, Embedding) else np.asarray(embedding, float)
        blocks.append(s.ravel())
        masks.append(np.ones(s.size, dtype=bool))
    elif embedding is not None:
        raise ValueError(f"{strat.name} takes no signal embedding")
    emb_dim = blocks[0].size if blocks else 0
    for f in ("Z", "X", "Y"):
        if f not in strat.semantic_fields:
            continue
        if f == "Z":
            blocks.append(np.array([float(sem.Z)]))
            masks.append(np.ones(1, dtype=bool))
        else:
            v, m = _padded(sem.X if f == "X" else sem.Y, max_wheels)
            blocks.append(v)
            masks.append(m)
    if strat.starred:
        if sem.context_load is None or sem.context_speed is None:
            raise ValueError(f"{strat.name} needs load and speed context")
        blocks.append(np.array([sem.context_load, sem.context_speed], dtype=float))
        masks.append(np.ones(2, dtype=bool))
    return FeatureVector(np.concatenate(blocks), layout_for(strat, emb_dim, max_wheels),
                         np.concatenate(masks), label, soft_label, domain_id)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    rows: list[FeatureVector]
    meta: dict = field(default_factory=dict)
    n_failed: int = 0
    passage_index: np.ndarray | None = None   # source passage of each row

    def __len__(self):
        return len(self.rows)

    @property
    def layout(self) -> tuple[str, ...]:
        return self.rows[0].layout if self.rows else ()

    @property
    def X(self) -> np.ndarray:
        return np.stack([r.model_input() for r in self.rows])

    @property
    def y(self) -> np.ndarray:
        return np.array([r.label for r in self.rows], dtype=int)

    @property
    def targets(self) -> np.ndarray:
        """Soft labels where stored, hard labels elsewhere."""
        return np.array([r.label if r.soft_label is None else r.soft_label for r in self.rows],
                        dtype=float)

    @property
    def class_balance(self) -> float:
        return float(self.y.mean()) if self.rows else float("nan")

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        pi = None if self.passage_index is None else self.passage_index[idx]
        return Dataset([self.rows[i] for i in idx], dict(self.meta), 0, pi)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.layout) + ["label", "soft_label", "domain_id"])
        for r in self.rows:
            vals = [repr(float(v)) if m else "" for v, m in zip(r.values, r.mask)]
            w.writerow(vals + ["" if r.label is None else r.label,
                               "" if r.soft_label is None else repr(float(r.soft_label)),
                               "" if r.domain_id is None else r.domain_id])
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()

    def save(self, path) -> None:
        """CSV plus a ``.json`` sidecar; masked slots are written as empty cells."""
        path = Path(path)
        path.write_text(self.to_csv())
        side = dict(self.meta, n_rows=len(self), n_failed=self.n_failed,
                    class_balance=self.class_balance, sha256=self.digest())
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def parse_csv(text: str) -> list[FeatureVector]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header[-3:] != ["label", "soft_label", "domain_id"]:
        raise ValueError("dataset CSV must end with label, soft_label, domain_id columns")
    layout = tuple(header[:-3])
    rows = []
    for rec in reader:
        cells = rec[:-3]
        mask = np.array([c != "" for c in cells])
        values = np.array([float(c) if c != "" else MASK_SENTINEL for c in cells])
        lab, soft, dom = rec[-3:]
        rows.append(FeatureVector(values, layout, mask,
                                  int(lab) if lab != "" else None,
                                  float(soft) if soft != "" else None,
                                  int(dom) if dom != "" else None))
    return rows


def load_dataset(path) -> Dataset:
    path = Path(path)
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return Dataset(parse_csv(path.read_text()), meta, int(meta.get("n_failed", 0)))


def passage_semantics(rec, algorithm: str, sensitivity: float) -> SemanticFeatures:
    """Detect peaks on the strain channel and attach the ground-truth context."""
    peaks = detect(rec.strain, algorithm, sensitivity)
    spec = rec.truth
    return extract_semantics(peaks, rec.sample_rate, context_load=spec.load.total_load,
                             context_speed=spec.speed_kmh)


def vae_representation(recordings, vae) -> np.ndarray:
    """Fused ``[mu, logvar]`` embedding row per recording."""
    return encode_batch([make_window(r.accel) for r in recordings], vae)


def build_dataset(recordings, strat, algorithm: str, sensitivity: float, vae=None,
                  representation=None, domain_id: int | None = None,
                  max_wheels: int = MAX_WHEELS, semantics=None) -> Dataset:
    """One labelled FeatureVector per passage (label 1 iff any defect is present).

    ``representation`` may supply precomputed S rows (for example handcrafted
    features or cached embeddings); otherwise ``vae`` encodes the accelerometer
    windows.  ``semantics`` may supply precomputed SemanticFeatures.  Passages
    whose detection fails are excluded and counted in ``n_failed``.
    """
    strat = strategy(strat)
    recordings = list(recordings)
    if strat.uses_embedding and representation is None:
        if vae is None:
            raise ValueError(f"{strat.name} needs a trained VAE or a representation")
        representation = vae_representation(recordings, vae)
    rows, kept = [], []
    failed = 0
    for i, rec in enumerate(recordings):
        try:
            sem = semantics[i] if semantics is not None else passage_semantics(rec, algorithm, sensitivity)
            if sem is None:
                raise ValueError("detection failed")
            emb = representation[i] if strat.uses_embedding else None
            rows.append(fuse(strat, emb, sem, max_wheels, label=int(rec.truth.is_anomalous),
                             domain_id=domain_id))
            kept.append(i)
        except ValueError:
            failed += 1
    if failed:
        warnings.warn(f"{failed} passage(s) excluded after detection failure", RuntimeWarning)
    meta = {"strategy": strat.name, "detector": algorithm, "sensitivity": sensitivity,
            "seeds": [int(r.truth.irregularity_seed) for r in recordings]}
    return Dataset(rows, meta, failed, np.array(kept, dtype=int))
