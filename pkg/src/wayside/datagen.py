"""
Random passage populations and the on-disk passage batch format.

A batch directory holds ``passages.json`` (one config record per passage,
readable by :func:`wayside.synth.passage_spec_from_config`) and one CSV per
passage with columns ``t_seconds, strain, accel``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import synth
from .synth import DefectKind, LoadScheme, PassageSpec, WaysideRecording

# (wagon, wheel, side) slots used when a passage carries several defects
FLAT_SLOTS = ((3, 1, "left"), (3, 3, "left"), (2, 1, "left"))
POLY_SLOTS = ((1, 1, "right"), (1, 2, "right"), (2, 2, "right"))
ANOMALY_TYPES = ("P", "F", "F+P")


@dataclass(frozen=True)
class SamplingSpec:
    """Distribution over passages.

    ``speed_ranges`` maps a train type name to a (min, max) km/h interval and
    also defines the train mix (uniform over its keys).
    """

    speed_ranges: dict = field(default_factory=lambda: dict(synth.SPEED_LIMITS_KMH))
    loads: tuple[str, ...] = tuple(s.value for s in LoadScheme)
    anomaly_rate: float = 0.5
    max_defects: int = 3
    snr_db: float | None = 20.0
    sample_rate_hz: float = 2000.0

    def __post_init__(self):
        for name, (lo, hi) in self.speed_ranges.items():
            lim = synth.SPEED_LIMITS_KMH[synth.train_type(name).name]
            if not lim[0] <= lo <= hi <= lim[1]:
                raise ValueError(f"speed range {(lo, hi)} outside the limits of {name}")
        for ld in self.loads:
            LoadScheme(ld)
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise ValueError("anomaly_rate must be in [0, 1]")
        if not 1 <= self.max_defects <= 3:
            raise ValueError("max_defects must be in 1..3")


def sample_defects(kind: str, count: int, rng: np.random.Generator) -> tuple:
    """``count`` defects of anomaly type ``kind`` ('P', 'F' or 'F+P')."""
    if kind == "F":
        kinds = [DefectKind.FLAT] * count
    elif kind == "P":
        kinds = [DefectKind.POLYGONIZATION] * count
    elif kind == "F+P":
        count = max(count, 2)
        kinds = [DefectKind.FLAT, DefectKind.POLYGONIZATION]
        kinds += [DefectKind(rng.choice([k.value for k in DefectKind])) for _ in range(count - 2)]
    else:
        raise ValueError(f"unknown anomaly type {kind!r}")
    out, used = [], {DefectKind.FLAT: 0, DefectKind.POLYGONIZATION: 0}
    for k in kinds:
        slots = FLAT_SLOTS if k is DefectKind.FLAT else POLY_SLOTS
        wagon, wheel, side = slots[used[k]]
        used[k] += 1
        if k is DefectKind.FLAT:
            interval = synth.FLAT_L1 if rng.random() < 0.5 else synth.FLAT_L2
        else:
            interval = synth.POLY_DEFAULT
        out.append(synth.sample_defect(k, interval, rng, wagon_index=wagon,
                                       wheel_index=wheel, side=side))
    return tuple(out)


def sample_specs(sampling: SamplingSpec, n: int, seed) -> list[PassageSpec]:
    """``n`` passage specs; exactly ``round(n * anomaly_rate)`` are defective."""
    rng = np.random.default_rng(seed)
    n_bad = int(round(n * sampling.anomaly_rate))
    bad = np.zeros(n, dtype=bool)
    bad[rng.permutation(n)[:n_bad]] = True
    names = sorted(sampling.speed_ranges)
    specs = []
    for i in range(n):
        name = names[int(rng.integers(len(names)))]
        lo, hi = sampling.speed_ranges[name]
        speed = float(rng.uniform(lo, hi))
        load = sampling.loads[int(rng.integers(len(sampling.loads)))]
        defects = ()
        if bad[i]:
            kind = ANOMALY_TYPES[int(rng.integers(3))]
            count = int(rng.integers(1, sampling.max_defects + 1))
            defects = sample_defects(kind, count, rng)
        specs.append(PassageSpec(
            train=synth.train_type(name), speed_kmh=speed, load=load, defects=defects,
            irregularity_seed=int(rng.integers(2 ** 31)),
            sample_rate_hz=sampling.sample_rate_hz, snr_db=sampling.snr_db,
        ))
    return specs


def synthesize_batch(specs, params: synth.SurrogateParams = synth.DEFAULT_SURROGATE
                     ) -> list[WaysideRecording]:
    return [synth.synthesize_passage(s, params) for s in specs]


def save_batch(directory, recordings) -> list[Path]:
    """Write a passage batch; returns the files written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta, written = [], []
    for i, rec in enumerate(recordings):
        name = f"passage_{i:04d}.csv"
        with open(directory / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_seconds", "strain", "accel"])
            for t, s, a in zip(rec.times, rec.strain, rec.accel):
                w.writerow([f"{t:.6f}", repr(float(s)), repr(float(a))])
        meta.append({"file": name, "config": rec.truth.to_config(),
                     "wheel_pass_times": [float(t) for t in rec.wheel_pass_times]})
        written.append(directory / name)
    index = directory / "passages.json"
    index.write_text(json.dumps(meta, indent=1, sort_keys=True))
    return written + [index]


def load_batch(directory) -> list[WaysideRecording]:
    directory = Path(directory)
    meta = json.loads((directory / "passages.json").read_text())
    out = []
    for m in meta:
        data = np.loadtxt(directory / m["file"], delimiter=",", skiprows=1, ndmin=2)
        spec = synth.passage_spec_from_config(m["config"])
        out.append(WaysideRecording(
            strain=data[:, 1].copy(), accel=data[:, 2].copy(),
            sample_rate=spec.sample_rate_hz, truth=spec,
            wheel_pass_times=np.asarray(m["wheel_pass_times"], dtype=float),
        ))
    return out
