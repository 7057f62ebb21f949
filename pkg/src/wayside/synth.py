"""
Synthetic wayside recordings of train passages.

A strain gauge and an accelerometer sit at the same point of the left rail.
Every wheel produces a bell-shaped strain pulse proportional to its static
load while it rolls over the sensor; the dynamic contact force of each wheel
is modulated by the track irregularity under it and by its own tread defects
(flats, polygonization).  The accelerometer sees the quasi-static passing
response of every wheel plus the dynamic force of wheels close to the sensor.

The model is an analytical surrogate of a train-track interaction simulation.
It is meant to provide signals with controllable peak structure and defect
signatures, not contact-mechanics accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import signal as sps

DEFAULT_WHEEL_RADIUS_MM = 460.0
N_HARMONICS = 20

# admissible defect severities; named intervals used by the experiments.
FLAT_LENGTH_BOUNDS_MM = (10.0, 100.0)
POLY_SEVERITY_BOUNDS_MM = (0.25, 1.2)
FLAT_L1 = (25.0, 50.0)
FLAT_L2 = (50.0, 100.0)
POLY_DEFAULT = (0.8, 1.2)

SPEED_LIMITS_KMH = {"Laagrss": (40.0, 120.0), "Alfa": (40.0, 220.0)}


class ConfigurationError(ValueError):
    """Raised when a passage cannot be synthesized with the requested setup."""


@dataclass(frozen=True)
class SurrogateParams:
    """Constants of the surrogate rail response.

    Defaults are chosen so that strain pulses of neighbouring axles stay
    separated at every admissible speed and so that defect signatures are of
    the same order as the operational variability of the accelerometer.
    """

    influence_sigma_m: float = 0.35       # strain influence-line width
    strain_per_tonne: float = 6.0         # µm/m per tonne of wheel load
    attenuation_m: float = 2.0            # decay of the dynamic response along the rail
    contact_freq_hz: float = 60.0         # wheel/rail contact resonance
    contact_damping: float = 0.3
    contact_gain_per_m: float = 600.0     # dynamic load factor per metre of filtered input
    irregularity_gain: float = 0.3        # share of the track profile seen by the contact
    cross_rail_coupling: float = 0.6      # right-wheel defects seen from the left rail
    quasi_static_gain: float = 2.0e-4
    dynamic_gain: float = 20.0
    strain_dynamic_gain: float = 1.5      # share of the dynamic force in the strain gauge
    margin_m: float = 10.0                # travel before the first / after the last axle
    min_samples_per_gap: int = 8


DEFAULT_SURROGATE = SurrogateParams()


@dataclass(frozen=True)
class TrainType:
    name: str
    axle_positions: tuple[float, ...]       # metres from the train head
    wagon_of_axle: tuple[int, ...]          # 1-based wagon index of each axle
    expected_grouping: tuple[int, ...]
    tare_axle_load_t: float

    def __post_init__(self):
        pos = np.asarray(self.axle_positions, dtype=float)
        if pos.size < 2 or np.any(np.diff(pos) <= 0):
            raise ValueError("axle positions must be strictly increasing")
        if len(self.wagon_of_axle) != pos.size:
            raise ValueError("wagon_of_axle must have one entry per axle")
        if sum(self.expected_grouping) != pos.size:
            raise ValueError("expected_grouping does not cover every axle")

    @property
    def expected_wheel_count(self) -> int:
        return len(self.axle_positions)

    @property
    def length_m(self) -> float:
        return self.axle_positions[-1] - self.axle_positions[0]

    def axle_index(self, wagon_index: int, wheel_index: int) -> int:
        """Global axle index of the ``wheel_index``-th axle (1-based) of a wagon."""
        axles = [i for i, w in enumerate(self.wagon_of_axle) if w == wagon_index]
        if not 1 <= wheel_index <= len(axles):
            raise ValueError(f"{self.name} wagon {wagon_index} has no wheel {wheel_index}")
        return axles[wheel_index - 1]

    def side_of_axle(self) -> np.ndarray:
        """0 for axles in the front half of the consist, 1 for the rear half."""
        pos = np.asarray(self.axle_positions)
        return (pos > pos[0] + self.length_m / 2).astype(int)


# Two-unit freight wagons: isolated end axles, paired axles in between.
LAAGRSS = TrainType(
    name="Laagrss",
    axle_positions=(0.0, 9.0, 10.8, 18.0, 19.8, 27.0, 28.8, 36.0, 37.8, 46.8),
    wagon_of_axle=(1, 1, 1, 2, 2, 2, 2, 3, 3, 3),
    expected_grouping=(1, 2, 2, 2, 2, 1),
    tare_axle_load_t=5.0,
)

# Passenger cars on two-axle bogies, 25 m car length.
ALFA = TrainType(
    name="Alfa",
    axle_positions=tuple(
        round(25.0 * c + a, 3) for c in range(3) for a in (3.15, 5.85, 19.15, 21.85)
    ),
    wagon_of_axle=tuple(c + 1 for c in range(3) for _ in range(4)),
    expected_grouping=(2, 2, 2, 2, 2, 2),
    tare_axle_load_t=10.0,
)

TRAIN_TYPES = {t.name: t for t in (LAAGRSS, ALFA)}


def train_type(name: str) -> TrainType:
    try:
        return TRAIN_TYPES[name]
    except KeyError:
        raise ValueError(f"unknown train type {name!r}; expected one of {sorted(TRAIN_TYPES)}")


class LoadScheme(str, Enum):
    EMPTY = "Empty"
    HALF = "Half"
    FULL = "Full"
    UNBALANCE1 = "Unbalance1"
    UNBALANCE2 = "Unbalance2"
    UNBALANCE3 = "Unbalance3"

    @property
    def per_side_load(self) -> tuple[float, float]:
        """Payload in tonnes carried by the (front, rear) half of the consist."""
        return _SIDE_LOADS[self]

    @property
    def total_load(self) -> float:
        return sum(self.per_side_load)

    @property
    def is_unbalanced(self) -> bool:
        a, b = self.per_side_load
        return a != b


_SIDE_LOADS = {
    LoadScheme.EMPTY: (0.0, 0.0),
    LoadScheme.HALF: (7.5, 7.5),
    LoadScheme.FULL: (15.0, 15.0),
    LoadScheme.UNBALANCE1: (15.0, 7.5),
    LoadScheme.UNBALANCE2: (15.0, 3.0),
    LoadScheme.UNBALANCE3: (15.0, 0.0),
}


def axle_loads(train: TrainType, load: LoadScheme) -> np.ndarray:
    """Static axle loads in tonnes (tare plus the payload share of each half)."""
    side = train.side_of_axle()
    payload = np.asarray(load.per_side_load)
    counts = np.bincount(side, minlength=2)
    return train.tare_axle_load_t + payload[side] / counts[side]


# ---------------------------------------------------------------------------
# Wheel defect geometry
# ---------------------------------------------------------------------------

def flat_depth(flat_length, wheel_radius):
    """Depth of a wheel flat of chord length ``flat_length`` (mm).

    ``D = L**2 / (16 R)``; both arguments in mm, result in mm.
    """
    L = np.asarray(flat_length, dtype=float)
    R = np.asarray(wheel_radius, dtype=float)
    if np.any(L <= 0) or np.any(R <= 0):
        raise ValueError("flat length and wheel radius must be positive")
    out = L ** 2 / (16.0 * R)
    return float(out) if out.ndim == 0 else out


def flat_profile(x_w, flat_length, wheel_radius):
    """Radial deviation (mm) of a flat wheel at circumferential coordinate ``x_w``.

    The flat occupies the last ``flat_length`` mm of the circumference.  The
    cosine is evaluated in the coordinate local to the flat window, so the
    profile is zero at both window edges and reaches ``-depth`` in the middle.
    """
    x = np.asarray(x_w, dtype=float)
    circumference = 2.0 * math.pi * wheel_radius
    if np.any(x < 0) or np.any(x > circumference):
        raise ValueError("x_w must lie within one wheel circumference")
    depth = flat_depth(flat_length, wheel_radius)
    start = circumference - flat_length
    local = x - start
    out = np.where(
        local >= 0,
        -0.5 * depth * (1.0 - np.cos(2.0 * math.pi * local / flat_length)),
        0.0,
    )
    return float(out) if out.ndim == 0 else out


def poly_wavelength(order, wheel_radius):
    """Wavelength (mm) of polygonization harmonic ``order`` on a wheel of radius ``wheel_radius``."""
    theta = np.asarray(order)
    if np.any(theta < 1) or np.any(theta != np.floor(theta)):
        raise ValueError("harmonic order must be an integer >= 1")
    out = 2.0 * math.pi * wheel_radius / theta
    return float(out) if np.ndim(out) == 0 else out


def poly_amplitude(level_db):
    """Sine amplitude in µm for an irregularity level in dB re 1 µm."""
    out = math.sqrt(2.0) * 10.0 ** (np.asarray(level_db, dtype=float) / 20.0) * 1.0
    return float(out) if np.ndim(out) == 0 else out


class DefectKind(str, Enum):
    FLAT = "flat"
    POLYGONIZATION = "polygonization"


@dataclass(frozen=True)
class WheelDefect:
    kind: DefectKind
    wagon_index: int
    wheel_index: int
    side: str = "left"
    flat_length: float = 0.0                          # mm, flats only
    harmonic_levels: tuple[float, ...] = ()           # dB re 1 µm, polygonization only
    phases: tuple[float, ...] = ()                    # rad in [0, 2pi)
    wheel_radius: float = DEFAULT_WHEEL_RADIUS_MM

    def __post_init__(self):
        object.__setattr__(self, "kind", DefectKind(self.kind))
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        if self.wheel_radius <= 0:
            raise ValueError("wheel radius must be positive")
        if self.kind is DefectKind.FLAT:
            if self.flat_length <= 0:
                raise ValueError("a flat needs a positive length")
            if self.flat_length >= 2 * math.pi * self.wheel_radius:
                raise ValueError("flat longer than the wheel circumference")
        else:
            if len(self.harmonic_levels) != len(self.phases) or not self.phases:
                raise ValueError("polygonization needs one level and one phase per harmonic")
            ph = np.asarray(self.phases)
            if np.any(ph < 0) or np.any(ph >= 2 * math.pi):
                raise ValueError("phases must lie in [0, 2pi)")

    @property
    def flat_depth(self) -> float:
        if self.kind is not DefectKind.FLAT:
            return 0.0
        return flat_depth(self.flat_length, self.wheel_radius)

    @property
    def amplitudes(self) -> np.ndarray:
        """Harmonic amplitudes in µm (empty for flats)."""
        return np.asarray(poly_amplitude(np.asarray(self.harmonic_levels)), dtype=float).reshape(-1)

    def profile(self, x_w) -> np.ndarray:
        """Radial tread deviation (mm) at circumferential coordinate(s) ``x_w``."""
        if self.kind is DefectKind.FLAT:
            return flat_profile(x_w, self.flat_length, self.wheel_radius)
        return poly_profile(x_w, self)

    def severity(self) -> float:
        """Flat length (mm) for flats, peak radial deviation (mm) for polygons."""
        if self.kind is DefectKind.FLAT:
            return self.flat_length
        x = np.linspace(0.0, 2 * math.pi * self.wheel_radius, 4096, endpoint=False)
        return float(np.max(np.abs(poly_profile(x, self))))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "wagon_index": self.wagon_index,
            "wheel_index": self.wheel_index,
            "side": self.side,
            "flat_length": self.flat_length,
            "harmonic_levels": list(self.harmonic_levels),
            "phases": list(self.phases),
            "wheel_radius": self.wheel_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WheelDefect":
        return cls(
            kind=DefectKind(d["kind"]),
            wagon_index=int(d["wagon_index"]),
            wheel_index=int(d["wheel_index"]),
            side=d.get("side", "left"),
            flat_length=float(d.get("flat_length", 0.0)),
            harmonic_levels=tuple(float(v) for v in d.get("harmonic_levels", ())),
            phases=tuple(float(v) for v in d.get("phases", ())),
            wheel_radius=float(d.get("wheel_radius", DEFAULT_WHEEL_RADIUS_MM)),
        )


def poly_profile(x_w, defect: WheelDefect):
    """Sum-of-sines polygonal tread deviation in mm.

    ``w(x) = sum_theta A_theta sin(2 pi x / lambda_theta + phi_theta)`` with
    ``lambda_theta = 2 pi R / theta`` and amplitudes from the harmonic levels.
    """
    if defect.kind is not DefectKind.POLYGONIZATION:
        raise ValueError("poly_profile needs a polygonization defect")
    x = np.asarray(x_w, dtype=float)
    amps = defect.amplitudes * 1e-3  # µm -> mm
    orders = np.arange(1, amps.size + 1)
    k = 2.0 * math.pi / poly_wavelength(orders, defect.wheel_radius)
    ph = np.asarray(defect.phases)
    out = np.sin(np.multiply.outer(x, k) + ph) @ amps
    return float(out) if out.ndim == 0 else out


def default_poly_levels(rng: np.random.Generator, jitter_db: float = 1.5) -> np.ndarray:
    """Harmonic levels (dB) with orders 6-8 dominant, before severity scaling."""
    orders = np.arange(1, N_HARMONICS + 1)
    base = 30.0 - 2.5 * np.abs(orders - 7)
    base[(orders >= 6) & (orders <= 8)] = 33.0
    return base + rng.uniform(-jitter_db, jitter_db, size=orders.size)


def sample_defect(kind, severity_interval, rng: np.random.Generator, *,
                  wagon_index: int | None = None, wheel_index: int | None = None,
                  side: str | None = None,
                  wheel_radius: float = DEFAULT_WHEEL_RADIUS_MM) -> WheelDefect:
    """Draw a random defect of ``kind`` with severity uniform in ``severity_interval``.

    Flats draw their length (mm); polygons draw a target peak deviation (mm)
    and uniform phases, then shift the level spectrum to hit that target.
    Locations default to the reference placements (3rd wagon, 1st left
    wheel for flats; 1st wagon, 1st right wheel for polygons).
    """
    kind = DefectKind(kind)
    lo, hi = map(float, severity_interval)
    bounds = FLAT_LENGTH_BOUNDS_MM if kind is DefectKind.FLAT else POLY_SEVERITY_BOUNDS_MM
    if not (bounds[0] <= lo <= hi <= bounds[1]):
        raise ValueError(f"severity interval {severity_interval} outside {bounds} for {kind.value}")
    target = rng.uniform(lo, hi)
    if kind is DefectKind.FLAT:
        return WheelDefect(
            kind=kind,
            wagon_index=3 if wagon_index is None else wagon_index,
            wheel_index=1 if wheel_index is None else wheel_index,
            side="left" if side is None else side,
            flat_length=float(target),
            wheel_radius=wheel_radius,
        )
    levels = default_poly_levels(rng)
    phases = rng.uniform(0.0, 2 * math.pi, size=N_HARMONICS)
    proto = WheelDefect(
        kind=kind,
        wagon_index=1 if wagon_index is None else wagon_index,
        wheel_index=1 if wheel_index is None else wheel_index,
        side="right" if side is None else side,
        harmonic_levels=tuple(levels),
        phases=tuple(phases),
        wheel_radius=wheel_radius,
    )
    # amplitudes scale linearly with 10**(dB/20), so one offset hits the target
    offset = 20.0 * math.log10(target / proto.severity())
    return replace(proto, harmonic_levels=tuple(levels + offset))


# ---------------------------------------------------------------------------
# Track irregularity
# ---------------------------------------------------------------------------

def gen_track_irregularity(seed, length: float = 100.0, wavelength_band=(1.0, 30.0),
                           amplitude: float = 2.0, dx: float = 1e-3) -> np.ndarray:
    """Random vertical track profile (mm) sampled every ``dx`` metres.

    The spectrum is confined to wavelengths inside ``wavelength_band`` (m) with
    amplitudes falling as 1/spatial frequency; the profile is then rescaled so
    its peak magnitude equals ``amplitude``.  The result is periodic over
    ``length``.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    lam_lo, lam_hi = map(float, wavelength_band)
    if not 0 < lam_lo < lam_hi:
        raise ValueError("empty wavelength band")
    n = int(round(length / dx))
    freqs = np.fft.rfftfreq(n, dx)
    band = (freqs >= 1.0 / lam_hi) & (freqs <= 1.0 / lam_lo)
    if not band.any():
        raise ValueError("wavelength band contains no resolvable frequency")
    if amplitude == 0:
        return np.zeros(n)
    rng = np.random.default_rng(seed)
    coef = np.zeros(freqs.size, dtype=complex)
    nb = int(band.sum())
    coef[band] = (rng.standard_normal(nb) + 1j * rng.standard_normal(nb)) / freqs[band]
    profile = np.fft.irfft(coef, n)
    return profile * (abs(amplitude) / np.max(np.abs(profile)))


# ---------------------------------------------------------------------------
# Passages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PassageSpec:
    train: TrainType
    speed_kmh: float
    load: LoadScheme = LoadScheme.FULL
    defects: tuple[WheelDefect, ...] = ()
    irregularity_seed: int = 0
    sample_rate_hz: float = 2000.0
    snr_db: float | None = 20.0

    def __post_init__(self):
        object.__setattr__(self, "load", LoadScheme(self.load))
        object.__setattr__(self, "defects", tuple(self.defects))
        lo, hi = SPEED_LIMITS_KMH.get(self.train.name, (1.0, 400.0))
        if not lo <= self.speed_kmh <= hi:
            raise ValueError(f"{self.train.name} speed must lie in [{lo}, {hi}] km/h")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        for d in self.defects:
            self.train.axle_index(d.wagon_index, d.wheel_index)

    @property
    def speed_ms(self) -> float:
        return self.speed_kmh / 3.6

    @property
    def is_anomalous(self) -> bool:
        return bool(self.defects)

    @property
    def anomaly_type(self) -> str:
        """'-', 'P', 'F' or 'F+P'."""
        kinds = {d.kind for d in self.defects}
        if not kinds:
            return "-"
        if kinds == {DefectKind.FLAT}:
            return "F"
        if kinds == {DefectKind.POLYGONIZATION}:
            return "P"
        return "F+P"

    def to_config(self) -> dict:
        return {
            "train_type": self.train.name,
            "speed_kmh": self.speed_kmh,
            "load_scheme": self.load.value,
            "defects": [d.to_dict() for d in self.defects],
            "seed": self.irregularity_seed,
            "sample_rate_hz": self.sample_rate_hz,
            "snr_db": self.snr_db,
        }


PASSAGE_CONFIG_KEYS = {"train_type", "speed_kmh", "load_scheme", "defects", "seed",
                       "sample_rate_hz", "snr_db"}


def passage_spec_from_config(cfg: dict) -> PassageSpec:
    unknown = set(cfg) - PASSAGE_CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown passage config keys: {sorted(unknown)}")
    return PassageSpec(
        train=train_type(cfg["train_type"]),
        speed_kmh=float(cfg["speed_kmh"]),
        load=LoadScheme(cfg.get("load_scheme", "Full")),
        defects=tuple(WheelDefect.from_dict(d) for d in cfg.get("defects", [])),
        irregularity_seed=int(cfg.get("seed", 0)),
        sample_rate_hz=float(cfg.get("sample_rate_hz", 2000.0)),
        snr_db=None if cfg.get("snr_db", 20.0) is None else float(cfg.get("snr_db", 20.0)),
    )


@dataclass(frozen=True)
class WaysideRecording:
    strain: np.ndarray           # µm/m
    accel: np.ndarray            # m/s^2
    sample_rate: float
    truth: PassageSpec
    wheel_pass_times: np.ndarray  # s, one per axle
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.strain.shape != self.accel.shape:
            raise ValueError("strain and accel must have the same length")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.strain.size) / self.sample_rate


def _sample_averaged_profile(defect: WheelDefect, s_mm: np.ndarray, width_mm: float,
                             resolution_mm: float = 0.25) -> np.ndarray:
    """Mean tread deviation over the arc rolled during each sample, [s, s + width).

    Point sampling would skip a short flat whenever the wheel travels further
    than the flat length between two samples.
    """
    circ = 2 * math.pi * defect.wheel_radius
    m = int(math.ceil(circ / resolution_mm))
    grid = np.linspace(0.0, circ, m + 1)
    prof = np.asarray(defect.profile(grid), dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (prof[1:] + prof[:-1]) * np.diff(grid))])
    total = cum[-1]

    def integral(u):
        turns = np.floor(u / circ)
        return turns * total + np.interp(u - turns * circ, grid, cum)

    return (integral(s_mm + width_mm) - integral(s_mm)) / width_mm


def _contact_filter(fs: float, params: SurrogateParams):
    # second-order high-pass resonance H(s) = s^2 / (s^2 + 2 zeta w0 s + w0^2)
    w0 = 2 * math.pi * params.contact_freq_hz
    b, a = sps.bilinear([1.0, 0.0, 0.0], [1.0, 2 * params.contact_damping * w0, w0 ** 2], fs)
    return b, a


def _band_limited_noise(rng: np.random.Generator, n: int, power: float, fs: float) -> np.ndarray:
    if power <= 0:
        return np.zeros(n)
    white = rng.standard_normal(n)
    sos = sps.butter(4, 0.25 * fs, btype="low", fs=fs, output="sos")
    coloured = sps.sosfiltfilt(sos, white)
    return coloured * math.sqrt(power) / coloured.std()


def _check_resolution(spec: PassageSpec, params: SurrogateParams) -> None:
    v = spec.speed_ms
    min_gap = float(np.min(np.diff(spec.train.axle_positions)))
    fs = spec.sample_rate_hz
    if min_gap / v * fs < params.min_samples_per_gap or params.influence_sigma_m / v * fs < 2.0:
        raise ConfigurationError(
            f"sample rate {fs} Hz cannot resolve axles {min_gap} m apart at {spec.speed_kmh} km/h"
        )


def synthesize_passage(spec: PassageSpec, params: SurrogateParams = DEFAULT_SURROGATE,
                       sensor_offset_m: float = 0.0) -> WaysideRecording:
    """Simulate strain and acceleration at a wayside sensor for one passage.

    Parameters
    ----------
    spec : PassageSpec
        Train, speed, load, defects and seeds.  Output is a pure function of
        ``spec`` (and ``params``).
    params : SurrogateParams
        Surrogate response constants.
    sensor_offset_m : float
        Position of the sensor along the direction of travel.  Used to build a
        second virtual strain sensor for speed/direction estimation; the time
        axis is the same for every offset.

    Returns
    -------
    WaysideRecording
    """
    _check_resolution(spec, params)
    if sensor_offset_m < 0:
        raise ValueError("sensor offset must be non-negative")
    train = spec.train
    v = spec.speed_ms
    fs = spec.sample_rate_hz
    pos = np.asarray(train.axle_positions, dtype=float)
    n_axles = pos.size

    ss = np.random.SeedSequence(spec.irregularity_seed)
    irr_seq, phase_seq, noise_seq = ss.spawn(3)
    phase_rng = np.random.default_rng(phase_seq)
    noise_rng = np.random.default_rng(noise_seq)

    duration = (2 * params.margin_m + train.length_m + abs(sensor_offset_m)) / v
    n = int(math.ceil(duration * fs))
    t = np.arange(n) / fs
    head = -params.margin_m + v * t               # head position relative to the primary sensor
    x_axle = head[None, :] - pos[:, None]         # (axles, samples), track coordinate
    rel = x_axle - sensor_offset_m                # relative to this sensor

    # track irregularity under each wheel (periodic profile, metres)
    track_len = 100.0
    profile_mm = gen_track_irregularity(irr_seq, length=track_len)
    grid = np.arange(profile_mm.size) * 1e-3
    track = np.interp(np.mod(x_axle, track_len), grid, profile_mm, period=track_len) * 1e-3

    excitation = params.irregularity_gain * track
    circumference_m = {}
    for d in spec.defects:
        k = train.axle_index(d.wagon_index, d.wheel_index)
        circ = 2 * math.pi * d.wheel_radius * 1e-3
        circumference_m[k] = circ
        # rolling coordinate on the tread: random initial angle, one turn per circumference
        s0 = phase_rng.uniform(0.0, circ)
        s_mm = np.mod(x_axle[k] + s0, circ) * 1e3
        w = _sample_averaged_profile(d, s_mm, v / fs * 1e3) * 1e-3
        coupling = 1.0 if d.side == "left" else params.cross_rail_coupling
        excitation[k] = excitation[k] + coupling * w

    b, a = _contact_filter(fs, params)
    eta = params.contact_gain_per_m * sps.lfilter(b, a, excitation, axis=1)

    loads = axle_loads(train, spec.load)
    amp = params.strain_per_tonne * loads / 2.0      # wheel load = half the axle load
    sig = params.influence_sigma_m
    bell = np.exp(-0.5 * (rel / sig) ** 2)
    atten = np.exp(-np.abs(rel) / params.attenuation_m)
    # quasi-static bending under each wheel plus the dynamic wheel force carried
    # to the gauge by the same attenuated rail wave the accelerometer sees
    strain = np.sum(amp[:, None] * (bell + params.strain_dynamic_gain * eta * atten), axis=0)

    bell_dd = (rel ** 2 / sig ** 2 - 1.0) / sig ** 2 * bell
    quasi_static = params.quasi_static_gain * v ** 2 * np.sum(amp[:, None] * bell_dd, axis=0)
    dynamic = params.dynamic_gain * np.sum(amp[:, None] * eta * atten, axis=0)
    accel = quasi_static + dynamic

    if spec.snr_db is not None:
        scale = 10.0 ** (-spec.snr_db / 10.0)
        strain = strain + _band_limited_noise(noise_rng, n, np.mean(strain ** 2) * scale, fs)
        accel = accel + _band_limited_noise(noise_rng, n, np.mean(accel ** 2) * scale, fs)

    pass_times = (params.margin_m + pos + sensor_offset_m) / v
    return WaysideRecording(
        strain=strain,
        accel=accel,
        sample_rate=fs,
        truth=spec,
        wheel_pass_times=pass_times,
        meta={"sensor_offset_m": sensor_offset_m, "axle_loads_t": loads.tolist()},
    )
