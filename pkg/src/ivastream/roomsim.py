"""Image-source room simulation and scenario mixing.

Rigid-box image method: mirror images of a point source are enumerated on a
lattice, each contributing an attenuated, fractionally delayed impulse.
Image positions follow the sign/offset parametrization
``(1 - 2p) * (src + 2 r L)`` over ``p in {0,1}^3`` and integer ``r``, with
per-wall amplitude ``beta_lo^|r+p| * beta_hi^|r| / (4 pi d)``.  Fractional
delays use an 81-tap Hann-windowed sinc at the Nyquist cutoff, so integer
sample delays reduce to a single nonzero tap.

Mixing calibrates interferer gains and the noise level against the first
microphone, and the returned bundle's observations are the sample-exact sum
of its parts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

SPEED_OF_SOUND = 343.0
SINC_TAPS = 81  # fractional-delay kernel length (odd; half-width 40)


def _as_dimensions(dims) -> tuple:
    out = tuple(float(v) for v in dims)
    if len(out) != 3 or any(v <= 0 for v in out):
        raise ValueError(f"room dimensions must be 3 positive lengths, got {dims}")
    return out


def _as_reflection(reflection) -> tuple:
    """Normalize to 6 per-wall values ordered (x_lo, x_hi, y_lo, y_hi, z_lo, z_hi)."""
    arr = np.atleast_1d(np.asarray(reflection, dtype=float))
    if arr.size == 1:
        arr = np.full(6, arr.item())
    if arr.size != 6:
        raise ValueError("reflection must be a scalar or 6 per-wall values")
    if np.any(arr < 0) or np.any(arr >= 1):
        raise ValueError("reflection coefficients must satisfy 0 <= beta < 1")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class Room:
    """Shoebox room: dimensions in meters, amplitude reflection per wall."""

    dimensions: tuple
    reflection: tuple
    sample_rate: int = 16000
    max_image_order: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "dimensions", _as_dimensions(self.dimensions))
        object.__setattr__(self, "reflection", _as_reflection(self.reflection))
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.max_image_order is not None and self.max_image_order < 0:
            raise ValueError("max_image_order must be >= 0")

    @classmethod
    def from_t60(cls, dimensions, t60: float, sample_rate: int = 16000) -> "Room":
        room = cls(dimensions, 0.5, sample_rate)
        beta = t60_to_reflection(t60, room)
        order = default_image_order(room, t60)
        return cls(dimensions, beta, sample_rate, order)

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        dims = np.asarray(self.dimensions)
        return bool(np.all(p >= margin) and np.all(p <= dims - margin))


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions, one 3D point per channel."""

    positions: np.ndarray  # (M, 3)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError("positions must be an (M, 3) array")
        object.__setattr__(self, "positions", pos)

    @classmethod
    def grid(cls, rows: int, cols: int, spacing: float, center_xy, z: float) -> "ArrayGeometry":
        """Planar horizontal grid, row-major channel order."""
        cx, cy = center_xy
        xs = (np.arange(cols) - (cols - 1) / 2.0) * spacing + cx
        ys = (np.arange(rows) - (rows - 1) / 2.0) * spacing + cy
        pts = [(x, y, z) for y in ys for x in xs]
        return cls(np.asarray(pts))

    @property
    def n_channels(self) -> int:
        return self.positions.shape[0]

    def validate_inside(self, room: Room) -> None:
        for i, p in enumerate(self.positions):
            if not room.contains(p):
                raise ValueError(f"microphone {i} at {tuple(p)} is outside the room")


@dataclass(frozen=True)
class Scenario:
    """Everything needed to synthesize one mixture deterministically."""

    room: Room
    array: ArrayGeometry
    source_positions: np.ndarray  # (N, 3)
    noise_positions: np.ndarray  # (K, 3), possibly empty
    isir_db: float = 0.0
    isnr_db: float | None = 20.0
    white_exponent: float = -0.75
    seed: int = 0

    def __post_init__(self):
        src = np.atleast_2d(np.asarray(self.source_positions, dtype=float))
        noise = np.asarray(self.noise_positions, dtype=float).reshape(-1, 3)
        if src.shape[0] < 1 or src.shape[1] != 3:
            raise ValueError("need at least one source position with 3 coordinates")
        object.__setattr__(self, "source_positions", src)
        object.__setattr__(self, "noise_positions", noise)
        self.array.validate_inside(self.room)
        for name, pts in (("source", src), ("noise", noise)):
            for p in pts:
                if not self.room.contains(p):
                    raise ValueError(f"{name} position {tuple(p)} is outside the room")

    @property
    def n_sources(self) -> int:
        return self.source_positions.shape[0]


@dataclass
class MixtureBundle:
    """Synthesized scene: observations are exactly the sum of the parts."""

    observations: np.ndarray  # (M, T)
    source_images: np.ndarray  # (N, M, T) scaled per-source images
    reference_images: np.ndarray  # (N, T) images at the reference mic
    noise_observation: np.ndarray  # (M, T)
    sample_rate: int
    gains: dict = field(default_factory=dict)


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + np.sqrt(5.0)) * i
    return np.stack(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)], axis=-1
    )


def _directional_t60(beta: float, dims, n_dirs: int = 512) -> float:
    """T60 of the image lattice's direction-resolved decay law.

    A ray along direction u reflects ``|u_i| / L_i`` times per meter off the
    walls of axis i, so the late field is a sphere average of per-direction
    exponentials rather than a single Eyring exponential; the decay curve is
    fitted over the same -5..-35 dB window the measurement oracle uses.
    """
    u = np.abs(_fibonacci_sphere(n_dirs))
    g = (u / np.asarray(dims, dtype=float)).sum(axis=-1)
    log_e = 2.0 * np.log(max(beta, 1e-12)) * SPEED_OF_SOUND  # energy log-decay per second, per unit g
    t_hi = 8.0 * -6.907755 / (log_e * float(g.mean()))
    t = np.linspace(0.0, t_hi, 3000)
    energy = np.exp(log_e * t[:, None] * g[None, :]).mean(axis=-1)
    edc = np.cumsum(energy[::-1])[::-1]
    db = 10.0 * np.log10(edc / edc[0])
    m = (db <= -5.0) & (db >= -35.0)
    slope, _ = np.polyfit(t[m], db[m], 1)
    return float(-60.0 / slope)


# The discrete lattice's fitted decay runs ~15% slower than the continuum
# directional law across 0.15-0.5 s targets; fold that into the inversion.
_LATTICE_DECAY_CORRECTION = 1.15


def t60_to_reflection(t60: float, room: Room) -> float:
    """Uniform wall reflection hitting a target reverberation time.

    Inverts the directional decay law for the target (diffuse-field Sabine
    and Eyring inversions both land outside +-20% of the backward-integration
    measurement for parts of the 0.15-0.5 s range in desk-sized rooms).
    """
    if t60 <= 0:
        raise ValueError("T60 must be positive")
    target = t60 / _LATTICE_DECAY_CORRECTION
    # Scaling ln(beta) only rescales the decay curve in time, so one reference
    # evaluation fixes the whole family: t60(beta) = k / (-2 c ln beta).
    beta_ref = 0.6
    k = _directional_t60(beta_ref, room.dimensions) * (-2.0 * np.log(beta_ref) * SPEED_OF_SOUND)
    beta = float(np.exp(-k / (2.0 * SPEED_OF_SOUND * target)))
    if beta >= 0.999:
        raise ValueError(f"T60 = {t60} s is unreachable for this geometry")
    if beta < 1e-4:
        raise ValueError(f"T60 = {t60} s is too short for this geometry")
    return beta


def t60_eyring(room: Room) -> float:
    """Forward Eyring estimate of T60 from the mean wall reflection."""
    lx, ly, lz = room.dimensions
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    beta_sq = float(np.mean(np.square(room.reflection)))
    if beta_sq <= 0.0:
        return 0.0
    return 0.161 * volume / (surface * -np.log(beta_sq))


def default_image_order(room: Room, t60: float) -> int:
    """Lattice order whose omitted images arrive only after the energy has
    decayed 60 dB: covers propagation paths up to c * T60."""
    reach = SPEED_OF_SOUND * t60
    return int(np.ceil(reach / (2.0 * min(room.dimensions)))) + 1


def image_source_rir(room: Room, src, mic, n_samples: int | None = None) -> np.ndarray:
    """Room impulse response between one source and one microphone.

    Vectorized over the image lattice; images beyond ``max_image_order``
    per axis are dropped.  Returns float64 samples at the room's rate.
    """
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    if not (room.contains(src) and room.contains(mic)):
        raise ValueError("source and microphone must lie inside the room")
    if np.allclose(src, mic):
        raise ValueError("source and microphone positions coincide")
    dims = np.asarray(room.dimensions)
    beta = np.asarray(room.reflection).reshape(3, 2)  # [axis, lo/hi]
    order = room.max_image_order
    if order is None:
        order = default_image_order(room, max(t60_eyring(room), 1e-3))
    fs = room.sample_rate

    rng_r = np.arange(-order, order + 1)
    r = np.stack(np.meshgrid(rng_r, rng_r, rng_r, indexing="ij"), axis=-1).reshape(-1, 3)
    p = np.stack(np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij"), axis=-1).reshape(-1, 3)
    # (n_r, 8, 3) image positions: (1 - 2p) * (src + 2 r L)
    base = src + 2.0 * r * dims  # (n_r, 3)
    sign = 1.0 - 2.0 * p  # (8, 3)
    pos = sign[None, :, :] * base[:, None, :]
    dist = np.linalg.norm(pos - mic, axis=-1).ravel()
    amp = (
        np.prod(beta[:, 0] ** np.abs(r[:, None, :] + p[None, :, :]), axis=-1)
        * np.prod(beta[:, 1] ** np.abs(r)[:, None, :], axis=-1)
    ).ravel()
    amp = amp / (4.0 * np.pi * dist)

    half = (SINC_TAPS - 1) // 2
    delay = dist / SPEED_OF_SOUND * fs  # fractional samples
    if n_samples is None:
        n_samples = int(np.ceil(delay.max())) + half + 1
    # windowed-sinc taps around each delay
    first = np.ceil(delay - half).astype(np.int64)  # (n_img,)
    taps = first[:, None] + np.arange(SINC_TAPS)[None, :]
    t = taps - delay[:, None]  # in (-half-1, half+1)
    window = 0.5 * (1.0 + np.cos(np.pi * t / (half + 0.5)))
    vals = amp[:, None] * np.sinc(t) * window
    keep = (taps >= 0) & (taps < n_samples)
    h = np.bincount(taps[keep], weights=vals[keep], minlength=n_samples)
    return h[:n_samples]


def measure_t60(h: np.ndarray, sample_rate: int, fit_range=(-5.0, -35.0)) -> float:
    """Reverberation time from backward-integrated energy decay.

    Linear fit of the decay curve between the two dB levels of
    ``fit_range``, extrapolated to -60 dB.
    """
    h = np.asarray(h, dtype=float)
    edc = np.cumsum(h[::-1] ** 2)[::-1]
    if edc[0] <= 0:
        raise ValueError("impulse response has no energy")
    db = 10.0 * np.log10(np.maximum(edc / edc[0], 1e-300))
    hi, lo = fit_range
    mask = (db <= hi) & (db >= lo)
    if np.count_nonzero(mask) < 8:
        raise ValueError("decay range too short for a T60 fit")
    t = np.nonzero(mask)[0] / sample_rate
    slope, _ = np.polyfit(t, db[mask], 1)
    if slope >= 0:
        raise ValueError("energy decay is not decreasing")
    return float(-60.0 / slope)


def place_noise_sources(
    room: Room,
    count: int,
    seed: int,
    wall_margin: float = 0.5,
    min_radius: float = 3.0,
    min_angle_deg: float = 20.0,
    max_tries: int = 20000,
) -> np.ndarray:
    """Random noise positions: off the walls, away from the room center in
    the x-y plane, and angularly spread.  Deterministic given the seed."""
    if count < 0:
        raise ValueError("count must be >= 0")
    rng = np.random.default_rng(seed)
    dims = np.asarray(room.dimensions)
    lo = np.full(3, wall_margin)
    hi = dims - wall_margin
    if np.any(lo >= hi):
        raise ValueError("wall margin leaves no feasible region")
    center = dims[:2] / 2.0
    chosen: list[np.ndarray] = []
    angles: list[float] = []
    tries = 0
    while len(chosen) < count:
        if tries >= max_tries:
            raise RuntimeError(
                f"could not place {count} noise sources after {max_tries} draws; "
                "constraints too tight for this room"
            )
        tries += 1
        cand = rng.uniform(lo, hi)
        offset = cand[:2] - center
        if np.hypot(*offset) < min_radius:
            continue
        ang = np.degrees(np.arctan2(offset[1], offset[0]))
        sep = [min(abs(ang - a) % 360.0, 360.0 - abs(ang - a) % 360.0) for a in angles]
        if sep and min(sep) < min_angle_deg:
            continue
        chosen.append(cand)
        angles.append(ang)
    return np.asarray(chosen).reshape(-1, 3)


def pink_noise(rng: np.random.Generator, n_samples: int) -> np.ndarray:
    """Unit-variance 1/f-spectrum noise."""
    spec = np.fft.rfft(rng.standard_normal(n_samples))
    f = np.fft.rfftfreq(n_samples)
    f[0] = f[1]
    x = np.fft.irfft(spec / np.sqrt(f), n_samples)
    return x / np.std(x)


def _convolve_to_mics(signal: np.ndarray, rirs: np.ndarray) -> np.ndarray:
    """Convolve one source signal with per-mic RIRs, truncated to the
    signal length: (T,), (M, L) -> (M, T)."""
    out = fftconvolve(rirs, signal[None, :], axes=-1)
    return out[:, : signal.shape[0]]


def scenario_rirs(scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """All source->mic and noise->mic impulse responses, equal lengths."""
    mics = scenario.array.positions
    groups = []
    for pts in (scenario.source_positions, scenario.noise_positions):
        group = [
            [image_source_rir(scenario.room, p, mic) for mic in mics] for p in pts
        ]
        groups.append(group)
    max_len = max(
        (len(h) for group in groups for per_mic in group for h in per_mic),
        default=1,
    )
    padded = []
    for group in groups:
        if group:
            arr = np.zeros((len(group), mics.shape[0], max_len))
            for i, per_mic in enumerate(group):
                for m, h in enumerate(per_mic):
                    arr[i, m, : len(h)] = h
        else:
            arr = np.zeros((0, mics.shape[0], max_len))
        padded.append(arr)
    return padded[0], padded[1]


def mix(
    scenario: Scenario,
    target_signals: np.ndarray,
    noise_signals: np.ndarray | None = None,
    white_seed: int | None = None,
) -> MixtureBundle:
    """Convolve, calibrate, and sum a scene into a MixtureBundle.

    The first source is the target reference: every other source is scaled
    so its image energy at microphone 0 sits ``isir_db`` below the target's.
    Point noises (generated pink clips unless given) plus a white component
    ``10^white_exponent`` relative to them are scaled to hit ``isnr_db``
    against the summed source images at microphone 0; ``isnr_db = None``
    disables noise entirely.
    """
    targets = np.atleast_2d(np.asarray(target_signals, dtype=float))
    n_src = scenario.n_sources
    if targets.shape[0] != n_src:
        raise ValueError(f"expected {n_src} target signals, got {targets.shape[0]}")
    n_samples = targets.shape[1]
    energies = np.sum(targets**2, axis=1)
    if np.any(energies == 0):
        raise ValueError("zero-energy target signal")

    src_rirs, noise_rirs = scenario_rirs(scenario)
    n_mics = scenario.array.n_channels

    images = np.stack([_convolve_to_mics(targets[n], src_rirs[n]) for n in range(n_src)])
    # interferer gains against the target's image at mic 0
    e_ref = float(np.sum(images[0, 0] ** 2))
    if e_ref == 0:
        raise ValueError("target source has zero image energy at the reference mic")
    gains = np.ones(n_src)
    for k in range(1, n_src):
        e_k = float(np.sum(images[k, 0] ** 2))
        if e_k == 0:
            raise ValueError(f"source {k} has zero image energy at the reference mic")
        gains[k] = np.sqrt(e_ref * 10.0 ** (-scenario.isir_db / 10.0) / e_k)
    images = images * gains[:, None, None]

    rng = np.random.default_rng(scenario.seed if white_seed is None else white_seed)
    sigma_v = 0.0
    white_scale = 0.0
    noise_obs = np.zeros((n_mics, n_samples))
    k_noise = noise_rirs.shape[0]
    if scenario.isnr_db is not None and (k_noise > 0 or scenario.white_exponent is not None):
        if noise_signals is None:
            noise_signals = np.stack(
                [pink_noise(rng, n_samples) for _ in range(k_noise)]
            ) if k_noise else np.zeros((0, n_samples))
        else:
            noise_signals = np.atleast_2d(np.asarray(noise_signals, dtype=float))
            if noise_signals.shape[0] != k_noise:
                raise ValueError(f"expected {k_noise} noise signals")
        if k_noise:
            v_point = np.sum(
                [_convolve_to_mics(noise_signals[k], noise_rirs[k]) for k in range(k_noise)],
                axis=0,
            )
        else:
            v_point = np.zeros((n_mics, n_samples))
        v_white = rng.standard_normal((n_mics, n_samples))
        e_point = float(np.sum(v_point[0] ** 2))
        e_white = float(np.sum(v_white[0] ** 2))
        if e_point > 0:
            white_scale = np.sqrt(e_point / e_white)
        else:
            white_scale = 1.0  # no point noise: white carries the budget alone
        v = v_point + 10.0**scenario.white_exponent * white_scale * v_white
        e_signal = float(np.sum(np.sum(images[:, 0, :], axis=0) ** 2))
        e_v = float(np.sum(v[0] ** 2))
        if e_v == 0:
            raise ValueError("noise observation has zero energy at the reference mic")
        sigma_v = np.sqrt(e_signal * 10.0 ** (-scenario.isnr_db / 10.0) / e_v)
        noise_obs = sigma_v * v

    observations = images.sum(axis=0) + noise_obs
    return MixtureBundle(
        observations=observations,
        source_images=images,
        reference_images=images[:, 0, :],
        noise_observation=noise_obs,
        sample_rate=scenario.room.sample_rate,
        gains={
            "source_gains": gains.tolist(),
            "sigma_v": float(sigma_v),
            "white_scale": float(white_scale),
        },
    )
