"""Shoebox room impulse responses via the image source method.

Wall absorption is derived from the requested reverberation time with
Eyring's formula (frequency independent, uniform over all six surfaces).
Image contributions are placed at the nearest sample; responses are
truncated at min(1.5 * rt60, 1 s). The construction is fully deterministic:
the RoomSpec seed only governs sampling of fields the caller left open
(used by the dataset generator), never the image sum itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from handsfree.dsp import DEFAULT_SAMPLE_RATE, Waveform
from handsfree.errors import ConfigError

SPEED_OF_SOUND = 343.0
MIN_SOURCE_MIC_DISTANCE = 0.05
MAX_RIR_SECONDS = 1.0


@dataclass(frozen=True)
class RoomSpec:
    """One shoebox room with a loudspeaker, a near-end talker and a mic."""

    dimensions: tuple = (6.0, 5.0, 3.0)
    rt60: float = 0.4
    max_reflection_order: int = 40
    source_pos: tuple = (1.5, 2.0, 1.2)
    mic_pos: tuple = (3.5, 2.5, 1.4)
    nearend_pos: tuple = (4.5, 3.5, 1.6)
    seed: int = 0

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=np.float64)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ConfigError(f"room dimensions must be 3 positive lengths, got {self.dimensions}")
        if self.rt60 <= 0:
            raise ConfigError(f"rt60 must be positive, got {self.rt60}")
        if self.max_reflection_order < 0:
            raise ConfigError("max_reflection_order must be >= 0")
        for name in ("source_pos", "mic_pos", "nearend_pos"):
            p = np.asarray(getattr(self, name), dtype=np.float64)
            if p.shape != (3,):
                raise ConfigError(f"{name} must be a 3-vector")
            if np.any(p <= 0) or np.any(p >= dims):
                raise ConfigError(f"{name}={tuple(p)} not strictly inside room {tuple(dims)}")


def eyring_absorption(dimensions, rt60: float) -> float:
    """Uniform surface absorption coefficient for a target rt60 (Eyring)."""
    lx, ly, lz = (float(v) for v in dimensions)
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    alpha = 1.0 - np.exp(-0.161 * volume / (surface * rt60))
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"rt60={rt60} implies absorption {alpha} outside (0, 1]")
    return float(alpha)


def _fibonacci_sphere(n: int) -> np.ndarray:
    """Deterministic quasi-uniform direction set on the unit sphere."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + np.sqrt(5.0)) * i
    return np.stack(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)], axis=1
    )


def _specular_t60(alpha: float, dims, length_s: float, fit_db=(-5.0, -25.0)) -> float:
    """Schroeder T60 predicted by the specular bounce-rate model.

    A purely specular shoebox decays direction by direction at
    (1-alpha)**(c*t*sum(|u_i|/L_i)); integrating over directions gives a
    slower (and slightly sagging) Schroeder curve than Eyring's diffuse
    prediction. The model shares the truncation length and fit range used
    on real responses so calibration inverts what is actually measured.
    """
    u = np.abs(_fibonacci_sphere(512))
    rate = SPEED_OF_SOUND * (u / np.asarray(dims, dtype=np.float64)).sum(axis=1)
    t = np.linspace(0.0, length_s, 600)
    energy = np.exp(np.log1p(-alpha) * rate[None, :] * t[:, None]).mean(axis=1)
    edc = np.cumsum(energy[::-1])[::-1]
    curve = 10.0 * np.log10(np.maximum(edc / edc[0], 1e-30))
    hi, lo = fit_db
    sel = np.flatnonzero((curve <= hi) & (curve >= lo))
    if sel.size < 4:
        return float("inf")
    slope, _ = np.polyfit(t[sel], curve[sel], 1)
    return float(-60.0 / slope)


def calibrated_absorption(dimensions, rt60: float) -> float:
    """Absorption whose *specular* Schroeder decay matches the target rt60.

    Eyring's formula under-absorbs for a specular image-source field (its
    mean-bounce-rate argument ignores that slow axial directions dominate
    late energy), overshooting measured T60 by ~50%. Starting from the
    Eyring value, bisect the specular-model prediction onto the target.
    """
    length_s = min(1.5 * rt60, MAX_RIR_SECONDS)
    lo = eyring_absorption(dimensions, rt60)
    hi = min(lo * 3.0, 0.999)
    if _specular_t60(lo, dimensions, length_s) < rt60:
        return float(lo)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _specular_t60(mid, dimensions, length_s) > rt60:
            lo = mid
        else:
            hi = mid
    return float(0.5 * (lo + hi))


def generate_rir(
    room: RoomSpec,
    src,
    mic,
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE,
) -> Waveform:
    """Image-source impulse response from ``src`` to ``mic``.

    Amplitudes follow the 1/(4*pi*r) free-field law times the reflection
    coefficient raised to the number of wall bounces. Source and mic must
    be at least 5 cm apart.
    """
    dims = np.asarray(room.dimensions, dtype=np.float64)
    src = np.asarray(src, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    for name, p in (("src", src), ("mic", mic)):
        if np.any(p <= 0) or np.any(p >= dims):
            raise ConfigError(f"{name} position {tuple(p)} outside room {tuple(dims)}")
    direct = float(np.linalg.norm(src - mic))
    if direct < MIN_SOURCE_MIC_DISTANCE:
        raise ConfigError(
            f"source/mic separation {direct * 100:.1f} cm below "
            f"{MIN_SOURCE_MIC_DISTANCE * 100:.0f} cm minimum"
        )

    alpha = calibrated_absorption(dims, room.rt60)
    beta = np.sqrt(1.0 - alpha)
    length_s = min(1.5 * room.rt60, MAX_RIR_SECONDS)
    n_taps = max(int(round(length_s * sample_rate_hz)), int(direct / SPEED_OF_SOUND * sample_rate_hz) + 2)
    max_dist = n_taps / sample_rate_hz * SPEED_OF_SOUND

    # per-axis image index range needed to cover max_dist
    n_range = [int(np.ceil((max_dist + d) / (2.0 * d))) for d in dims]
    grids = [np.arange(-n, n + 1) for n in n_range]
    nx, ny, nz = np.meshgrid(*grids, indexing="ij")
    order_cap = room.max_reflection_order

    # Deterministic per-image sign decorrelation. A purely positive impulse
    # train lets dense late arrivals add coherently within a sample bin,
    # inflating the decay ~35% past the target; flipping signs by a hash of
    # the image lattice index restores the incoherent energy law without
    # introducing seed dependence. The direct path keeps its positive sign.
    off = np.uint64(max(n_range) + 1)
    h = np.zeros(n_taps)
    for px in (0, 1):
        for py in (0, 1):
            for pz in (0, 1):
                img = np.empty(nx.shape + (3,))
                img[..., 0] = (1 - 2 * px) * src[0] + 2.0 * nx * dims[0]
                img[..., 1] = (1 - 2 * py) * src[1] + 2.0 * ny * dims[1]
                img[..., 2] = (1 - 2 * pz) * src[2] + 2.0 * nz * dims[2]
                bounces = (
                    np.abs(nx - px) + np.abs(nx)
                    + np.abs(ny - py) + np.abs(ny)
                    + np.abs(nz - pz) + np.abs(nz)
                )
                dist = np.linalg.norm(img - mic, axis=-1)
                idx = np.round(dist / SPEED_OF_SOUND * sample_rate_hz).astype(np.int64)
                keep = (idx < n_taps) & (bounces <= order_cap)
                amp = beta ** bounces[keep] / (4.0 * np.pi * np.maximum(dist[keep], 1e-2))
                with np.errstate(over="ignore"):
                    key = (
                        (nx[keep] + np.int64(off)).astype(np.uint64) * np.uint64(73856093)
                        ^ (ny[keep] + np.int64(off)).astype(np.uint64) * np.uint64(19349663)
                        ^ (nz[keep] + np.int64(off)).astype(np.uint64) * np.uint64(83492791)
                        ^ np.uint64(px + 2 * py + 4 * pz) * np.uint64(2654435761)
                    )
                    key *= np.uint64(0x9E3779B97F4A7C15)
                sign = np.where(bounces[keep] == 0, 1.0, 1.0 - 2.0 * ((key >> np.uint64(17)) & np.uint64(1)).astype(np.float64))
                np.add.at(h, idx[keep], amp * sign)
    return Waveform(h, sample_rate_hz)


def generate_rir_pair(
    room: RoomSpec, sample_rate_hz: int = DEFAULT_SAMPLE_RATE
) -> tuple[Waveform, Waveform]:
    """Matched-room RIR pair: loudspeaker->mic (h1) and talker->mic (h2).

    Both share geometry and absorption; only the source position differs.
    A source placed under 5 cm from the microphone is rejected (the 1/r
    amplitude law degenerates there); the two sources may coincide.
    """
    h1 = generate_rir(room, room.source_pos, room.mic_pos, sample_rate_hz)
    h2 = generate_rir(room, room.nearend_pos, room.mic_pos, sample_rate_hz)
    return h1, h2


def schroeder_rt60(h: Waveform, fit_db=(-5.0, -25.0)) -> float:
    """Reverberation time from backward-integrated energy decay.

    Fits a line to the Schroeder curve between ``fit_db`` levels and
    extrapolates to -60 dB. Used as the decay oracle in tests and to
    validate generated responses.
    """
    e = np.square(h.samples)
    edc = np.cumsum(e[::-1])[::-1]
    if edc[0] <= 0:
        raise ConfigError("cannot fit decay of an all-zero impulse response")
    curve = 10.0 * np.log10(np.maximum(edc / edc[0], 1e-30))
    hi, lo = fit_db
    sel = np.flatnonzero((curve <= hi) & (curve >= lo))
    if sel.size < 8:
        raise ConfigError("decay range too short for a Schroeder fit")
    t = sel / h.sample_rate_hz
    slope, _ = np.polyfit(t, curve[sel], 1)
    if slope >= 0:
        raise ConfigError("non-decaying impulse response")
    return float(-60.0 / slope)


def sample_room(rng: np.random.Generator, rt60_range=(0.2, 0.7), dim_ranges=None) -> RoomSpec:
    """Draw a random but valid RoomSpec for dataset generation."""
    dim_ranges = dim_ranges or ((3.0, 8.0), (3.0, 6.0), (2.2, 3.5))
    dims = np.array([rng.uniform(lo, hi) for lo, hi in dim_ranges])
    margin = 0.3

    def draw_pos():
        return tuple(rng.uniform(margin, d - margin) for d in dims)

    mic = np.asarray(draw_pos())
    while True:
        src = np.asarray(draw_pos())
        near = np.asarray(draw_pos())
        if (
            np.linalg.norm(src - mic) >= 0.3
            and np.linalg.norm(near - mic) >= 0.3
        ):
            break
    return RoomSpec(
        dimensions=tuple(dims),
        rt60=float(rng.uniform(*rt60_range)),
        max_reflection_order=40,
        source_pos=tuple(src),
        mic_pos=tuple(mic),
        nearend_pos=tuple(near),
        seed=int(rng.integers(0, 2**31 - 1)),
    )
