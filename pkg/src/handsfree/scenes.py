"""Synthetic hands-free scene generation.

A scene mixes a reverberant near-end talker, a loudspeaker echo (far-end
signal through a nonlinearity and a room impulse response) and background
noise at requested SER/SNR:

    y(n) = s'(n) + d(n) + n(n),   d = h1 * f_NL(x),   s' = h2 * s

with h1, h2 generated from one matched room. Training augmentations drop
the near-end or far-end component or substitute the dry near-end signal
for the reverberant one. Everything is reproducible from (config, seed);
dataset scenes derive independent RNG streams from (dataset_seed, index).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, lfilter

from handsfree.dsp import DEFAULT_SAMPLE_RATE, Waveform, power, read_wav, write_wav
from handsfree.errors import ConfigError, DataError
from handsfree.rir import RoomSpec, generate_rir_pair, sample_room

AUGMENTATIONS = ("none", "drop_nearend", "drop_farend", "dry_nearend")

# fraction of dataset scenes per augmentation tag, floor-rounded
DROP_NEAREND_FRACTION = 0.0625
DROP_FAREND_FRACTION = 0.0625
DRY_NEAREND_FRACTION = 0.10


@dataclass(frozen=True)
class NonlinearitySpec:
    """Memoryless loudspeaker distortion x'(n) = f_NL(x(n)).

    Kinds:
      identity            bit-exact passthrough
      hard_clip           clip at +-threshold (relative=True scales max|x|)
      soft_clip_arctan    y = (2/pi) * atan(pi/2 * scale * x) / scale
      memoryless_sigmoid  odd saturating map
                          y = sat * (2 / (1 + exp(-slope * b(v))) - 1)
                          with b(v) = pre_linear*v - pre_quadratic*sign(v)*v^2,
                          optionally preceded by a hard clip at
                          clip * max|x| (the default distortion chain).
    """

    kind: str = "memoryless_sigmoid"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("identity", "hard_clip", "soft_clip_arctan", "memoryless_sigmoid"):
            raise ConfigError(f"unknown nonlinearity kind {self.kind!r}")
        p = dict(self.params)
        if self.kind == "hard_clip":
            if p.get("threshold", 0.8) <= 0:
                raise ConfigError("hard_clip threshold must be positive")
        elif self.kind == "soft_clip_arctan":
            if p.get("scale", 1.0) <= 0:
                raise ConfigError("soft_clip_arctan scale must be positive")
        elif self.kind == "memoryless_sigmoid":
            if p.get("saturation", 1.0) <= 0 or p.get("slope", 4.0) <= 0:
                raise ConfigError("memoryless_sigmoid saturation and slope must be positive")
            if p.get("pre_quadratic", 0.3) < 0:
                raise ConfigError("memoryless_sigmoid pre_quadratic must be >= 0")
            clip = p.get("clip", 0.8)
            if clip is not None and clip <= 0:
                raise ConfigError("memoryless_sigmoid clip must be positive or None")

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj) -> "NonlinearitySpec":
        return cls(obj["kind"], dict(obj.get("params", {})))


def apply_nonlinearity(x: Waveform, spec: NonlinearitySpec) -> Waveform:
    """Pointwise loudspeaker distortion; identity returns the input bit-exact."""
    if spec.kind == "identity":
        return x
    v = x.samples
    p = spec.params
    if spec.kind == "hard_clip":
        thr = p.get("threshold", 0.8)
        if p.get("relative", False):
            peak = float(np.max(np.abs(v))) if v.size else 0.0
            thr = thr * peak if peak > 0 else thr
        return Waveform(np.clip(v, -thr, thr), x.sample_rate_hz)
    if spec.kind == "soft_clip_arctan":
        s = p.get("scale", 1.0)
        return Waveform(2.0 / np.pi * np.arctan(0.5 * np.pi * s * v) / s, x.sample_rate_hz)
    # memoryless_sigmoid
    sat = p.get("saturation", 1.0)
    slope = p.get("slope", 4.0)
    a = p.get("pre_linear", 1.5)
    q = p.get("pre_quadratic", 0.3)
    clip = p.get("clip", 0.8)
    if clip is not None and v.size:
        peak = float(np.max(np.abs(v)))
        if peak > 0:
            v = np.clip(v, -clip * peak, clip * peak)
    b = a * v - q * np.sign(v) * np.square(v)
    return Waveform(sat * (2.0 / (1.0 + np.exp(-slope * b)) - 1.0), x.sample_rate_hz)


@dataclass(frozen=True)
class SceneConfig:
    """Recipe for one scene: levels, room, distortion, augmentation, seed."""

    ser_db: float = 0.0
    snr_db: float = 15.0
    room: RoomSpec = field(default_factory=RoomSpec)
    nonlinearity: NonlinearitySpec = field(default_factory=NonlinearitySpec)
    duration_s: float = 30.0
    augmentation: str = "none"
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be positive")
        if self.augmentation not in AUGMENTATIONS:
            raise ConfigError(
                f"augmentation must be one of {AUGMENTATIONS}, got {self.augmentation!r}"
            )


@dataclass(frozen=True)
class SceneBundle:
    """One mixed scene plus its ground-truth components.

    ``mic == target + echo + noise`` holds sample-exact; ``target`` is the
    reverberant near-end (dry under dry_nearend, zeros under drop_nearend).
    ``achieved_*`` report the scaling-stage power ratios measured against
    the reverberant near-end, before any augmentation zeroing.
    """

    mic: Waveform
    farend: Waveform
    echo: Waveform
    near_reverb: Waveform
    near_dry: Waveform
    noise: Waveform
    target: Waveform
    achieved_ser_db: float
    achieved_snr_db: float
    config: SceneConfig


def _crop(wave: Waveform, n: int, rng: np.random.Generator, what: str) -> Waveform:
    if len(wave) < n:
        raise DataError(f"{what} signal of {len(wave)} samples shorter than scene ({n})")
    off = int(rng.integers(0, len(wave) - n + 1))
    return Waveform(wave.samples[off : off + n], wave.sample_rate_hz)


def mix_scene(
    s: Waveform,
    x: Waveform,
    noise: Waveform,
    cfg: SceneConfig,
    rir_pair=None,
) -> SceneBundle:
    """Assemble one scene at the requested SER/SNR (each within 0.1 dB).

    ``rir_pair`` may carry precomputed (h1, h2) to skip the image-source
    run; otherwise they are generated from ``cfg.room``.
    """
    fs = s.sample_rate_hz
    if x.sample_rate_hz != fs or noise.sample_rate_hz != fs:
        raise DataError("scene components must share one sample rate")
    n = int(round(cfg.duration_s * fs))
    rng = np.random.default_rng([cfg.seed, 0x5CE0E])
    s_dry = _crop(s, n, rng, "near-end")
    x_cut = _crop(x, n, rng, "far-end")
    n_cut = _crop(noise, n, rng, "noise")

    h1, h2 = rir_pair if rir_pair is not None else generate_rir_pair(cfg.room, fs)
    x_nl = apply_nonlinearity(x_cut, cfg.nonlinearity)
    d_raw = fftconvolve(x_nl.samples, h1.samples)[:n]
    s_rev = fftconvolve(s_dry.samples, h2.samples)[:n]

    p_ref = float(np.mean(np.square(s_rev)))
    p_echo = float(np.mean(np.square(d_raw)))
    p_noise = float(np.mean(np.square(n_cut.samples)))
    if p_ref == 0.0:
        raise DataError("silent near-end component; requested SER/SNR unachievable")
    if p_echo == 0.0:
        raise DataError("silent echo component; requested SER unachievable")
    if p_noise == 0.0:
        raise DataError("silent noise component; requested SNR unachievable")

    d = d_raw * np.sqrt(p_ref / (p_echo * 10.0 ** (cfg.ser_db / 10.0)))
    w = n_cut.samples * np.sqrt(p_ref / (p_noise * 10.0 ** (cfg.snr_db / 10.0)))
    achieved_ser = 10.0 * np.log10(p_ref / np.mean(np.square(d)))
    achieved_snr = 10.0 * np.log10(p_ref / np.mean(np.square(w)))

    if cfg.augmentation == "drop_nearend":
        s_comp = np.zeros(n)
    elif cfg.augmentation == "dry_nearend":
        s_comp = s_dry.samples
    else:
        s_comp = s_rev
    if cfg.augmentation == "drop_farend":
        d = np.zeros(n)

    y = s_comp + d + w
    return SceneBundle(
        mic=Waveform(y, fs),
        farend=x_cut,
        echo=Waveform(d, fs),
        near_reverb=Waveform(s_rev, fs),
        near_dry=s_dry,
        noise=Waveform(w, fs),
        target=Waveform(s_comp, fs),
        achieved_ser_db=float(achieved_ser),
        achieved_snr_db=float(achieved_snr),
        config=cfg,
    )


def synthesize_speech_like(
    duration_s: float, seed: int, sample_rate_hz: int = DEFAULT_SAMPLE_RATE
) -> Waveform:
    """Deterministic speech-shaped test signal.

    Alternates voiced harmonic segments (pitch + two formant resonators),
    fricative-like bursts and short pauses, so level statistics and band
    envelopes behave enough like speech for SER/SNR scaling, adaptive
    filters and intelligibility metrics. Not a corpus substitute.
    """
    rng = np.random.default_rng([seed, 0x5BEEC])
    fs = sample_rate_hz
    n = int(round(duration_s * fs))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        seg = int(rng.uniform(0.12, 0.35) * fs)
        seg = min(seg, n - pos)
        kind = rng.choice(("voiced", "voiced", "voiced", "unvoiced", "pause"))
        if kind == "voiced":
            f0 = rng.uniform(85.0, 230.0)
            t = np.arange(seg) / fs
            vib = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4.0, 7.0) * t)
            sig = np.zeros(seg)
            for k in range(1, 11):
                f = k * f0
                if f > 0.45 * fs:
                    break
                sig += np.sin(2 * np.pi * f * vib * t + rng.uniform(0, 2 * np.pi)) / k
            for fc in (rng.uniform(350, 900), rng.uniform(1100, 2600)):
                r = 0.97
                w0 = 2 * np.pi * fc / fs
                sig = lfilter([1.0], [1.0, -2 * r * np.cos(w0), r * r], sig)
            sig *= rng.uniform(0.5, 1.0)
        elif kind == "unvoiced":
            sig = rng.standard_normal(seg)
            sig = lfilter([1.0, -0.95], [1.0], sig) * rng.uniform(0.05, 0.12)
        else:
            sig = np.zeros(seg)
        env = np.ones(seg)
        ramp = min(seg // 4, int(0.02 * fs))
        if ramp > 0:
            env[:ramp] = np.linspace(0.0, 1.0, ramp)
            env[-ramp:] = np.linspace(1.0, 0.0, ramp)
        out[pos : pos + seg] = sig * env
        pos += seg
    rms = np.sqrt(np.mean(np.square(out)))
    if rms > 0:
        out *= 0.1 / rms
    return Waveform(out, fs)


def synthesize_noise(
    duration_s: float,
    seed: int,
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE,
    kind: str = "pink",
) -> Waveform:
    """Deterministic background-noise test signal (pink or white)."""
    rng = np.random.default_rng([seed, 0x4015E])
    n = int(round(duration_s * sample_rate_hz))
    w = rng.standard_normal(n)
    if kind == "pink":
        # Kellet-style pinking filter cascade
        b = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
        a = [1.0, -2.494956002, 2.017265875, -0.522189400]
        w = lfilter(b, a, w)
    elif kind != "white":
        raise ConfigError(f"unknown noise kind {kind!r}")
    w = w / np.sqrt(np.mean(np.square(w))) * 0.05
    return Waveform(w, sample_rate_hz)


def make_synthetic_pool(
    out_dir,
    n_files: int,
    kind: str,
    duration_s: float,
    seed: int,
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE,
) -> list:
    """Write a pool of deterministic source WAVs; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_files):
        if kind == "speech":
            w = synthesize_speech_like(duration_s, seed * 1_000_003 + i, sample_rate_hz)
        else:
            w = synthesize_noise(duration_s, seed * 1_000_003 + i, sample_rate_hz, kind)
        p = out_dir / f"{kind}_{i:04d}.wav"
        write_wav(p, w)
        paths.append(str(p))
    return paths


@dataclass(frozen=True)
class SceneRanges:
    """Sampling ranges for dataset generation (paper defers these to its
    data-pipeline reference; treat as configuration)."""

    ser_db: tuple = (-10.0, 10.0)
    snr_db: tuple = (0.0, 30.0)
    rt60_s: tuple = (0.2, 0.7)
    duration_s: float = 30.0
    nonlinearity: NonlinearitySpec = field(default_factory=NonlinearitySpec)

    def to_json(self) -> dict:
        d = asdict(self)
        d["nonlinearity"] = self.nonlinearity.to_json()
        return d


def plan_augmentations(n_scenes: int, seed: int) -> list:
    """Deterministic augmentation tags: floor(6.25%) drop_nearend,
    floor(6.25%) drop_farend, floor(10%) dry_nearend, remainder none,
    positions shuffled by the dataset seed."""
    n_dn = int(n_scenes * DROP_NEAREND_FRACTION)
    n_df = int(n_scenes * DROP_FAREND_FRACTION)
    n_dry = int(n_scenes * DRY_NEAREND_FRACTION)
    tags = (
        ["drop_nearend"] * n_dn
        + ["drop_farend"] * n_df
        + ["dry_nearend"] * n_dry
        + ["none"] * (n_scenes - n_dn - n_df - n_dry)
    )
    rng = np.random.default_rng([seed, 0xA06])
    rng.shuffle(tags)
    return tags


def generate_dataset(
    n_scenes: int,
    ranges: SceneRanges,
    out_dir,
    seed: int,
    speech_pool,
    noise_pool,
    jobs: int = 1,
) -> Path:
    """Generate scenes and WAVs plus a JSON-lines manifest; returns its path.

    Scene i derives its RNG stream from (seed, i), so regeneration with the
    same arguments is byte-identical and scenes can be built in parallel
    (``jobs`` worker threads; outputs are independent of scheduling).
    """
    speech_pool = [str(p) for p in speech_pool]
    noise_pool = [str(p) for p in noise_pool]
    if n_scenes > 0 and (not speech_pool or not noise_pool):
        raise DataError("speech and noise pools must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tags = plan_augmentations(n_scenes, seed)

    def build(i):
        return _build_scene(i, tags[i], ranges, out_dir, seed, speech_pool, noise_pool)

    if jobs > 1 and n_scenes > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(build, range(n_scenes)))
    else:
        records = [build(i) for i in range(n_scenes)]
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def _build_scene(i, tag, ranges, out_dir, seed, speech_pool, noise_pool) -> dict:
    rng = np.random.default_rng([seed, i])
    near_path = speech_pool[int(rng.integers(len(speech_pool)))]
    far_path = speech_pool[int(rng.integers(len(speech_pool)))]
    noise_path = noise_pool[int(rng.integers(len(noise_pool)))]
    room = sample_room(rng, rt60_range=ranges.rt60_s)
    cfg = SceneConfig(
        ser_db=float(rng.uniform(*ranges.ser_db)),
        snr_db=float(rng.uniform(*ranges.snr_db)),
        room=room,
        nonlinearity=ranges.nonlinearity,
        duration_s=ranges.duration_s,
        augmentation=tag,
        seed=int(rng.integers(0, 2**31 - 1)),
    )
    bundle = mix_scene(
        read_wav(near_path), read_wav(far_path), read_wav(noise_path), cfg
    )
    scene_id = f"scene_{i:05d}"
    scene_dir = out_dir / scene_id
    scene_dir.mkdir(exist_ok=True)
    paths = {}
    for name, wave in (
        ("mic", bundle.mic),
        ("farend", bundle.farend),
        ("near_dry", bundle.near_dry),
        ("near_reverb", bundle.near_reverb),
        ("echo", bundle.echo),
        ("noise", bundle.noise),
        ("target", bundle.target),
    ):
        p = scene_dir / f"{name}.wav"
        write_wav(p, wave)
        paths[name] = str(p.relative_to(out_dir))
    return {
        "id": scene_id,
        "paths": paths,
        "ser_db": round(cfg.ser_db, 6),
        "snr_db": round(cfg.snr_db, 6),
        "rt60_s": round(room.rt60, 6),
        "room_dims_m": [round(v, 6) for v in room.dimensions],
        "nonlinearity": cfg.nonlinearity.to_json(),
        "augmentation": tag,
        "seed": cfg.seed,
    }


def read_manifest(path) -> list:
    """Parse a JSON-lines scene manifest."""
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
