"""Synthetic indoor scene and channel generator.

Produces time-synchronized (RGB image, CSI) pairs from a parametric room
with a walking pedestrian. The channel is a geometric multipath model:

* line-of-sight (LOS) between the transmit and receive arrays, attenuated
  by a fixed dB amount whenever the pedestrian disc intersects the LOS
  segment in the floor plan,
* four first-order wall reflections (image method), scaled by a common
  reflection coefficient,
* one scatter path TX -> pedestrian -> RX whose gain follows
  radius / (d1 * d2),
* additive circular complex Gaussian noise scaled per sample so the
  noise-to-signal power ratio matches the configured SNR.

Arrays are uniform linear arrays oriented along the room's y axis; all
geometry is evaluated in the 2-D floor plan (antenna heights are equal).
Every sample is a pure function of (config, sample index), so generation
can be parallelized or re-run bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np

SPEED_OF_LIGHT = 299792458.0

Segment = Tuple[Tuple[float, float], Tuple[float, float]]


def default_walk_paths(room_size: Tuple[float, float]) -> Tuple[Segment, ...]:
    """Four standard walk segments, scaled to the room.

    All four interact with the default LOS line (mid-room horizontal): two
    cross it perpendicularly, two cut it at shallow angles so the obstacle
    spends long stretches on and off the direct path.
    """
    w, d = room_size
    return (
        ((w / 3.0, d / 6.0), (w / 3.0, 5.0 * d / 6.0)),
        ((2.0 * w / 3.0, d / 5.0), (2.0 * w / 3.0, 4.0 * d / 5.0)),
        ((w / 6.0, 11.0 * d / 30.0), (5.0 * w / 6.0, 19.0 * d / 30.0)),
        ((w / 6.0, 7.0 * d / 15.0), (5.0 * w / 6.0, 3.0 * d / 5.0)),
    )


@dataclass
class SceneConfig:
    """Parametric description of the room, radio link and pedestrian walk.

    Defaults are desk-scale: 64 subcarriers and natively rendered 96x96
    images. `paper_scale()` switches to 256 subcarriers and 480x640
    camera-sized images that exercise the downsampling path.
    """

    room_size: Tuple[float, float] = (6.0, 6.0)
    ap_position: Tuple[float, float, float] = (0.5, 3.0, 1.0)
    sta_position: Tuple[float, float, float] = (5.5, 3.0, 1.0)
    n_tx: int = 3
    n_rx: int = 4
    antenna_spacing: float = 0.5  # in carrier wavelengths
    carrier_freq_hz: float = 5.21e9
    n_subcarriers: int = 64
    subcarrier_spacing_hz: float = 312.5e3
    pedestrian_radius: float = 0.3
    pedestrian_speed: float = 1.0
    path_id: Union[int, str] = "all"
    paths: Optional[Tuple[Segment, ...]] = None
    sample_rate_hz: float = 20.0
    snr_db: float = 25.0
    wall_reflection_coeff: float = 0.4
    blockage_atten_db: float = 10.0
    image_height: int = 96
    image_width: int = 96
    rng_seed: int = 0

    def __post_init__(self):
        if self.paths is None:
            self.paths = default_walk_paths(self.room_size)
        self.validate()

    def validate(self) -> None:
        w, d = self.room_size
        if w <= 0 or d <= 0:
            raise ValueError(f"room_size must be positive, got {self.room_size}")
        if self.n_tx < 1:
            raise ValueError(f"n_tx must be >= 1, got {self.n_tx}")
        if self.n_rx < 1:
            raise ValueError(f"n_rx must be >= 1, got {self.n_rx}")
        if self.n_subcarriers < 2:
            raise ValueError(f"n_subcarriers must be >= 2, got {self.n_subcarriers}")
        if not math.isfinite(self.snr_db):
            raise ValueError(f"snr_db must be finite, got {self.snr_db}")
        if self.antenna_spacing <= 0:
            raise ValueError("antenna_spacing must be positive")
        if self.carrier_freq_hz <= 0 or self.subcarrier_spacing_hz <= 0:
            raise ValueError("carrier_freq_hz and subcarrier_spacing_hz must be positive")
        if self.pedestrian_radius < 0:
            raise ValueError("pedestrian_radius must be >= 0")
        if self.pedestrian_speed <= 0:
            raise ValueError("pedestrian_speed must be positive")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if not (0.0 <= self.wall_reflection_coeff < 1.0):
            raise ValueError("wall_reflection_coeff must be in [0, 1)")
        if self.blockage_atten_db < 0:
            raise ValueError("blockage_atten_db must be >= 0")
        if self.image_height < 8 or self.image_width < 8:
            raise ValueError("image dimensions must be >= 8 pixels")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be >= 0")
        if len(self.paths) != 4:
            raise ValueError(f"exactly 4 walk paths required, got {len(self.paths)}")
        for i, (start, end) in enumerate(self.paths):
            for x, y in (start, end):
                if not (0.0 <= x <= w and 0.0 <= y <= d):
                    raise ValueError(
                        f"path {i} endpoint ({x}, {y}) outside room {self.room_size}"
                    )
        if isinstance(self.path_id, str):
            if self.path_id != "all":
                raise ValueError(f"path_id must be 0..3 or 'all', got {self.path_id!r}")
        elif not 0 <= int(self.path_id) <= 3:
            raise ValueError(f"path_id must be 0..3 or 'all', got {self.path_id}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    def active_path_ids(self) -> Tuple[int, ...]:
        if self.path_id == "all":
            return (0, 1, 2, 3)
        return (int(self.path_id),)

    @classmethod
    def paper_scale(cls, **overrides) -> "SceneConfig":
        base = dict(n_subcarriers=256, image_height=480, image_width=640)
        base.update(overrides)
        return cls(**base)


@dataclass
class SceneState:
    """Geometric state of the scene at one sample instant."""

    t: int
    pedestrian_xy: Tuple[float, float]
    image: Optional[np.ndarray] = None  # uint8, (image_height, image_width, 3)


@dataclass
class CsiSample:
    """Complex channel tensor over subcarriers, shape (K, N, M)."""

    t: int
    csi: np.ndarray


def segment_position(start, end, speed: float, sample_rate_hz: float, t: int):
    """Clamped linear motion along a segment: position at sample index t."""
    sx, sy = start
    ex, ey = end
    length = math.hypot(ex - sx, ey - sy)
    if length <= 0:
        raise ValueError("walk segment must have positive length")
    dist = min(speed * t / sample_rate_hz, length)
    return (sx + dist * (ex - sx) / length, sy + dist * (ey - sy) / length)


def pedestrian_position(config: SceneConfig, t: int) -> Tuple[float, float]:
    """Pedestrian position at sample index t on the configured single path.

    Walks from the segment start at the configured speed and clamps at the
    end point. Requires an integer path_id; the round-robin 'all' schedule
    lives in generate_dataset.
    """
    if t < 0:
        raise ValueError(f"sample index must be >= 0, got {t}")
    if config.path_id == "all":
        raise ValueError("pedestrian_position needs a single path_id, not 'all'")
    start, end = config.paths[int(config.path_id)]
    return segment_position(start, end, config.pedestrian_speed, config.sample_rate_hz, t)


def _cycled_position(config: SceneConfig, path_index: int, local_t: int):
    """Ping-pong walk along a path: start -> end -> start, repeating."""
    start, end = config.paths[path_index]
    sx, sy = start
    ex, ey = end
    length = math.hypot(ex - sx, ey - sy)
    if length <= 0:
        raise ValueError("walk segment must have positive length")
    dist = config.pedestrian_speed * local_t / config.sample_rate_hz
    dist = math.fmod(dist, 2.0 * length)
    if dist > length:
        dist = 2.0 * length - dist
    return (sx + dist * (ex - sx) / length, sy + dist * (ey - sy) / length)


def _steering_vector(n: int, spacing_wavelengths: float, direction_xy) -> np.ndarray:
    """ULA steering vector for array elements along +y, unit-modulus entries."""
    uy = direction_xy[1]
    idx = np.arange(n)
    return np.exp(-2j * np.pi * spacing_wavelengths * idx * uy)


def _unit(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    return v / np.linalg.norm(v)


def _point_segment_distance(p, a, b) -> float:
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    tau = 0.0 if denom == 0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + tau * ab)))


def pedestrian_blocks_los(config: SceneConfig, pedestrian_xy) -> bool:
    """True when the pedestrian disc intersects the TX-RX floor-plan segment."""
    if config.pedestrian_radius <= 0:
        return False
    dist = _point_segment_distance(
        pedestrian_xy, config.ap_position[:2], config.sta_position[:2]
    )
    return dist <= config.pedestrian_radius


def _propagation_paths(config: SceneConfig, pedestrian_xy):
    """Gains, delays and unit departure/arrival directions of every path.

    Returns (gains, delays, tx_dirs, rx_dirs) as stacked arrays; tx_dirs
    point away from the TX, rx_dirs point into the RX.
    """
    tx = np.asarray(config.ap_position[:2], dtype=float)
    rx = np.asarray(config.sta_position[:2], dtype=float)
    d_los = float(np.linalg.norm(rx - tx))
    if d_los <= 0:
        raise ValueError("TX and RX positions coincide (zero LOS path length)")

    gains = []
    delays = []
    tx_dirs = []
    rx_dirs = []

    los_gain = 1.0 / d_los
    if pedestrian_blocks_los(config, pedestrian_xy):
        los_gain *= 10.0 ** (-config.blockage_atten_db / 20.0)
    gains.append(los_gain)
    delays.append(d_los / SPEED_OF_LIGHT)
    tx_dirs.append(_unit(rx - tx))
    rx_dirs.append(_unit(rx - tx))

    if config.wall_reflection_coeff > 0.0:
        w, d = config.room_size
        images = (
            np.array([-tx[0], tx[1]]),          # left wall  x = 0
            np.array([2 * w - tx[0], tx[1]]),   # right wall x = w
            np.array([tx[0], -tx[1]]),          # bottom     y = 0
            np.array([tx[0], 2 * d - tx[1]]),   # top        y = d
        )
        walls = ((0, 0.0), (0, w), (1, 0.0), (1, d))
        for img, (axis, coord) in zip(images, walls):
            span = rx[axis] - img[axis]
            if span == 0.0:
                continue  # degenerate: TX image and RX on the wall plane
            length = float(np.linalg.norm(rx - img))
            frac = (coord - img[axis]) / span
            refl_point = img + frac * (rx - img)
            gains.append(config.wall_reflection_coeff / length)
            delays.append(length / SPEED_OF_LIGHT)
            tx_dirs.append(_unit(refl_point - tx))
            rx_dirs.append(_unit(rx - refl_point))

    if config.pedestrian_radius > 0.0:
        ped = np.asarray(pedestrian_xy, dtype=float)
        d1 = float(np.linalg.norm(ped - tx))
        d2 = float(np.linalg.norm(rx - ped))
        if d1 > 0 and d2 > 0:
            gains.append(config.pedestrian_radius / (d1 * d2))
            delays.append((d1 + d2) / SPEED_OF_LIGHT)
            tx_dirs.append(_unit(ped - tx))
            rx_dirs.append(_unit(rx - ped))

    return (
        np.asarray(gains),
        np.asarray(delays),
        np.vstack(tx_dirs),
        np.vstack(rx_dirs),
    )


def multipath_channel(config: SceneConfig, pedestrian_xy) -> np.ndarray:
    """Noise-free channel tensor (K, N, M), complex128."""
    gains, delays, tx_dirs, rx_dirs = _propagation_paths(config, pedestrian_xy)
    k = np.arange(config.n_subcarriers)
    freqs = config.carrier_freq_hz + (k - config.n_subcarriers / 2.0) * config.subcarrier_spacing_hz

    # (P, K) per-path per-subcarrier phasors, (P, N, M) spatial dyads
    phasors = gains[:, None] * np.exp(-2j * np.pi * freqs[None, :] * delays[:, None])
    a_rx = np.stack([_steering_vector(config.n_rx, config.antenna_spacing, u) for u in rx_dirs])
    a_tx = np.stack([_steering_vector(config.n_tx, config.antenna_spacing, u) for u in tx_dirs])
    dyads = a_rx[:, :, None] * a_tx[:, None, :]
    return np.einsum("pk,pnm->knm", phasors, dyads)


def synthesize_csi(config: SceneConfig, state: SceneState) -> CsiSample:
    """Multipath channel plus per-sample scaled complex Gaussian noise.

    Deterministic given (config.rng_seed, state.t); noise power is set so
    that mean noise power / mean signal power equals 10^(-snr_db / 10).
    """
    h = multipath_channel(config, state.pedestrian_xy)
    signal_power = float(np.mean(np.abs(h) ** 2))
    noise_var = signal_power * 10.0 ** (-config.snr_db / 10.0)
    rng = np.random.default_rng([config.rng_seed, state.t])
    noise = rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
    noise *= math.sqrt(noise_var / 2.0)
    csi = h + noise
    if not np.all(np.isfinite(csi.view(float))):
        raise FloatingPointError("synthesized CSI contains non-finite entries")
    return CsiSample(t=state.t, csi=csi)


def room_to_pixel(config: SceneConfig, xy) -> Tuple[float, float]:
    """Affine map from room coordinates (x, y) to fractional (row, col)."""
    x, y = xy
    col = x / config.room_size[0] * config.image_width - 0.5
    row = y / config.room_size[1] * config.image_height - 0.5
    return row, col


def pixel_to_room(config: SceneConfig, row_col) -> Tuple[float, float]:
    """Inverse of room_to_pixel, mapping fractional (row, col) back to meters."""
    row, col = row_col
    x = (col + 0.5) * config.room_size[0] / config.image_width
    y = (row + 0.5) * config.room_size[1] / config.image_height
    return x, y


BACKGROUND_COLOR = (0, 0, 0)
BORDER_COLOR = (80, 80, 80)
AP_COLOR = (255, 60, 60)
STA_COLOR = (60, 60, 255)
PEDESTRIAN_COLOR = (60, 255, 60)

# Rendered marker size of the pedestrian (meters). Deliberately larger than
# the physical disc so the marker occupies enough raster area for coarse
# downstream consumers; blockage and scattering always use the physical
# pedestrian_radius.
PEDESTRIAN_DISPLAY_RADIUS = 0.75


def _pixel_center_grid(config: SceneConfig):
    rows = np.arange(config.image_height)
    cols = np.arange(config.image_width)
    x = (cols + 0.5) * config.room_size[0] / config.image_width
    y = (rows + 0.5) * config.room_size[1] / config.image_height
    return np.meshgrid(x, y)  # each (H, W)

def _paint_square(img, config, xy, color, half=1):
    row, col = room_to_pixel(config, xy)
    r = int(round(row))
    c = int(round(col))
    r0, r1 = max(r - half, 0), min(r + half + 1, config.image_height)
    c0, c1 = max(c - half, 0), min(c + half + 1, config.image_width)
    img[r0:r1, c0:c1] = color


def render_image(config: SceneConfig, state: SceneState) -> np.ndarray:
    """Top-down schematic raster: room border, AP/STA markers, pedestrian disc."""
    px, py = state.pedestrian_xy
    w, d = config.room_size
    if not (0.0 <= px <= w and 0.0 <= py <= d):
        raise ValueError(f"pedestrian ({px}, {py}) outside room {config.room_size}")

    img = np.zeros((config.image_height, config.image_width, 3), dtype=np.uint8)
    img[:, :] = BACKGROUND_COLOR
    img[0, :] = img[-1, :] = BORDER_COLOR
    img[:, 0] = img[:, -1] = BORDER_COLOR
    _paint_square(img, config, config.ap_position[:2], AP_COLOR)
    _paint_square(img, config, config.sta_position[:2], STA_COLOR)

    gx, gy = _pixel_center_grid(config)
    radius = max(config.pedestrian_radius, PEDESTRIAN_DISPLAY_RADIUS)
    disc = (gx - px) ** 2 + (gy - py) ** 2 <= radius ** 2
    img[disc] = PEDESTRIAN_COLOR
    return img


def scene_state(config: SceneConfig, t: int) -> SceneState:
    """State of a single-path walk at sample t, image included."""
    state = SceneState(t=t, pedestrian_xy=pedestrian_position(config, t))
    state.image = render_image(config, state)
    return state


def generate_dataset(
    config: SceneConfig, n_samples: int
) -> Iterator[Tuple[SceneState, CsiSample]]:
    """Yield n_samples synchronized (state, CSI) pairs.

    With path_id='all' the four paths are visited round-robin (sample i
    walks path i % 4 at its own local clock), so a multiple-of-4 sample
    count lands exactly n/4 samples on each path. The pedestrian
    ping-pongs along its segment so long captures keep moving.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    config.validate()
    path_ids = config.active_path_ids()
    for i in range(n_samples):
        path_index = path_ids[i % len(path_ids)]
        local_t = i // len(path_ids)
        xy = _cycled_position(config, path_index, local_t)
        state = SceneState(t=i, pedestrian_xy=xy)
        state.image = render_image(config, state)
        yield state, synthesize_csi(config, state)
