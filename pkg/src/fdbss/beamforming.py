"""MuSIC direction-of-arrival estimation on separated source images.

After projection back, every separated source is seen by all M microphones,
so the covariance of its image has one signal dimension and M - 1 noise
dimensions.  The pseudo-spectra of all low-frequency bins are summed into
``P(theta)``, whose peaks split the angle axis into one region per source;
bins are then relabelled so that each source's DOA falls in its region.
"""

from __future__ import annotations

import csv
import itertools
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import find_peaks

from .exceptions import ConfigError
from .permutation import PermutationState

__all__ = [
    "ArrayGeometry",
    "MusicSpectrum",
    "DoaPartition",
    "steering_vector",
    "steering_matrix",
    "music_pseudospectrum",
    "music_spectrum_bin",
    "music_peaks",
    "compute_music",
    "aggregate_p_theta",
    "music_fmax",
    "partition_doa",
    "doa_align",
    "write_p_theta_csv",
]

DEFAULT_GRID = np.arange(-90.0, 90.0 + 0.5, 1.0)
_DENOM_FLOOR = 1e-12


@dataclass
class ArrayGeometry:
    """Linear array: sensor coordinates in meters along the array axis."""

    sensor_positions: np.ndarray
    speed_of_sound: float = 343.0
    reference_sensor: int = 0

    def __post_init__(self):
        pos = np.asarray(self.sensor_positions, dtype=float).ravel()
        if pos.size < 2:
            raise ConfigError("an array needs at least 2 sensors")
        if np.any(np.diff(pos) <= 0):
            raise ConfigError("sensor positions must be strictly increasing")
        if not 0 <= self.reference_sensor < pos.size:
            raise ConfigError(f"reference_sensor {self.reference_sensor} out of range")
        if not self.speed_of_sound > 0:
            raise ConfigError("speed_of_sound must be positive")
        self.sensor_positions = pos

    @property
    def n_sensors(self) -> int:
        return self.sensor_positions.size

    @property
    def max_spacing(self) -> float:
        return float(np.max(np.diff(self.sensor_positions)))

    def delays(self, theta_deg) -> np.ndarray:
        """Far-field delays ``(p_m - p_ref) sin(theta) / c``, shape (..., M)."""
        rel = self.sensor_positions - self.sensor_positions[self.reference_sensor]
        s = np.sin(np.deg2rad(np.asarray(theta_deg, dtype=float)))
        return s[..., np.newaxis] * rel / self.speed_of_sound

    @classmethod
    def uniform(cls, n_sensors: int, spacing: float, **kwargs) -> "ArrayGeometry":
        return cls(np.arange(n_sensors) * spacing, **kwargs)

    @classmethod
    def from_file(cls, path) -> "ArrayGeometry":
        """Parse a geometry file.

        One sensor position (meters) per line; ``speed_of_sound = <m/s>`` and
        ``reference_sensor = <index>`` may appear on their own lines.  ``#``
        starts a comment.
        """
        positions, extra = [], {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.fullmatch(r"([A-Za-z_]+)\s*[=:]\s*(\S+)", line)
            try:
                if m:
                    key = m.group(1).lower()
                    if key == "speed_of_sound":
                        extra[key] = float(m.group(2))
                    elif key == "reference_sensor":
                        extra[key] = int(m.group(2))
                    else:
                        raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                else:
                    positions.append(float(line))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: cannot parse {raw!r}") from exc
        return cls(np.array(positions), **extra)

    def to_file(self, path) -> None:
        lines = [f"speed_of_sound = {self.speed_of_sound!r}",
                 f"reference_sensor = {self.reference_sensor}"]
        lines += [repr(float(p)) for p in self.sensor_positions]
        Path(path).write_text("\n".join(lines) + "\n")


def steering_vector(theta_deg: float, freq: float, geom: ArrayGeometry) -> np.ndarray:
    """Unit-modulus far-field steering vector ``exp(-j 2 pi f tau_m(theta))``."""
    if abs(theta_deg) > 90:
        raise ConfigError(f"theta must lie in [-90, 90], got {theta_deg}")
    return np.exp(-2j * np.pi * freq * geom.delays(theta_deg))


def steering_matrix(theta_grid, freqs, geom: ArrayGeometry) -> np.ndarray:
    """Steering vectors for every frequency and angle, shape (F, n_theta, M)."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    tau = geom.delays(theta_grid)
    return np.exp(-2j * np.pi * freqs[:, None, None] * tau[None])


def music_pseudospectrum(cov: np.ndarray, A: np.ndarray, n_signal: int = 1):
    """``1 / (a^H E_n E_n^H a)^2`` for covariances ``cov[..., M, M]``.

    ``A[..., n_theta, M]`` holds steering vectors broadcast against ``cov``.
    Returns ``(values[..., n_theta], eigvals_desc, E_s, E_n)``.
    """
    eigval, eigvec = np.linalg.eigh(cov)
    eigval = eigval[..., ::-1]
    eigvec = eigvec[..., ::-1]
    Es = eigvec[..., :n_signal]
    En = eigvec[..., n_signal:]
    proj = np.einsum("...mk,...tm->...tk", En.conj(), A)
    denom = np.maximum(np.sum(np.abs(proj) ** 2, axis=-1), _DENOM_FLOOR)
    return 1.0 / denom ** 2, eigval, Es, En


def _covariances(images: np.ndarray) -> np.ndarray:
    """Sample covariance of ``images[..., mic, frame]``."""
    T = images.shape[-1]
    return images @ np.swapaxes(images, -1, -2).conj() / T


@dataclass
class MusicSpectrum:
    """Per-bin, per-source MuSIC pseudo-spectra.

    ``values[k, j, :]`` is M(theta) of source ``j`` at ``bins[k]`` (Hz
    ``freqs[k]``); ``degenerate[k, j]`` marks flat (all-zero) spectra from
    silent images.
    """

    theta: np.ndarray
    bins: np.ndarray
    freqs: np.ndarray
    values: np.ndarray
    degenerate: np.ndarray
    eigvals: Optional[np.ndarray] = None


def music_spectrum_bin(images_bin: np.ndarray, freq: float, geom: ArrayGeometry,
                       theta_grid=DEFAULT_GRID, n_signal: int = 1):
    """MuSIC spectra of each source image at one bin.

    ``images_bin[source, mic, frame]``; returns ``(values[source, theta],
    degenerate[source])``.
    """
    spec = compute_music(np.asarray(images_bin)[:, :, np.newaxis, :], np.array([freq]), geom,
                         f_max=np.inf, theta_grid=theta_grid, n_signal=n_signal,
                         include_dc=True)
    return spec.values[0], spec.degenerate[0]


def compute_music(images: np.ndarray, freqs: np.ndarray, geom: ArrayGeometry,
                  f_max: float, theta_grid=DEFAULT_GRID, n_signal: int = 1,
                  include_dc: bool = False) -> MusicSpectrum:
    """MuSIC spectra for every source image and every bin with ``f <= f_max``.

    ``images[source, mic, bin, frame]`` and ``freqs`` the bin frequencies.
    The DC bin carries no spatial information and is skipped unless
    ``include_dc``.
    """
    images = np.asarray(images)
    N, M = images.shape[:2]
    if M != geom.n_sensors:
        raise ConfigError(f"images have {M} microphones, geometry has {geom.n_sensors}")
    if n_signal >= M:
        raise ConfigError("MuSIC needs more microphones than signal dimensions")
    freqs = np.asarray(freqs, dtype=float)
    keep = freqs <= f_max
    if not include_dc:
        keep &= freqs > 0
    bins = np.flatnonzero(keep)
    if bins.size == 0:
        raise ConfigError(f"no frequency bins in (0, {f_max}] Hz")
    theta = np.asarray(theta_grid, dtype=float)
    sub = np.moveaxis(images[:, :, bins, :], 2, 0)     # bin, source, mic, frame
    cov = _covariances(sub)
    power = np.real(np.trace(cov, axis1=-2, axis2=-1))
    degenerate = power <= 1e-14 * max(power.max(), 1e-300)
    A = steering_matrix(theta, freqs[bins], geom)[:, np.newaxis]   # bin, 1, theta, mic
    safe_cov = np.where(degenerate[..., None, None], np.eye(M), cov)
    values, eigval, _, _ = music_pseudospectrum(safe_cov, A, n_signal)
    values[degenerate] = 0.0
    return MusicSpectrum(theta, bins, freqs[bins], values, degenerate, eigval)


def music_peaks(images_src: np.ndarray, freq: float, geom: ArrayGeometry,
                theta_grid=DEFAULT_GRID, n_signal: int = 1, dominance_db: float = 3.0):
    """Refined local maxima of M(theta) for one source image ``[mic, frame]``.

    Grid maxima (endpoints included) are polished by a bounded scalar search
    within one grid step, so peak heights compare the spectrum itself rather
    than how close a grid point happens to fall to it.  Returns
    ``(angles, values, dominant)`` sorted by angle, where ``dominant`` marks
    peaks within ``dominance_db`` of the tallest one.
    """
    x = np.asarray(images_src)
    theta = np.asarray(theta_grid, dtype=float)
    cov = _covariances(x)
    eigval, eigvec = np.linalg.eigh(cov)
    En = eigvec[:, ::-1][:, n_signal:]

    def value(t):
        a = steering_vector(float(np.clip(t, -90, 90)), freq, geom)
        d = max(float(np.sum(np.abs(En.conj().T @ a) ** 2)), _DENOM_FLOOR)
        return 1.0 / d ** 2

    grid_vals = np.array([value(t) for t in theta])
    pad = np.concatenate([[-np.inf], grid_vals, [-np.inf]])
    loc = np.flatnonzero((pad[1:-1] >= pad[:-2]) & (pad[1:-1] >= pad[2:]))
    step = float(np.min(np.diff(theta))) if theta.size > 1 else 1.0
    angles, values = [], []
    for i in loc:
        lo, hi = max(theta[i] - step, -90.0), min(theta[i] + step, 90.0)
        res = minimize_scalar(lambda t: -np.log(value(t)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-9})
        best = (res.x, value(res.x)) if value(res.x) >= grid_vals[i] else (theta[i], grid_vals[i])
        angles.append(best[0])
        values.append(best[1])
    angles, values = np.array(angles), np.array(values)
    # neighbouring grid maxima can converge on the same peak
    keep = np.ones(angles.size, dtype=bool)
    for k in range(1, angles.size):
        if abs(angles[k] - angles[k - 1]) < step / 2:
            keep[k if values[k] <= values[k - 1] else k - 1] = False
    angles, values = angles[keep], values[keep]
    dominant = values >= values.max() * 10 ** (-dominance_db / 10)
    return angles, values, dominant


def music_fmax(geom: ArrayGeometry, limit: float = 2000.0) -> float:
    """Aggregation bound ``min(limit, c / (2 d_max))`` avoiding spatial aliasing."""
    return float(min(limit, geom.speed_of_sound / (2 * geom.max_spacing)))


def aggregate_p_theta(spectrum: MusicSpectrum) -> np.ndarray:
    """``P(theta)``: sum of M(theta) over every bin and source in ``spectrum``."""
    if spectrum.values.shape[0] == 0:
        raise ConfigError("no bins to aggregate")
    return spectrum.values.sum(axis=(0, 1))


@dataclass
class DoaPartition:
    peak_angles: np.ndarray
    region_bounds: np.ndarray
    valid: bool
    all_peaks: Optional[np.ndarray] = None

    def region_of(self, theta) -> np.ndarray:
        """Region index (0 = leftmost) containing each angle."""
        return np.searchsorted(self.region_bounds, np.asarray(theta), side="right")


def _find_peaks(P, theta, min_separation, min_prominence_db):
    level = 10 * np.log10(np.maximum(P, 1e-300))
    floor = level.min() - 1.0
    padded = np.concatenate([[floor], level, [floor]])
    idx, props = find_peaks(padded, prominence=min_prominence_db)
    idx = idx - 1
    order = idx[np.argsort(-level[idx], kind="stable")]
    kept = []
    for i in order:
        if all(abs(theta[i] - theta[k]) >= min_separation for k in kept):
            kept.append(i)
    return np.array(kept, dtype=int)


def partition_doa(P, n_sources: int, theta_grid=DEFAULT_GRID,
                  min_separation: float = 15.0, min_prominence_db: float = 3.0) -> DoaPartition:
    """Split the angle axis into one region per source around the tallest peaks.

    Peaks are local maxima of ``P`` with at least ``min_prominence_db`` of
    prominence; a lower peak closer than ``min_separation`` degrees to a
    taller one is absorbed by it.  Fewer surviving peaks than ``n_sources``
    gives ``valid=False``.
    """
    P = np.asarray(P, dtype=float)
    theta = np.asarray(theta_grid, dtype=float)
    if P.shape != theta.shape:
        raise ConfigError("P and theta grid have different shapes")
    if not np.all(np.isfinite(P)):
        raise ConfigError("P(theta) must be finite")
    kept = _find_peaks(P, theta, min_separation, min_prominence_db)
    all_peaks = np.sort(theta[kept])
    if kept.size < n_sources:
        return DoaPartition(all_peaks, np.array([]), False, all_peaks)
    peaks = np.sort(theta[kept[:n_sources]])
    bounds = (peaks[1:] + peaks[:-1]) / 2
    return DoaPartition(peaks, bounds, True, all_peaks)


def doa_align(spectrum: MusicSpectrum, partition: DoaPartition, n_bins: int,
              max_deviation: float = 30.0):
    """Relabel low-frequency bins so that source ``k`` points into region ``k``.

    For each bin of ``spectrum`` the DOA of every separated source is the
    argmax of its M(theta).  If the DOAs land in distinct regions that
    assignment is used; otherwise the bijection maximizing the summed share
    of each source's M(theta) mass inside its assigned region wins.  A bin
    where some DOA is farther than ``max_deviation`` degrees from every peak,
    or whose spectrum is degenerate, keeps the identity and is reported as
    unresolved.  Bins outside ``spectrum.bins`` keep the identity.

    Returns ``(PermutationState, unresolved_bins)``.
    """
    if not partition.valid:
        raise ConfigError("cannot align with an invalid DOA partition")
    values = spectrum.values
    K, N, _ = values.shape
    state = PermutationState.identity(n_bins, N)
    theta = spectrum.theta
    doa = theta[np.argmax(values, axis=-1)]                       # (K, N)
    regions = partition.region_of(doa)
    dev = np.min(np.abs(doa[..., None] - partition.peak_angles), axis=-1)
    unresolved = np.any(spectrum.degenerate, axis=1) | np.any(dev > max_deviation, axis=1)

    region_of_theta = partition.region_of(theta)
    mass = np.stack([values[..., region_of_theta == r].sum(axis=-1) for r in range(N)], axis=-1)
    total = np.maximum(mass.sum(axis=-1, keepdims=True), 1e-300)
    share = mass / total                                          # (K, source, region)
    cands = np.array(list(itertools.permutations(range(N))), dtype=int)

    perms = np.tile(np.arange(N), (K, 1))
    distinct = np.all(np.sort(regions, axis=1) == np.arange(N), axis=1)
    perms[distinct] = regions[distinct]
    conflict = np.flatnonzero(~distinct)
    if conflict.size:
        scores = share[conflict][:, np.arange(N)[None, :], cands].sum(axis=-1)
        perms[conflict] = cands[np.argmax(scores, axis=1)]
    perms[unresolved] = np.arange(N)
    state.perms[spectrum.bins] = perms
    return state, spectrum.bins[unresolved]


def write_p_theta_csv(theta, P, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta_deg", "p_theta"])
        for t, p in zip(theta, P):
            writer.writerow([repr(float(t)), repr(float(p))])
