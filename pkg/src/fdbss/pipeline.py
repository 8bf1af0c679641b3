"""End-to-end separation: configuration, orchestration and reporting."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .beamforming import (ArrayGeometry, aggregate_p_theta, compute_music, doa_align,
                          music_fmax, partition_doa, write_p_theta_csv)
from .evaluation import SeparationScores, bss_eval, bss_eval_pairs
from .exceptions import ConfigError, DataError
from .ica import IcaConfig, UnmixingSet, separate_bins
from .permutation import (PermutationState, apply_permutations, sort_permutations,
                          write_trace_csv)
from .scale_fix import map_to_microphone_domain
from .signal_core import StftConfig, TimeSignal, istft, stft
from .synth import RoomMixSpec, make_fixture, mix
from .wavio import load_wav, save_wav

__all__ = ["RunConfig", "SeparationReport", "run_separation", "emit_report",
           "config_from_mapping", "read_config_file", "run_doa", "PERM_METHODS",
           "SCHEMA_VERSION"]

log = logging.getLogger(__name__)

PERM_METHODS = ("none", "lrj", "rlrj", "music_rlrj")
REPORT_FORMATS = ("json", "csv")
SCHEMA_VERSION = 1
SKIPPED_MSG = "beamforming skipped: insufficient peaks"


@dataclass
class RunConfig:
    """Everything a separation run needs.

    ``input`` is a WAV path, or ``None`` to synthesize a mixture from
    ``synth``.  ``references`` optionally names a WAV holding one clean
    reference per source for scoring (synthetic runs provide their own).
    """

    input: Optional[str] = None
    synth: Optional[RoomMixSpec] = None
    references: Optional[str] = None
    n_sources: Optional[int] = None
    stft: StftConfig = field(default_factory=lambda: StftConfig(fft_size=4096))
    ica: IcaConfig = field(default_factory=IcaConfig)
    perm_method: str = "rlrj"
    perm_iterations: int = 9
    perm_convention: str = "literal"
    music_fmax: float = 2000.0
    geometry: Optional[Union[str, ArrayGeometry]] = None
    theta_step: float = 1.0
    output_dir: Optional[str] = None
    report_format: str = "json"
    seed: int = 0
    reference_mic: int = 0
    filter_len: int = 512
    n_jobs: int = 1
    skip_ica: bool = False

    def validate(self) -> None:
        if self.perm_method not in PERM_METHODS:
            raise ConfigError(f"perm_method must be one of {PERM_METHODS}, got {self.perm_method!r}")
        if self.report_format not in REPORT_FORMATS:
            raise ConfigError(f"report_format must be one of {REPORT_FORMATS}")
        if self.perm_iterations < 1:
            raise ConfigError("perm_iterations must be >= 1")
        if self.n_sources is not None and self.n_sources < 1:
            raise ConfigError("n_sources must be >= 1")
        if self.filter_len < 1 or self.n_jobs < 1 or self.reference_mic < 0:
            raise ConfigError("filter_len and n_jobs must be >= 1, reference_mic >= 0")
        if self.music_fmax <= 0 or self.theta_step <= 0:
            raise ConfigError("music_fmax and theta_step must be positive")
        if self.perm_method == "music_rlrj" and self.geometry is None:
            raise ConfigError("perm_method=music_rlrj requires a geometry")
        if self.input is None and self.synth is None:
            raise ConfigError("either an input WAV or a synth spec is required")
        self.stft.validate()

    def load_geometry(self) -> Optional[ArrayGeometry]:
        if self.geometry is None or isinstance(self.geometry, ArrayGeometry):
            return self.geometry
        return ArrayGeometry.from_file(self.geometry)


@dataclass
class SeparationReport:
    n_sources: int
    scores: Optional[SeparationScores]
    baseline_sir: Optional[np.ndarray]
    sir_improvement: Optional[np.ndarray]
    timing: Dict[str, float]
    convergence_trace: List[dict]
    ica: Dict[str, Any]
    diagnostics: Dict[str, Any]
    config: Dict[str, Any]
    p_theta: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None

    @property
    def mean_sir(self) -> Optional[float]:
        return None if self.scores is None else float(np.mean(self.scores.sir))

    @property
    def mean_sir_improvement(self) -> Optional[float]:
        return None if self.sir_improvement is None else float(np.mean(self.sir_improvement))

    def to_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "n_sources": self.n_sources,
            "timing": dict(self.timing),
            "convergence_trace": list(self.convergence_trace),
            "ica": self.ica,
            "diagnostics": self.diagnostics,
            "config": self.config,
            "sources": self.source_rows(),
        }
        if self.scores is not None:
            out["mean_sir_db"] = self.mean_sir
            out["mean_sir_improvement_db"] = self.mean_sir_improvement
        return _jsonable(out)

    def source_rows(self) -> List[dict]:
        rows = []
        for k in range(self.n_sources):
            row = {"source": k}
            if self.scores is not None:
                row.update(reference=int(self.scores.pairing[k]), sdr_db=float(self.scores.sdr[k]),
                           sir_db=float(self.scores.sir[k]), sar_db=float(self.scores.sar[k]),
                           sir_in_db=float(self.baseline_sir[k]),
                           sir_improvement_db=float(self.sir_improvement[k]))
            rows.append(row)
        return rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, ArrayGeometry):
        return {"sensor_positions": obj.sensor_positions.tolist(),
                "speed_of_sound": obj.speed_of_sound, "reference_sensor": obj.reference_sensor}
    if dataclasses.is_dataclass(obj):
        return _jsonable({f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)})
    return obj


# ---------------------------------------------------------------- config I/O

_STFT_KEYS = {"fft_size": int, "hop_size": int}
_ICA_KEYS = {"engine": str, "ica_iterations": int, "tolerance": float, "fastica_scaling": str,
             "sign_targeted": "bool", "target_distribution": str}
_SYNTH_KEYS = {"n_mics": int, "rir_length": int, "rir_model": str, "decay_time": float,
               "duration": float, "sample_rate": float, "source_angles": "floats",
               "noise_snr_db": float, "n_echoes": int, "synth_seed": int}
_RUN_KEYS = {"input": str, "references": str, "n_sources": int, "perm_method": str,
             "perm_iterations": int, "perm_convention": str, "music_fmax": float,
             "geometry": str, "theta_step": float, "output_dir": str, "report_format": str,
             "seed": int, "reference_mic": int, "filter_len": int, "n_jobs": int,
             "skip_ica": "bool"}
CONFIG_KEYS = {**_RUN_KEYS, **_STFT_KEYS, **_ICA_KEYS, **_SYNTH_KEYS}


def _convert(key, value):
    kind = CONFIG_KEYS[key]
    if not isinstance(value, str):
        return value
    try:
        if kind == "bool":
            low = value.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(value)
            return low in ("1", "true", "yes", "on")
        if kind == "floats":
            return [float(v) for v in value.replace(",", " ").split()]
        return kind(value.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def read_config_file(path) -> Dict[str, str]:
    """``key = value`` lines; ``#`` comments; dashes in keys become underscores."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def config_from_mapping(values: Dict[str, Any]) -> RunConfig:
    """Build a :class:`RunConfig` from flat ``key -> value`` settings.

    ``input = synth`` (or no input at all) selects a synthetic mixture built
    from the synth keys.
    """
    unknown = set(values) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    v = {k: _convert(k, x) for k, x in values.items() if x is not None}
    stft_cfg = StftConfig(fft_size=v.get("fft_size", 4096), hop_size=v.get("hop_size"))
    ica_cfg = IcaConfig(engine=v.get("engine", "robustica"),
                        max_iterations=v.get("ica_iterations"),
                        tolerance=v.get("tolerance", 1e-5),
                        fastica_scaling=v.get("fastica_scaling", "newton"),
                        sign_targeted=v.get("sign_targeted", False),
                        target_distribution=v.get("target_distribution", "super_gaussian"))
    run = {k: v[k] for k in _RUN_KEYS if k in v}
    if run.get("input") in (None, "synth"):
        run["input"] = None
        geometry = None
        if "geometry" in run:
            geometry = ArrayGeometry.from_file(run["geometry"])
        n_src = run.get("n_sources", 3)
        synth = RoomMixSpec(
            n_sources=n_src, n_mics=v.get("n_mics", n_src),
            rir_length=v.get("rir_length", 256),
            rir_model=v.get("rir_model", "random_exponential_decay"),
            decay_time=v.get("decay_time", 32.0), seed=v.get("synth_seed", run.get("seed", 0)),
            geometry=geometry, source_angles=v.get("source_angles"),
            sample_rate=v.get("sample_rate", 16000.0), n_echoes=v.get("n_echoes", 6),
            noise_snr_db=v.get("noise_snr_db"), duration=v.get("duration", 10.0))
        run["synth"] = synth
    cfg = RunConfig(stft=stft_cfg, ica=ica_cfg, **run)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- running

def reference_images(sources: TimeSignal, rirs: np.ndarray, mic: int) -> TimeSignal:
    """Each source filtered alone to microphone ``mic``: the scoring targets."""
    rows = [mix(TimeSignal(sources.data[j:j + 1], sources.sample_rate),
                rirs[mic:mic + 1, j:j + 1]).data[0] for j in range(sources.channels)]
    return TimeSignal(np.array(rows), sources.sample_rate)


def _load_inputs(cfg: RunConfig):
    if cfg.input is not None:
        mixture = load_wav(cfg.input)
        refs = load_wav(cfg.references) if cfg.references else None
        return mixture, refs
    fx = make_fixture(cfg.synth)
    return fx.mixture, reference_images(fx.sources, fx.rirs, cfg.reference_mic)


def permute_unmixing(B: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """Reorder rows of ``B[bin]`` so row ``perms[f, i]`` is the old row ``i``."""
    return np.moveaxis(apply_permutations(np.moveaxis(B, 1, 0), perms), 0, 1)


def _identity_unmixing(F, M):
    eye = np.broadcast_to(np.eye(M, dtype=complex), (F, M, M)).copy()
    return UnmixingSet(eye, eye.copy(), np.ones(F, dtype=bool), np.zeros(F, dtype=int))


def run_separation(cfg: RunConfig, mixture: Optional[TimeSignal] = None,
                   references: Optional[TimeSignal] = None):
    """Run the whole chain; returns ``(report, separated TimeSignal)``.

    Separated sources are the reference-microphone images.  When
    ``cfg.output_dir`` is set the sources, the report and the sidecar CSVs
    are written there.
    """
    cfg.validate()
    if mixture is None:
        mixture, loaded_refs = _load_inputs(cfg)
        references = references if references is not None else loaded_refs
    M = mixture.channels
    N = cfg.n_sources or M
    if N != M:
        raise ConfigError(f"only the determined case is supported: {N} sources, {M} microphones")
    if cfg.reference_mic >= M:
        raise ConfigError(f"reference_mic {cfg.reference_mic} but only {M} microphones")
    geom = cfg.load_geometry()
    if geom is not None and geom.n_sensors != M:
        raise ConfigError(f"geometry has {geom.n_sensors} sensors, mixture has {M} channels")
    warnings_: List[str] = []
    diagnostics: Dict[str, Any] = {"warnings": warnings_}

    t_start = time.perf_counter()
    S = stft(mixture, cfg.stft)
    X = np.transpose(S.data, (1, 0, 2))                          # bin, mic, frame
    freqs = S.frequencies()

    t0 = time.perf_counter()
    if cfg.skip_ica:
        unmix = _identity_unmixing(S.bins, M)
    else:
        try:
            unmix = separate_bins(X, cfg.ica, seed=cfg.seed, n_jobs=cfg.n_jobs)
        except DataError as exc:
            raise DataError(f"separation stage: {exc}") from exc
    B = unmix.total
    U = np.einsum("fnm,fmt->nft", B, X)
    separation_time = time.perf_counter() - t0

    t0 = time.perf_counter()
    init_state, p_theta, theta = None, None, None
    method = cfg.perm_method
    if method == "music_rlrj":
        theta = np.arange(-90.0, 90.0 + cfg.theta_step / 2, cfg.theta_step)
        fmax = min(cfg.music_fmax, music_fmax(geom, limit=np.inf))
        images = map_to_microphone_domain(S.data, B).images
        spectrum = compute_music(images, freqs, geom, fmax, theta_grid=theta)
        p_theta = aggregate_p_theta(spectrum)
        part = partition_doa(p_theta, N, theta)
        diagnostics["doa"] = {"valid": part.valid, "peak_angles": part.peak_angles,
                              "region_bounds": part.region_bounds, "f_max": fmax}
        if part.valid:
            init_state, unresolved = doa_align(spectrum, part, S.bins)
            diagnostics["unresolved_doa_bins"] = unresolved
        else:
            log.warning(SKIPPED_MSG)
            warnings_.append(SKIPPED_MSG)
        method = "rlrj"
    trace: List[dict] = []
    if method == "none":
        state = PermutationState.identity(S.bins, N)
    else:
        _, state, trace = sort_permutations(U, method, cfg.perm_iterations, init_state,
                                            cfg.perm_convention)
    B = permute_unmixing(B, state.perms)
    permutation_time = time.perf_counter() - t0

    images = map_to_microphone_domain(S.data, B)
    ref_spec = S.with_data(images.reference(cfg.reference_mic))
    separated = istft(ref_spec, mixture.samples_per_channel)
    total_time = time.perf_counter() - t_start

    scores = baseline = improvement = None
    if references is not None:
        if references.channels != N:
            raise DataError(f"{references.channels} references for {N} sources")
        scores = bss_eval(separated, references, cfg.filter_len)
        _, sir_in, _ = bss_eval_pairs(mixture.data[cfg.reference_mic:cfg.reference_mic + 1],
                                      references, cfg.filter_len)
        baseline = sir_in[0, scores.pairing]
        improvement = scores.sir - baseline

    diagnostics["degenerate_bins"] = np.flatnonzero(unmix.degenerate)
    diagnostics["fallback_bins"] = images.fallback_bins
    diagnostics.setdefault("unresolved_doa_bins", np.array([], dtype=int))
    report = SeparationReport(
        n_sources=N, scores=scores, baseline_sir=baseline, sir_improvement=improvement,
        timing={"separation_time": separation_time, "permutation_time": permutation_time,
                "total_time": total_time},
        convergence_trace=trace,
        ica={"engine": "identity" if cfg.skip_ica else cfg.ica.engine,
             "converged_fraction": float(np.mean(unmix.converged)),
             "mean_iterations": float(np.mean(unmix.iterations)),
             "comparisons": state.comparison_counter},
        diagnostics=diagnostics, config=_jsonable(cfg), p_theta=p_theta, theta=theta)
    if cfg.output_dir:
        write_outputs(report, separated, cfg.output_dir, cfg.report_format)
    return report, separated


# ---------------------------------------------------------------- reporting

def emit_report(report: SeparationReport, path, fmt: str = "json") -> Path:
    """Write the report as schema-versioned JSON or one CSV row per source."""
    path = Path(path)
    try:
        if fmt == "json":
            path.write_text(json.dumps(report.to_dict(), indent=2))
        elif fmt == "csv":
            rows = report.source_rows()
            timing = report.timing
            fields = list(rows[0]) + list(timing)
            with open(path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=fields)
                writer.writeheader()
                for row in rows:
                    writer.writerow({**row, **timing})
        else:
            raise ConfigError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise DataError(f"cannot write report {path}: {exc}") from exc
    return path


def write_outputs(report: SeparationReport, separated: TimeSignal, output_dir, fmt="json"):
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from exc
    for k in range(separated.channels):
        save_wav(TimeSignal(separated.data[k:k + 1], separated.sample_rate),
                 out / f"source_{k}.wav")
    emit_report(report, out / f"report.{fmt}", fmt)
    if report.convergence_trace:
        write_trace_csv(report.convergence_trace, out / "trace.csv")
    if report.p_theta is not None:
        write_p_theta_csv(report.theta, report.p_theta, out / "p_theta.csv")


def run_doa(cfg: RunConfig, mixture: Optional[TimeSignal] = None):
    """Separate, project back and estimate DOAs without permutation solving.

    Returns ``(theta, P, partition)``.
    """
    cfg.validate()
    geom = cfg.load_geometry()
    if geom is None:
        raise ConfigError("DOA estimation requires a geometry")
    if mixture is None:
        mixture, _ = _load_inputs(cfg)
    if geom.n_sensors != mixture.channels:
        raise ConfigError(f"geometry has {geom.n_sensors} sensors, mixture has {mixture.channels}")
    S = stft(mixture, cfg.stft)
    X = np.transpose(S.data, (1, 0, 2))
    B = separate_bins(X, cfg.ica, seed=cfg.seed, n_jobs=cfg.n_jobs).total
    theta = np.arange(-90.0, 90.0 + cfg.theta_step / 2, cfg.theta_step)
    fmax = min(cfg.music_fmax, music_fmax(geom, limit=np.inf))
    spectrum = compute_music(map_to_microphone_domain(S.data, B).images, S.frequencies(), geom,
                             fmax, theta_grid=theta)
    P = aggregate_p_theta(spectrum)
    return theta, P, partition_doa(P, cfg.n_sources or mixture.channels, theta)
