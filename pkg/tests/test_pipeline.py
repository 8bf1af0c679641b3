import csv
import json

import numpy as np
import pytest

from fdbss.beamforming import ArrayGeometry
from fdbss.exceptions import ConfigError, DataError
from fdbss.pipeline import (CONFIG_KEYS, SCHEMA_VERSION, SKIPPED_MSG, RunConfig,
                            config_from_mapping, emit_report, permute_unmixing,
                            read_config_file, run_doa, run_separation)
from fdbss.signal_core import StftConfig
from fdbss.synth import RoomMixSpec, make_fixture


def small_cfg(**kw):
    synth = kw.pop("synth", RoomMixSpec(duration=2.0, rir_length=64, seed=1))
    return RunConfig(synth=synth, stft=StftConfig(512), filter_len=64, **kw)


def test_config_validation():
    with pytest.raises(ConfigError):
        small_cfg(perm_method="greedy").validate()
    with pytest.raises(ConfigError):
        small_cfg(perm_method="music_rlrj").validate()
    with pytest.raises(ConfigError):
        small_cfg(report_format="xml").validate()
    with pytest.raises(ConfigError):
        small_cfg(perm_iterations=0).validate()
    with pytest.raises(ConfigError):
        RunConfig().validate()
    with pytest.raises(ConfigError):
        run_separation(small_cfg(n_sources=2))


def test_config_from_mapping(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nperm-method = lrj\nfft_size = 1024\nengine = fastica\n"
                    "skip_ica = no\nduration = 1.5\n")
    values = read_config_file(path)
    cfg = config_from_mapping(values)
    assert cfg.perm_method == "lrj" and cfg.stft.fft_size == 1024
    assert cfg.ica.engine == "fastica" and cfg.ica.max_iterations == 15
    assert cfg.synth.duration == 1.5 and cfg.input is None and not cfg.skip_ica
    with pytest.raises(ConfigError):
        config_from_mapping({"colour": "red"})
    with pytest.raises(ConfigError):
        config_from_mapping({"fft_size": "big"})
    with pytest.raises(ConfigError):
        config_from_mapping({"skip_ica": "maybe"})
    path.write_text("no equals sign\n")
    with pytest.raises(ConfigError):
        read_config_file(path)
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "missing.cfg")
    assert set(CONFIG_KEYS) >= {"input", "perm_method", "fft_size", "engine", "rir_model"}


def test_permute_unmixing_moves_rows():
    B = np.arange(2 * 3 * 3).reshape(2, 3, 3).astype(complex)
    out = permute_unmixing(B, np.array([[2, 0, 1], [0, 1, 2]]))
    assert np.array_equal(out[0, 2], B[0, 0]) and np.array_equal(out[0, 0], B[0, 1])
    assert np.array_equal(out[1], B[1])


def test_identity_separation_sums_to_mixture():
    cfg = small_cfg(skip_ica=True, perm_method="none")
    report, sep = run_separation(cfg)
    mixture = make_fixture(cfg.synth).mixture
    assert np.max(np.abs(sep.data.sum(axis=0) - mixture.data[0])) < 1e-9
    assert report.ica["engine"] == "identity"


def test_determinism_and_report(tmp_path):
    cfg = small_cfg(output_dir=str(tmp_path / "a"))
    r1, s1 = run_separation(cfg)
    r2, s2 = run_separation(small_cfg())
    assert np.array_equal(s1.data, s2.data)
    d1, d2 = r1.to_dict(), r2.to_dict()
    for d in (d1, d2):
        d.pop("timing")
        d["config"].pop("output_dir")
    assert d1 == d2

    t = r1.timing
    assert min(t.values()) >= 0
    assert t["total_time"] >= t["separation_time"] + t["permutation_time"]
    assert len(r1.convergence_trace) == 9

    out = tmp_path / "a"
    names = sorted(p.name for p in out.iterdir())
    assert names == ["report.json", "source_0.wav", "source_1.wav", "source_2.wav", "trace.csv"]
    data = json.loads((out / "report.json").read_text())
    full = r1.to_dict()
    assert json.loads(json.dumps(full)) == full
    assert data["timing"] == full["timing"] and data["sources"] == full["sources"]
    assert data["schema_version"] == SCHEMA_VERSION
    assert len(data["sources"]) == 3
    assert data["mean_sir_db"] == pytest.approx(r1.mean_sir)
    assert data["config"]["perm_method"] == "rlrj"
    assert set(data["diagnostics"]) >= {"degenerate_bins", "fallback_bins", "unresolved_doa_bins"}

    emit_report(r1, tmp_path / "r.csv", "csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == 3
    assert {"sdr_db", "sir_db", "sar_db", "sir_improvement_db", "total_time"} <= set(rows[0])
    with pytest.raises(ConfigError):
        emit_report(r1, tmp_path / "r.txt", "txt")


def test_wav_input_and_references(tmp_path):
    from fdbss.pipeline import reference_images
    from fdbss.wavio import save_wav
    fx = make_fixture(RoomMixSpec(duration=1.0, rir_length=32, seed=3))
    save_wav(fx.mixture, tmp_path / "mix.wav")
    save_wav(reference_images(fx.sources, fx.rirs, 0), tmp_path / "ref.wav")
    cfg = RunConfig(input=str(tmp_path / "mix.wav"), references=str(tmp_path / "ref.wav"),
                    stft=StftConfig(512), filter_len=32)
    report, sep = run_separation(cfg)
    assert sep.channels == 3 and report.scores is not None
    cfg = RunConfig(input=str(tmp_path / "mix.wav"), stft=StftConfig(512))
    report, _ = run_separation(cfg)
    assert report.scores is None and report.mean_sir is None
    (tmp_path / "bad.wav").write_bytes(b"RIFF")
    with pytest.raises(DataError):
        run_separation(RunConfig(input=str(tmp_path / "bad.wav")))


def _anechoic(angles, seed=0):
    g = ArrayGeometry.uniform(len(angles), 0.05)
    return g, RoomMixSpec(n_sources=len(angles), n_mics=len(angles), rir_length=128,
                          rir_model="anechoic_farfield", geometry=g, source_angles=angles,
                          duration=2.0, seed=seed, noise_snr_db=30.0)


def test_music_initialization_runs(tmp_path):
    g, spec = _anechoic([-50.0, 0.0, 45.0])
    cfg = small_cfg(synth=spec, geometry=g, perm_method="music_rlrj",
                    output_dir=str(tmp_path))
    report, _ = run_separation(cfg)
    doa = report.diagnostics["doa"]
    assert doa["f_max"] == 2000.0
    if doa["valid"]:
        assert not report.diagnostics["warnings"]
    assert (tmp_path / "p_theta.csv").exists()
    theta, P, part = run_doa(small_cfg(synth=spec, geometry=g))
    assert P.shape == theta.shape and np.all(P >= 0)


def test_music_fallback_flag(tmp_path):
    g, spec = _anechoic([-3.0, 0.0, 4.0, 8.0])
    cfg = small_cfg(synth=spec, geometry=g, perm_method="music_rlrj")
    report, _ = run_separation(cfg)
    assert not report.diagnostics["doa"]["valid"]
    assert SKIPPED_MSG in report.diagnostics["warnings"]
    assert len(report.convergence_trace) == 9


def test_geometry_mismatch():
    g = ArrayGeometry.uniform(2, 0.05)
    with pytest.raises(ConfigError):
        run_separation(small_cfg(geometry=g, perm_method="music_rlrj"))
