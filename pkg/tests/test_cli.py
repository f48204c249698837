import json
from pathlib import Path

import numpy as np
import pytest

from dwe_lab.cli import (
    ConfigError,
    ExperimentConfig,
    cache_fetch,
    cache_store,
    main,
    run,
)


def small_config(tmp_path, **overrides):
    cfg = ExperimentConfig(
        geometry={"preset": "flat"},
        damping={"preset": "constant", "c": 0.5},
        N=16,
        out_dir=str(tmp_path / "out"),
        cache=False,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


class TestConfig:
    def test_toml_roundtrip(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text(
            '[geometry]\npreset = "y-channel"\neps = 0.1\n'
            '[damping]\npreset = "smooth-well"\n'
        )
        cfg = ExperimentConfig.from_toml(path)
        assert cfg.geometry["preset"] == "y-channel"
        assert cfg.damping["preset"] == "smooth-well"
        d = cfg.to_dict()
        cfg2 = ExperimentConfig(**{k: tuple(v) if k in ("hbar_sweep",
                                                        "hbar_mode_sweep",
                                                        "window") else v
                                   for k, v in d.items()}).validate()
        assert cfg2.to_dict() == d

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("frequency = 3\n")
        with pytest.raises(ConfigError, match="unknown config fields"):
            ExperimentConfig.from_toml(path)

    def test_field_level_diagnostics(self):
        cfg = ExperimentConfig(N=15, nu_bar=0.7)
        with pytest.raises(ConfigError) as err:
            cfg.validate()
        msg = str(err.value)
        assert "N must be even" in msg
        assert "nu_bar" in msg

    def test_unknown_preset_rejected(self):
        cfg = ExperimentConfig(geometry={"preset": "sphere"})
        with pytest.raises(ConfigError, match="geometry preset"):
            cfg.validate()

    def test_content_hash_sensitive_to_stage_and_params(self, tmp_path):
        a = small_config(tmp_path)
        b = small_config(tmp_path, N=24)
        assert a.content_hash("spectrum") != a.content_hash("egorov")
        assert a.content_hash("spectrum") != b.content_hash("spectrum")


class TestRun:
    def test_spectrum_flat_constant(self, tmp_path):
        cfg = small_config(tmp_path)
        report = run(cfg, "spectrum")
        assert not report.hard_failures
        names = {c.name for c in report.checks}
        assert "closed-form-match" in names
        out = Path(cfg.out_dir)
        assert (out / "spectrum.csv").exists()
        assert (out / "MANIFEST").exists()

    def test_unknown_subcommand(self, tmp_path):
        cfg = small_config(tmp_path)
        with pytest.raises(ConfigError):
            run(cfg, "teleport")

    def test_usage_error_exit_code(self):
        assert main(["teleport"]) == 2

    def test_determinism_byte_identical(self, tmp_path):
        cfg1 = small_config(tmp_path / "a")
        cfg2 = small_config(tmp_path / "b")
        run(cfg1, "spectrum")
        run(cfg2, "spectrum")
        c1 = (Path(cfg1.out_dir) / "spectrum.csv").read_bytes()
        c2 = (Path(cfg2.out_dir) / "spectrum.csv").read_bytes()
        assert c1 == c2

    def test_decay_pipeline(self, tmp_path):
        cfg = small_config(tmp_path, decay_T=5.0, decay_dt=5e-3,
                           damping={"preset": "smooth-well"})
        report = run(cfg, "decay")
        assert not report.hard_failures
        assert (Path(cfg.out_dir) / "energy_trace.csv").exists()

    def test_resolvent_pipeline(self, tmp_path):
        cfg = small_config(tmp_path, damping={"preset": "smooth-well"})
        report = run(cfg, "resolvent-scan")
        assert not report.hard_failures
        rows = (Path(cfg.out_dir) / "resolvent_scan.csv").read_text().strip().split("\n")
        assert rows[0] == "re_tau,im_tau,norm"
        assert len(rows) == 10


class TestCache:
    def test_store_and_fetch(self, tmp_path):
        cfg = small_config(tmp_path, cache=True)
        arrays = {"taus": np.array([1.0 + 0j, 2.0 - 0.5j])}
        cache_store(cfg, "spectrum", arrays)
        back = cache_fetch(cfg, "spectrum")
        assert np.array_equal(back["taus"], arrays["taus"])

    def test_changed_config_misses(self, tmp_path):
        cfg = small_config(tmp_path, cache=True)
        cache_store(cfg, "spectrum", {"taus": np.array([1.0])})
        other = small_config(tmp_path, cache=True, N=24)
        assert cache_fetch(other, "spectrum") is None

    def test_corrupted_cache_recomputes(self, tmp_path, capsys):
        cfg = small_config(tmp_path, cache=True)
        cache_store(cfg, "spectrum", {"taus": np.array([1.0])})
        cache_dir = Path(cfg.out_dir) / "cache"
        victim = next(cache_dir.glob("*.npz"))
        victim.write_bytes(b"not a zipfile")
        assert cache_fetch(cfg, "spectrum") is None

    def test_cache_hit_reproduces_solution(self, tmp_path):
        cfg = small_config(tmp_path, cache=True)
        rep1 = run(cfg, "spectrum")
        rep2 = run(cfg, "spectrum")
        entry = [c for c in rep2.checks if c.name == "cache-consistency"]
        assert entry and entry[0].passed

    def test_env_cache_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DWE_LAB_CACHE_DIR", str(tmp_path / "central"))
        cfg = small_config(tmp_path, cache=True)
        cache_store(cfg, "spectrum", {"taus": np.array([2.0])})
        assert list((tmp_path / "central").glob("*.npz"))
