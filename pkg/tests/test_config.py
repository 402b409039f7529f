# test_config.py
import gzip
import json

import pytest

from lidarkit.config import (
    apply_overrides,
    bundled_config,
    list_bundled,
    load_config,
    read_document,
    resolve,
)
from lidarkit.errors import (
    ConfigError,
    ConfigInvariantError,
    ConfigMissingFileError,
    ConfigSchemaError,
)

TOML_CONFIG = """
mode = "double"

[medium]
kind = "homogeneous"
sigma_t = 0.01
scattering = 0.008

[geometry]
rho0 = 0.1
theta0 = 0.1

[time_grid]
t_min = 50.0
t_max = 150.0
n = 3
"""

MEDIUM_FILE = {"kind": "layer", "sigma_t": 0.004, "scattering": 0.003, "thickness": 40.0}


# ---- documents ----


class TestReadDocument:
    def test_json(self, config_dict, write_config):
        cfg = load_config(write_config(config_dict))
        assert cfg.spec.mode == "single"
        assert cfg.grid.times.tolist() == [20.0, 50.0, 100.0]
        assert cfg.geometry.epsilon == 0.1

    def test_toml(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text(TOML_CONFIG, encoding="utf-8")
        cfg = load_config(path)
        assert cfg.spec.mode == "double"
        assert cfg.grid.times.tolist() == pytest.approx([50.0, 100.0, 150.0])
        assert cfg.medium.kind == "homogeneous"

    def test_gzipped_json(self, tmp_path, config_dict):
        path = tmp_path / "run.json.gz"
        path.write_bytes(gzip.compress(json.dumps(config_dict).encode("utf-8")))
        assert read_document(path) == config_dict

    def test_missing_file_names_path(self, tmp_path):
        path = tmp_path / "nope.json"
        with pytest.raises(ConfigMissingFileError) as info:
            load_config(path)
        assert info.value.path == path
        assert "nope.json" in str(info.value)

    def test_unparseable(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigSchemaError):
            load_config(path)

    def test_top_level_must_be_object(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigSchemaError, match="top level"):
            read_document(path)


# ---- validation ----


class TestSchemaErrors:
    def test_reports_every_field(self, config_dict, write_config):
        config_dict["geometry"]["rho0"] = -1.0
        config_dict["time_grid"] = {"times": [5.0, 1.0]}
        with pytest.raises(ConfigSchemaError) as info:
            load_config(write_config(config_dict))
        paths = [path for path, _ in info.value.problems]
        assert "geometry.rho0" in paths
        assert any(p.startswith("time_grid") for p in paths)

    def test_is_a_config_error(self, config_dict, write_config):
        config_dict["mode"] = "quadruple"
        with pytest.raises(ConfigError):
            load_config(write_config(config_dict))


class TestInvariantErrors:
    def test_scattering_exceeds_extinction(self, config_dict, write_config):
        config_dict["medium"]["scattering"] = 0.2
        with pytest.raises(ConfigInvariantError) as info:
            load_config(write_config(config_dict))
        assert info.value.problems[0][0] == "medium"
        assert "extinction must cover scattering" in info.value.problems[0][1]

    def test_half_angle_out_of_range(self, config_dict, write_config):
        config_dict["geometry"] = {"rho0": 0.1, "theta0": 2.0}
        with pytest.raises(ConfigInvariantError) as info:
            load_config(write_config(config_dict))
        assert [p for p, _ in info.value.problems] == ["geometry.theta0"]

    def test_collects_every_invariant(self, config_dict, write_config):
        config_dict["medium"]["scattering"] = 0.2
        config_dict["geometry"] = {"rho0": 0.1, "theta0": 2.0}
        with pytest.raises(ConfigInvariantError) as info:
            load_config(write_config(config_dict))
        assert [p for p, _ in info.value.problems] == ["medium", "geometry.theta0"]

    def test_bin_width_wider_than_spacing(self, config_dict, write_config):
        config_dict["mode"] = "mc"
        config_dict["montecarlo"]["bin_width"] = 100.0
        with pytest.raises(ConfigInvariantError) as info:
            load_config(write_config(config_dict))
        assert [p for p, _ in info.value.problems] == ["montecarlo.bin_width"]

    def test_bin_width_ignored_for_analytic_modes(self, config_dict, write_config):
        config_dict["montecarlo"]["bin_width"] = 100.0
        assert load_config(write_config(config_dict)).spec.mode == "single"


# ---- medium files ----


class TestMediumPath:
    def test_relative_to_config(self, tmp_path, config_dict, write_config):
        (tmp_path / "media").mkdir()
        (tmp_path / "media" / "layer.json").write_text(json.dumps(MEDIUM_FILE), encoding="utf-8")
        del config_dict["medium"]
        config_dict["medium_path"] = "media/layer.json"
        cfg = load_config(write_config(config_dict))
        assert cfg.medium.kind == "layer"
        assert cfg.medium.sigma_t(50.0) == 0.0

    def test_missing_medium_file(self, config_dict, write_config):
        del config_dict["medium"]
        config_dict["medium_path"] = "absent.json"
        with pytest.raises(ConfigMissingFileError) as info:
            load_config(write_config(config_dict))
        assert info.value.problems[0][0] == "medium_path"

    def test_invalid_medium_file(self, tmp_path, config_dict, write_config):
        (tmp_path / "m.json").write_text(json.dumps({"kind": "layer", "sigma_t": 0.1}), encoding="utf-8")
        del config_dict["medium"]
        config_dict["medium_path"] = "m.json"
        with pytest.raises(ConfigSchemaError) as info:
            load_config(write_config(config_dict))
        assert all(p.startswith("medium") for p, _ in info.value.problems)


# ---- overrides and hashing ----


class TestOverrides:
    def test_applied(self, config_dict, write_config):
        spec = load_config(write_config(config_dict)).spec
        out = apply_overrides(spec, mode="mc", out="x.csv", seed=3, histories=10, workers=2)
        assert out.mode == "mc"
        assert out.output.path == "x.csv"
        assert (out.montecarlo.seed, out.montecarlo.histories, out.montecarlo.workers) == (3, 10, 2)
        assert spec.mode == "single"

    def test_invalid_override(self, config_dict, write_config):
        spec = load_config(write_config(config_dict)).spec
        with pytest.raises(ConfigSchemaError):
            apply_overrides(spec, histories=0)

    def test_hash_is_stable(self, config_dict, write_config):
        a = load_config(write_config(config_dict, "a.json"))
        b = load_config(write_config(config_dict, "b.json"))
        assert a.config_hash == b.config_hash
        assert len(a.config_hash) == 64

    def test_hash_ignores_workers_and_output(self, config_dict, write_config):
        spec = load_config(write_config(config_dict)).spec
        base = resolve(spec)
        other = resolve(apply_overrides(spec, workers=4, out="elsewhere.csv"))
        assert other.spec.montecarlo.workers == 4
        assert other.config_hash == base.config_hash

    def test_hash_follows_effective_config(self, config_dict, write_config):
        a = load_config(write_config(config_dict, "a.json"))
        config_dict["montecarlo"]["seed"] = 8
        b = load_config(write_config(config_dict, "b.json"))
        assert a.config_hash != b.config_hash


# ---- bundled examples ----


def test_bundled_examples_listed():
    assert list_bundled() == ["double_scatter", "homogeneous", "layer", "tabulated"]


@pytest.mark.parametrize("name", ["double_scatter", "homogeneous", "layer", "tabulated"])
def test_bundled_examples_resolve(name):
    cfg = bundled_config(name)
    assert len(cfg.grid) > 0
    assert cfg.medium.sigma_max() > 0.0


def test_unknown_bundled_example():
    with pytest.raises(ConfigMissingFileError):
        bundled_config("no-such-example")
