import json

import numpy as np
import pytest

import geoflow


def test_volume_generation_is_seeded_and_valid():
    a = geoflow.generate_volume(3, (12, 12, 12))
    b = geoflow.generate_volume(3, (12, 12, 12))
    assert a.shape == (12, 12, 12) and a.dtype == np.uint8
    assert np.array_equal(a, b)
    assert a.min() >= 1 and a.max() <= geoflow.NUM_CATEGORIES
    assert geoflow.facies_name(geoflow.AIR)


def test_condition_and_baselines():
    vol = geoflow.generate_volume(5, (8, 8, 8))
    cond = geoflow.sample_sparse(vol, 4, 1)
    known = cond != geoflow.UNSAMPLED
    assert np.array_equal(cond[known], vol[known].astype(np.int8))
    for fn in (geoflow.baseline_depthwise, geoflow.baseline_polygonal):
        pred = fn(cond)
        assert pred.shape == vol.shape
        assert np.array_equal(pred[known], vol[known])
    full = geoflow.sample_sparse(vol, 64, 1)
    assert np.array_equal(geoflow.baseline_polygonal(full), vol)


def test_metrics_perfect_and_shape_error():
    vol = geoflow.generate_volume(6, (8, 8, 8))
    m = geoflow.compute_metrics(vol, vol)
    assert m["acc_incl_air"] == 1.0 and m["acc_excl_air"] == 1.0 and m["miou_excl_air"] == 1.0
    with pytest.raises(geoflow.ShapeError):
        geoflow.compute_metrics(vol, geoflow.generate_volume(6, (8, 8, 4)))


def test_forward_maps_shapes():
    vol = geoflow.generate_volume(7, (8, 8, 8))
    g, mag = geoflow.forward_maps(vol, 5, 6)
    assert g.shape == (5, 6) and mag.shape == (5, 6)
    assert np.all(np.isfinite(g)) and np.all(np.isfinite(mag))


def test_volume_file_round_trip(tmp_path):
    vol = geoflow.generate_volume(8, (6, 7, 5))
    geoflow.write_volume(tmp_path / "v.gvl", vol)
    assert np.array_equal(geoflow.read_volume(tmp_path / "v.gvl"), vol)
    (tmp_path / "bad.gvl").write_bytes(b"nope")
    with pytest.raises(geoflow.DataError):
        geoflow.read_volume(tmp_path / "bad.gvl")


def test_invalid_config_rejected():
    cfg = geoflow.default_config()
    cfg["no_such_key"] = 1
    with pytest.raises(geoflow.ConfigError):
        geoflow.normalize_config(cfg)


def test_tiny_pipeline(tmp_path):
    cfg = geoflow.default_config()
    cfg["dims"] = [8, 8, 8]
    cfg.pop("ranges")
    cfg["dataset"]["cases"] = 6
    cfg["dataset"]["boreholes"] = 2
    cfg["survey"]["nx"] = cfg["survey"]["ny"] = 6
    cfg["model"]["levels"] = 2
    cfg["model"]["base_channels"] = 8
    cfg["training"]["epochs"] = 1
    cfg["training"]["diffusion_steps"] = 30
    cfg["sampler"]["ode_steps"] = 4
    run = tmp_path / "run"
    assert geoflow.gen_dataset(cfg, run) == 6
    ckpt = geoflow.train(run, "fm", attention=True)
    pred = geoflow.sample(run, ckpt, "ood")
    metrics = geoflow.evaluate(run, pred, "ood")
    assert metrics["cases"] >= 1
    assert 0.0 <= metrics["pooled"]["acc_excl_air"] <= 1.0
    geoflow.evaluate(run, geoflow.baseline(run, "polygonal", "ood"), "ood")
    assert "Polygonal" in geoflow.report(run)
    assert json.loads((run / "config.json").read_text())["dims"] == [8, 8, 8]
