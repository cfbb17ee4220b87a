import math
import os

import numpy as np
import pytest

import nbvsplat

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "..", "configs")

SMALL_SCENE = {
    "seed": 3,
    "gaussians": 8,
    "timesteps": 1,
    "cameras": {"count": 6, "test_count": 2, "image_size": 12},
}


def small_config(**extra):
    cfg = {
        "scene": SMALL_SCENE,
        "strategies": ["random", "ours-full"],
        "seeds": [0],
        "schedule": {"initial_views": 2, "rounds": 2, "iterations_per_round": 5, "final_iterations": 5},
    }
    cfg.update(extra)
    return cfg


def test_generate_frames():
    data = nbvsplat.generate(SMALL_SCENE)
    assert data.pool_size == 6
    assert data.test_size == 2
    frame = data.pool_frame(1)
    assert frame["rgb"].shape == (12, 12, 3)
    assert frame["labels"].shape == (12, 12)
    assert frame["rgb"].min() >= 0.0 and frame["rgb"].max() <= 1.0
    again = nbvsplat.generate(SMALL_SCENE).pool_frame(1)
    np.testing.assert_array_equal(frame["rgb"], again["rgb"])
    with pytest.raises(IndexError):
        data.test_frame(5)


def test_write_dataset(tmp_path):
    nbvsplat.generate(SMALL_SCENE).write(str(tmp_path))
    assert (tmp_path / "scene.json").exists()
    assert (tmp_path / "frames" / "0_0.ppm").exists()


def test_bad_spec_raises_spec_error():
    with pytest.raises(nbvsplat.SpecError):
        nbvsplat.generate(dict(SMALL_SCENE, gaussians=0))
    assert issubclass(nbvsplat.SpecError, nbvsplat.NbvError)


def test_eig_closed_form():
    got = nbvsplat.eig([1.0, 2.0, 0.0, 4.0], [1.0, 3.0, 5.0, 1.0], 0.5)
    assert got == pytest.approx(1 / 1.5 + 2 / 3.5 + 4 / 1.5)


def test_spearman_and_strategies():
    assert nbvsplat.spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert nbvsplat.spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert "ours-full" in nbvsplat.strategies()
    assert "random" in nbvsplat.strategies()


def test_run_single_is_reproducible():
    a = nbvsplat.run_single(small_config(), "ours-full", seed=0)
    b = nbvsplat.run_single(small_config(), "ours-full", seed=0)
    assert a["ok"]
    assert a["n_views"] == 4
    assert len(a["chosen"]) == 2
    assert a["metrics"] == b["metrics"]
    assert math.isfinite(a["metrics"]["psnr"])


def test_run_experiment_writes_outputs_and_heatmap(tmp_path):
    runs = nbvsplat.run_experiment(small_config(), output_dir=tmp_path)
    assert [r["strategy"] for r in runs] == ["random", "ours-full"]
    assert all(r["ok"] for r in runs)
    assert (tmp_path / "results.csv").read_text().startswith("strategy,seed,psnr")
    ckpt = tmp_path / "checkpoints" / "ours-full_s0.ckpt"
    heat = nbvsplat.checkpoint_heatmap(str(ckpt), view=0)
    assert heat.shape == (12, 12, 1)
    assert heat.min() >= 0.0 and heat.max() > 0.0
    with pytest.raises(nbvsplat.ContractError):
        nbvsplat.checkpoint_heatmap(str(ckpt), view=99)


def test_load_config_inlines_scene_path():
    cfg = nbvsplat.load_config(os.path.join(CONFIGS, "static.json"))
    assert "scene" in cfg and "scene_path" not in cfg
    assert cfg["scene"]["timesteps"] == 1
