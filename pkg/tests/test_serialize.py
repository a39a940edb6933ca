"""Model persistence: manifest structure, bit-exact round trips."""

import json

import numpy as np
import pytest

from corrfusion.dataset import gen_synthetic, split_dataset
from corrfusion.errors import ManifestError
from corrfusion.model import build_model, predict, state_arrays
from corrfusion.serialize import load_model, save_model
from corrfusion.train import TrainConfig, train


def trained_model(head="corrfusion", epochs=2):
    ds = gen_synthetic(n_classes=3, d_in=6, n_pairs=80, p_change=0.2,
                       noise_sigma=0.5, temporal_corr=0.6, seed=1)
    splits = split_dataset(ds.n, seed=0)
    cfg = TrainConfig(head=head, epochs=epochs, batch_size=8, hidden=[8],
                      embed_dim=8, r=2, seed=0)
    return train(cfg, ds, splits).model, ds


class TestRoundTrip:
    @pytest.mark.parametrize("head", ["corrfusion", "softdcca", "dcca", "nofusion"])
    def test_bit_exact_arrays(self, tmp_path, head):
        model, _ = trained_model(head=head)
        save_model(model, tmp_path / "m")
        loaded = load_model(tmp_path / "m")
        original = state_arrays(model)
        for name, arr in state_arrays(loaded).items():
            np.testing.assert_array_equal(arr, original[name], err_msg=name)
        if model.fusion is not None:
            assert loaded.fusion.initialized == model.fusion.initialized
            assert loaded.fusion.r == model.fusion.r
            assert loaded.fusion.rho == model.fusion.rho

    def test_predictions_survive_round_trip(self, tmp_path):
        model, ds = trained_model()
        save_model(model, tmp_path / "m")
        loaded = load_model(tmp_path / "m")
        p1, p2 = predict(model, ds.x1, ds.x2)
        q1, q2 = predict(loaded, ds.x1, ds.x2)
        np.testing.assert_array_equal(p1, q1)
        np.testing.assert_array_equal(p2, q2)

    def test_covariances_persisted(self, tmp_path):
        model, _ = trained_model()
        assert model.fusion.initialized
        save_model(model, tmp_path / "m")
        loaded = load_model(tmp_path / "m")
        np.testing.assert_array_equal(loaded.fusion.cov_xx, model.fusion.cov_xx)
        np.testing.assert_array_equal(loaded.fusion.cov_yy, model.fusion.cov_yy)

    def test_save_is_deterministic(self, tmp_path):
        model, _ = trained_model()
        save_model(model, tmp_path / "a")
        save_model(model, tmp_path / "b")
        assert (tmp_path / "a" / "params.bin").read_bytes() == \
               (tmp_path / "b" / "params.bin").read_bytes()
        assert (tmp_path / "a" / "manifest.json").read_bytes() == \
               (tmp_path / "b" / "manifest.json").read_bytes()


class TestManifestValidation:
    def test_missing_file(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(FileNotFoundError, match="manifest.json"):
            load_model(tmp_path / "empty")

    def test_wrong_format_tag(self, tmp_path):
        model, _ = trained_model()
        save_model(model, tmp_path / "m")
        path = tmp_path / "m" / "manifest.json"
        manifest = json.loads(path.read_text())
        manifest["format"] = "something-else"
        path.write_text(json.dumps(manifest))
        with pytest.raises(ManifestError, match="format"):
            load_model(tmp_path / "m")

    def test_missing_tensor_entry(self, tmp_path):
        model, _ = trained_model()
        save_model(model, tmp_path / "m")
        path = tmp_path / "m" / "manifest.json"
        manifest = json.loads(path.read_text())
        manifest["tensors"] = manifest["tensors"][:-1]
        path.write_text(json.dumps(manifest))
        with pytest.raises(ManifestError, match="does not match"):
            load_model(tmp_path / "m")

    def test_truncated_blob(self, tmp_path):
        model, _ = trained_model()
        save_model(model, tmp_path / "m")
        blob = (tmp_path / "m" / "params.bin").read_bytes()
        (tmp_path / "m" / "params.bin").write_bytes(blob[:-16])
        with pytest.raises(ManifestError, match="overruns"):
            load_model(tmp_path / "m")

    def test_shape_mismatch(self, tmp_path):
        model, _ = trained_model()
        save_model(model, tmp_path / "m")
        path = tmp_path / "m" / "manifest.json"
        manifest = json.loads(path.read_text())
        manifest["tensors"][0]["shape"] = [1, 1]
        path.write_text(json.dumps(manifest))
        with pytest.raises(ManifestError, match="shape"):
            load_model(tmp_path / "m")
