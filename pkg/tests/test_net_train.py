"""End-to-end training behavior on a small synthetic fixture.

The toy set is 2 gestures x 10 frames x 3 views = 60 images (20 fused
triplets); the silhouettes are linearly separable, so 10 epochs must reach
perfect held-out accuracy.
"""

import numpy as np
import pytest
import torch

from theta import handmodel as hm
from theta import net as tn
from theta import synthview as sv
from theta.config import config_from_dict
from theta.errors import DataError
from theta.pipeline import load_training_data


def _toy_table():
    return [
        hm.GestureAnnotation(1, "Closed Fist", np.full(15, 90.0)),
        hm.GestureAnnotation(2, "Open Palm", np.full(15, 180.0)),
    ]


@pytest.fixture(scope="module")
def toy_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("toyset")
    manifest = sv.generate_dataset(_toy_table(), 10, out, seed=0)
    assert len(manifest["samples"]) == 60
    return load_training_data(out, config_from_dict({}))


@pytest.fixture(scope="module")
def trained(toy_data):
    return tn.train(toy_data, tn.NetworkSpec(), epochs=10, seed=0, batch_size=4)


class TestTrain:
    def test_toy_set_converges_to_perfect_val_accuracy(self, trained):
        assert trained.best_val_acc == 1.0
        assert trained.history[-1]["val_acc"] == 1.0

    def test_history_shape(self, trained):
        assert len(trained.history) == 10
        for i, rec in enumerate(trained.history):
            assert rec["epoch"] == i
            assert set(rec) == {"epoch", "train_loss", "train_acc", "val_loss", "val_acc"}
            assert rec["train_loss"] >= 0.0
            assert 0.0 <= rec["train_acc"] <= 1.0

    def test_deterministic_checkpoints(self, toy_data, trained, tmp_path):
        again = tn.train(toy_data, tn.NetworkSpec(), epochs=10, seed=0, batch_size=4)
        assert again.history == trained.history
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        tn.save_checkpoint(trained.best_state, a, spec=tn.NetworkSpec())
        tn.save_checkpoint(again.best_state, b, spec=tn.NetworkSpec())
        assert a.read_bytes() == b.read_bytes()

    def test_freeze_leaves_frozen_parameters_bit_identical(self, toy_data):
        result = tn.train(
            toy_data, tn.NetworkSpec(), epochs=2, seed=0, freeze=tn.FREEZE_ALL_BUT_LAST_2
        )
        reference = tn.build_network(tn.NetworkSpec(), seed=0)
        frozen_prefixes = ("stem", "stem_bn", "blocks.0.", "blocks.1.", "blocks.2.")
        ref_params = dict(reference.named_parameters())
        changed_any = False
        for name, p in result.net.named_parameters():
            if name.startswith(frozen_prefixes):
                assert torch.equal(p, ref_params[name]), name
            elif not torch.equal(p, ref_params[name]):
                changed_any = True
        assert changed_any

    def test_epochs_zero_returns_initialization(self, toy_data, tmp_path):
        result = tn.train(toy_data, tn.NetworkSpec(), epochs=0, seed=3)
        assert result.history == []
        init = tn.build_network(tn.NetworkSpec(), seed=3)
        for k, v in tn._clone_state(init).items():
            assert torch.equal(result.best_state[k], v), k

    def test_empty_split_raises(self):
        data = tn.TrainingData(
            inputs=np.zeros((2, 9, 224, 224), dtype=np.uint8),
            labels=np.zeros((2, 15), dtype=np.int64),
            groups=np.array([1, 2]),
        )
        with pytest.raises(DataError):
            tn.train(data, tn.NetworkSpec(), epochs=1, seed=0, val_fraction=0.2)

    def test_best_state_predicts_heldout_split(self, toy_data, trained, tmp_path):
        path = tmp_path / "best.ckpt"
        tn.save_checkpoint(trained.best_state, path, spec=tn.NetworkSpec())
        net = tn.load_checkpoint(path)
        _, val_idx = tn.stratified_split(toy_data.groups, 0.2, seed=0)
        x = tn.TrainingData.dequantize(toy_data.inputs[val_idx])
        bins, conf = tn.predict_bins(net, x)
        assert np.array_equal(bins, toy_data.labels[val_idx])
        assert np.all(conf >= 0.1)
