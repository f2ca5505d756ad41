import numpy as np
import pytest

from brainkan.autodiff import Tensor
from brainkan.checkpoint import CheckpointError, load_checkpoint, restore_checkpoint, save_checkpoint


def _params(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "w": Tensor(rng.normal(size=(3, 4)), requires_grad=True),
        "b": Tensor(rng.normal(size=(4,)), requires_grad=True),
        "scalar": Tensor(rng.normal(size=()), requires_grad=True),
    }


def test_roundtrip_exact(tmp_path):
    params = _params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(params)
    for name, tensor in params.items():
        np.testing.assert_array_equal(loaded[name], tensor.data)


def test_restore_into_existing(tmp_path):
    params = _params(1)
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    fresh = _params(2)
    restore_checkpoint(fresh, path)
    for name in params:
        np.testing.assert_array_equal(fresh[name].data, params[name].data)


def test_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 30)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_truncated_blob(tmp_path):
    params = _params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_restore_shape_mismatch(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint({"w": Tensor(np.zeros((2, 2)), requires_grad=True)}, path)
    with pytest.raises(CheckpointError, match="shape"):
        restore_checkpoint({"w": Tensor(np.zeros((3, 3)), requires_grad=True)}, path)
