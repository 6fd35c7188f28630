import numpy as np
import pytest
from conftest import small_model

from innmorph import checkpoint
from innmorph.errors import CheckpointError
from innmorph.flow import IoLayout, inn_forward, inn_inverse
from innmorph.training import BaselineModel, TrainConfig, load_model, save_model


def test_dumps_is_deterministic_and_round_trips(rng):
    arrays = {"b": rng.standard_normal((2, 3)), "a": np.arange(4)}
    blob = checkpoint.dumps({"k": [1, 2]}, arrays)
    assert blob == checkpoint.dumps({"k": [1, 2]}, dict(reversed(list(arrays.items()))))
    meta, back = checkpoint.loads(blob)
    assert meta == {"k": [1, 2]}
    assert back["b"].tobytes() == arrays["b"].tobytes()
    assert back["a"].dtype == np.int64 and list(back["a"]) == [0, 1, 2, 3]


@pytest.mark.parametrize(
    "mangle, message",
    [
        (lambda b: b[:-5], "payload"),
        (lambda b: b[:20], "truncated"),
        (lambda b: b"XXXXXXXX" + b[8:], "magic"),
        (lambda b: b[:-1] + bytes([b[-1] ^ 1]), "checksum"),
    ],
)
def test_corrupt_blobs_are_rejected(rng, mangle, message):
    blob = checkpoint.dumps({}, {"w": rng.standard_normal(10)})
    with pytest.raises(CheckpointError, match=message):
        checkpoint.loads(mangle(blob))


def test_unknown_version_rejected():
    blob = bytearray(checkpoint.dumps({}, {}))
    blob[8] = 99
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.loads(bytes(blob))


def test_model_round_trip_is_bit_exact(tmp_path, rng):
    lay = IoLayout.for_task("inflection", 6, 3, z_d=2, z_cat=3)
    model = small_model(lay, seed=4, hidden=8, rng=rng)
    path = tmp_path / "m.ckpt"
    save_model(model, path)
    again = load_model(path)
    assert again.layout == model.layout
    assert [p.forward_index.tolist() for p in again.permutations] == [p.forward_index.tolist() for p in model.permutations]
    for k, v in model.parameters().items():
        assert again.parameters()[k].tobytes() == v.tobytes()
    x = rng.standard_normal((3, 9))
    assert inn_forward(again, x)[0].tobytes() == inn_forward(model, x)[0].tobytes()
    y, z = rng.standard_normal((3, 6)), rng.standard_normal((3, 6))
    assert inn_inverse(again, y, z).tobytes() == inn_inverse(model, y, z).tobytes()
    save_model(again, tmp_path / "m2.ckpt")
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()


def test_baseline_round_trip(tmp_path, rng):
    model = BaselineModel.create("inflection", 5, 2, TrainConfig(hidden=6))
    save_model(model, tmp_path / "b.ckpt", extra={"tags": ["A", "B"]})
    again, meta = load_model(tmp_path / "b.ckpt", with_meta=True)
    assert meta["extra"]["tags"] == ["A", "B"]
    x = rng.standard_normal(7)
    np.testing.assert_array_equal(again.predict_vectors(x), model.predict_vectors(x))


def test_truncated_file_gives_error_and_no_model(tmp_path):
    model = small_model(IoLayout(4, 4, task="lemmatization"), seed=0)
    path = tmp_path / "m.ckpt"
    save_model(model, path)
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(CheckpointError):
        load_model(path)


def test_missing_file_is_checkpoint_error(tmp_path):
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "absent.ckpt")
