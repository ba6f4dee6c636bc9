import struct

import numpy as np
import pytest

from app.common.errors import CheckpointFormatError
from app.services.model import Checkpoint
from app.services.tensor_core import Rng, no_grad
from app.services.training import build_optimizer, TrainConfig


def test_save_load_preserves_model_outputs(tmp_path, tiny_model):
    path = Checkpoint.from_model(tiny_model, step=3, rng_state=99, note="x").save(tmp_path / "m.spkv")
    loaded = Checkpoint.load(path)
    assert loaded.step == 3 and loaded.rng_state == 99 and loaded.extra == {"note": "x"}
    restored = loaded.to_model()
    tokens = Rng(0).integers(32, (1, 8))
    with no_grad():
        a, _ = tiny_model.forward(tokens)
        b, _ = restored.forward(tokens)
    np.testing.assert_array_equal(a.data, b.data)
    assert loaded.digest() == Checkpoint.from_model(tiny_model).digest()


def test_optimizer_moments_survive_serialisation(tiny_model, tiny_gate):
    optimizer = build_optimizer(tiny_model, TrainConfig(total_steps=2, warmup_steps=0), tiny_gate)
    for _, tensor in tiny_model.parameters():
        tensor.grad = np.ones_like(tensor.data)
    optimizer.step(1e-3)
    blob = Checkpoint.from_model(tiny_model, optimizer_moments=optimizer.moments()).to_bytes()
    moments = Checkpoint.from_bytes(blob).optimizer_moments
    np.testing.assert_array_equal(moments["m"]["embed"], optimizer.m["embed"])
    np.testing.assert_array_equal(moments["v"]["final_norm"], optimizer.v["final_norm"])


def test_digest_can_exclude_predictors(tiny_model):
    before = Checkpoint.from_model(tiny_model)
    tiny_model.reset_predictors(1.0, Rng(4))
    after = Checkpoint.from_model(tiny_model)
    assert before.digest(include_predictors=False) == after.digest(include_predictors=False)
    assert before.digest() != after.digest()


def test_corrupt_payloads_are_rejected(tiny_model):
    blob = Checkpoint.from_model(tiny_model).to_bytes()
    with pytest.raises(CheckpointFormatError):
        Checkpoint.from_bytes(b"NOPE" + blob[4:])
    with pytest.raises(CheckpointFormatError):
        Checkpoint.from_bytes(blob[:-4])
    with pytest.raises(CheckpointFormatError):
        Checkpoint.from_bytes(blob + b"\x00")
    with pytest.raises(CheckpointFormatError):
        Checkpoint.from_bytes(blob[:6])
    _, _, meta_len = struct.unpack_from("<4sII", blob)
    with pytest.raises(CheckpointFormatError):
        Checkpoint.from_bytes(struct.pack("<4sII", b"SPKV", 2, meta_len) + blob[12:])


def test_frozen_predictors_stay_frozen_after_reload(tiny_model):
    tiny_model.blocks[1].predictor.freeze()
    loaded = Checkpoint.from_bytes(Checkpoint.from_model(tiny_model).to_bytes())
    assert loaded.frozen_predictors == [False, True]
    restored = loaded.to_model()
    assert [block.predictor.frozen for block in restored.blocks] == [False, True]
    trainable = {name for name, tensor in restored.predictor_parameters() if tensor.requires_grad}
    assert trainable and all(name.startswith("layers.0.") for name in trainable)
