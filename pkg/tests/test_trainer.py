import json

import numpy as np
import pytest

from depthfusion import data as D
from depthfusion.model import FusionMode, ModelConfig, build_model
from depthfusion.tensor import Tensor
from depthfusion.trainer import (OptimState, TrainConfig, TrainingAborted,
                                 adam_step, lr_schedule, train, train_step)

SMALL = ModelConfig(input_height=32, input_width=32, base_channels=4,
                    encoder_stages=2, fusion_mode=FusionMode.CONCAT_TRUNCATE)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    directory = tmp_path_factory.mktemp("data")
    D.generate_dataset(directory, 4, {"day": 1.0}, seed=0,
                       spec=D.SceneSpec(width=32, height=32))
    return directory


def test_lr_schedule_values():
    cfg = TrainConfig()
    assert lr_schedule(1, cfg) == 1e-4
    assert lr_schedule(7, cfg) == 1e-4
    assert lr_schedule(8, cfg) == pytest.approx(2e-5, rel=1e-12)
    assert lr_schedule(14, cfg) == pytest.approx(2e-5, rel=1e-12)
    assert lr_schedule(15, cfg) == pytest.approx(4e-6, rel=1e-12)
    with pytest.raises(ValueError):
        lr_schedule(0, cfg)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr0=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_adam_first_step_is_signed_lr():
    w = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
    params = {"w": w}
    state = OptimState(lr=1e-3)
    adam_step(params, {"w": np.array([2.0, -0.5, 1e-3], dtype=np.float32)},
              state)
    # first bias-corrected step is ~ -lr * sign(g)
    np.testing.assert_allclose(w.data, [-1e-3, 1e-3, -1e-3], rtol=1e-4)
    assert state.t == 1


def test_adam_zero_gradient_is_noop():
    w = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    state = OptimState()
    adam_step({"w": w}, {"w": np.zeros(2, dtype=np.float32)}, state)
    np.testing.assert_array_equal(w.data, [1.0, 1.0])


def test_adam_rejects_nonfinite_gradient():
    w = Tensor(np.ones(1, dtype=np.float32), requires_grad=True)
    with pytest.raises(TrainingAborted):
        adam_step({"w": w}, {"w": np.array([np.nan], dtype=np.float32)},
                  OptimState())


def test_train_step_reduces_loss_on_repetition(dataset):
    model = build_model(SMALL)
    cfg = TrainConfig(epochs=1, augment=False)
    samples = [D.load_sample(dataset, i) for i in D.list_sample_ids(dataset)][:2]
    state = OptimState(lr=1e-3)
    first = train_step(model, samples, cfg, state)
    for _ in range(30):
        last = train_step(model, samples, cfg, state)
    assert last < first


def test_train_writes_log_and_checkpoints(dataset, tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=2, augment=False)
    out = tmp_path / "run"
    model, log = train(cfg, SMALL, dataset, val_dir=dataset, out_dir=out)
    assert len(log) == 2
    assert (out / "epoch_001.ckpt").exists()
    assert (out / "epoch_002.ckpt").exists()
    assert (out / "last.ckpt").exists()
    lines = [json.loads(l) for l in (out / "log.jsonl").read_text().splitlines()]
    assert [l["epoch"] for l in lines] == [1, 2]
    assert all("val" in l and "train_loss" in l for l in lines)
    assert lines[0]["lr"] == 1e-4


def test_training_is_deterministic(dataset, tmp_path):
    cfg = TrainConfig(epochs=1, batch_size=2)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    train(cfg, SMALL, dataset, out_dir=out_a)
    train(cfg, SMALL, dataset, out_dir=out_b)
    assert (out_a / "last.ckpt").read_bytes() == (out_b / "last.ckpt").read_bytes()
    assert (out_a / "log.jsonl").read_text() == (out_b / "log.jsonl").read_text()


def test_resume_matches_uninterrupted_run(dataset, tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=2)
    full = tmp_path / "full"
    train(cfg, SMALL, dataset, out_dir=full)

    split = tmp_path / "split"
    train(TrainConfig(epochs=1, batch_size=2), SMALL, dataset, out_dir=split)
    train(cfg, SMALL, dataset, out_dir=split,
          resume=split / "epoch_001.ckpt")
    assert (full / "last.ckpt").read_bytes() == (split / "last.ckpt").read_bytes()
    assert (full / "epoch_002.ckpt").read_bytes() == \
        (split / "epoch_002.ckpt").read_bytes()


def test_train_rejects_empty_directory(tmp_path):
    with pytest.raises(ValueError):
        train(TrainConfig(epochs=1), SMALL, tmp_path)
