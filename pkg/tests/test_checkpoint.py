"""Checkpoint bundle format: round trips, corruption and version guards."""

import json

import pytest
import torch

from mmfs.checkpoint import (BLOB_NAME, load_checkpoint, read_manifest,
                             save_checkpoint)
from mmfs.config import NANO
from mmfs.errors import (CheckpointCorruptionError, CheckpointFormatError,
                         CheckpointVersionError)
from mmfs.model import StylizerModel


@pytest.fixture()
def state():
    torch.manual_seed(0)
    return {"b.weight": torch.randn(3, 4), "a.bias": torch.randn(5),
            "c.scalar": torch.tensor(2.5)}


def test_save_load_save_byte_identical(tmp_path, state):
    save_checkpoint(state, tmp_path / "ck1", kind="test", config={"x": 1})
    loaded, manifest = load_checkpoint(tmp_path / "ck1", kind="test")
    save_checkpoint(loaded, tmp_path / "ck2", kind="test", config={"x": 1})
    b1 = (tmp_path / "ck1" / BLOB_NAME).read_bytes()
    b2 = (tmp_path / "ck2" / BLOB_NAME).read_bytes()
    assert b1 == b2
    m1 = (tmp_path / "ck1" / "manifest.json").read_text()
    m2 = (tmp_path / "ck2" / "manifest.json").read_text()
    assert m1 == m2


def test_loaded_values_exact(tmp_path, state):
    save_checkpoint(state, tmp_path / "ck", kind="test")
    loaded, _ = load_checkpoint(tmp_path / "ck")
    assert set(loaded) == set(state)
    for name in state:
        assert torch.equal(loaded[name], state[name])
        assert loaded[name].shape == state[name].shape


def test_manifest_structure(tmp_path, state):
    manifest = save_checkpoint(state, tmp_path / "ck", kind="test",
                               config={"profile": "nano"}, extra={"step": 7})
    assert manifest["format_version"] == 1
    assert manifest["kind"] == "test"
    assert manifest["config"] == {"profile": "nano"}
    assert manifest["extra"] == {"step": 7}
    entry = manifest["tensors"]["b.weight"]
    assert entry["dtype"] == "f32"
    assert entry["shape"] == [3, 4]
    assert entry["byte_length"] == 3 * 4 * 4
    assert entry["file"] == BLOB_NAME
    # sorted-name order means offsets are monotonically increasing by name
    names = sorted(manifest["tensors"])
    offsets = [manifest["tensors"][n]["byte_offset"] for n in names]
    assert offsets == sorted(offsets)


def test_flipped_byte_names_the_tensor(tmp_path, state):
    save_checkpoint(state, tmp_path / "ck", kind="test")
    manifest = read_manifest(tmp_path / "ck")
    victim = sorted(manifest["tensors"])[1]  # some middle tensor
    meta = manifest["tensors"][victim]
    blob_path = tmp_path / "ck" / BLOB_NAME
    raw = bytearray(blob_path.read_bytes())
    raw[meta["byte_offset"]] ^= 0x01
    blob_path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointCorruptionError) as err:
        load_checkpoint(tmp_path / "ck")
    assert err.value.tensor_name == victim
    assert victim in str(err.value)


def test_truncated_blob_rejected(tmp_path, state):
    save_checkpoint(state, tmp_path / "ck", kind="test")
    blob_path = tmp_path / "ck" / BLOB_NAME
    blob_path.write_bytes(blob_path.read_bytes()[:-8])
    with pytest.raises(CheckpointCorruptionError):
        load_checkpoint(tmp_path / "ck")


def test_version_mismatch_rejected(tmp_path, state):
    save_checkpoint(state, tmp_path / "ck", kind="test")
    manifest_path = tmp_path / "ck" / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["format_version"] = 2
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(tmp_path / "ck")


def test_kind_mismatch_rejected(tmp_path, state):
    save_checkpoint(state, tmp_path / "ck", kind="stylizer")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "ck", kind="ema")


def test_missing_manifest_and_blob(tmp_path, state):
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "nothing")
    save_checkpoint(state, tmp_path / "ck", kind="test")
    (tmp_path / "ck" / BLOB_NAME).unlink()
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "ck")


def test_garbage_manifest_rejected(tmp_path):
    (tmp_path / "ck").mkdir()
    (tmp_path / "ck" / "manifest.json").write_text("{not json")
    with pytest.raises(CheckpointFormatError):
        read_manifest(tmp_path / "ck")


# -- full model persistence -----------------------------------------------------


def test_model_save_load_save_byte_identical(tmp_path):
    model = StylizerModel(NANO, seed=3)
    model.prior.mark_pretrained()
    model.save(tmp_path / "m1")
    again = StylizerModel.load(tmp_path / "m1")
    again.save(tmp_path / "m2")
    assert (tmp_path / "m1" / BLOB_NAME).read_bytes() == \
        (tmp_path / "m2" / BLOB_NAME).read_bytes()
    assert (tmp_path / "m1" / "manifest.json").read_text() == \
        (tmp_path / "m2" / "manifest.json").read_text()


def test_reloaded_model_reproduces_recorded_output(tmp_path):
    """Outputs recorded before saving must be reproduced exactly after
    loading into a fresh process-independent model object."""
    model = StylizerModel(NANO, seed=4)
    model.prior.mark_pretrained()
    img = torch.randn(2, 3, NANO.resolution, NANO.resolution,
                      generator=torch.Generator().manual_seed(0))
    gen = torch.Generator().manual_seed(11)
    with torch.no_grad():
        recorded = model.stylize_random(img, gen)
    model.save(tmp_path / "m")
    del model
    loaded = StylizerModel.load(tmp_path / "m")
    gen = torch.Generator().manual_seed(11)
    with torch.no_grad():
        replayed = loaded.stylize_random(img, gen)
    assert torch.equal(recorded, replayed)
    assert loaded.prior.is_pretrained  # flag survives the round trip


def test_model_manifest_echoes_config(tmp_path):
    model = StylizerModel(NANO, seed=5, backbone_seed=2)
    model.save(tmp_path / "m")
    manifest = read_manifest(tmp_path / "m")
    assert manifest["kind"] == "stylizer"
    assert manifest["config"]["profile"] == "nano"
    assert manifest["config"]["seed"] == 5
    assert manifest["config"]["backbone_seed"] == 2
