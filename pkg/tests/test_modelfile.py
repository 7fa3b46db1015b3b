import struct

import numpy as np
import pytest

from bidense import modelfile
from bidense.modelfile import MAGIC, VERSION, ModelFileError
from bidense.network import BiDenseModel, Context, ModelConfig, f32

CONFIG = ModelConfig(depths=[1, 1], widths=[4, 8], decoder_width=4, out_channels=3)


def f32_model(config=CONFIG, seed=0):
    model = BiDenseModel(config, seed=seed)
    for p in model.parameters():
        p.data = f32(p.data)
    for mod in model.modules():
        for k in mod.buffers:
            mod.buffers[k] = f32(mod.buffers[k])
    model.repack()
    return model


@pytest.fixture
def blob():
    return modelfile.dumps(f32_model())


def test_round_trip_is_byte_and_bit_exact(blob, rng):
    model = modelfile.loads(blob)
    assert modelfile.dumps(model) == blob
    x = rng.normal(size=(2, 3, 16, 16))
    original = f32_model()
    for ctx in (Context(), Context(packed=True)):
        np.testing.assert_array_equal(model(x, ctx).data, original(x, ctx).data)


@pytest.mark.parametrize("config", [
    ModelConfig(depths=[1], widths=[4], decoder_width=4, full_precision=True),
    ModelConfig(depths=[1], widths=[4], decoder_width=4, binarizer="elastic", bypass=False),
    ModelConfig(depths=[1], widths=[4], decoder_width=4, task="depth", out_channels=1,
                activation="none"),
])
def test_round_trip_across_configs(config):
    blob = modelfile.dumps(f32_model(config))
    assert modelfile.dumps(modelfile.loads(blob)) == blob


def test_save_and_load_files(tmp_path, blob):
    path = tmp_path / "m.bdns"
    modelfile.save(modelfile.loads(blob), path)
    assert path.read_bytes() == blob
    assert modelfile.dumps(modelfile.load(path)) == blob


def test_missing_file():
    with pytest.raises(ModelFileError, match="cannot read"):
        modelfile.load("/nonexistent/model.bdns")


def test_non_float32_parameters_refused():
    model = BiDenseModel(CONFIG)
    model.stem.weight.data[0, 0, 0, 0] = 0.1
    with pytest.raises(ValueError, match="float32"):
        modelfile.dumps(model)


@pytest.mark.parametrize("cut", [0, 3, 7, 20, 200, -5, -1])
def test_truncation_detected(blob, cut):
    with pytest.raises(ModelFileError, match="truncated"):
        modelfile.loads(blob[:cut])


def test_trailing_bytes_rejected(blob):
    with pytest.raises(ModelFileError, match="trailing"):
        modelfile.loads(blob + b"\0")


def test_bad_magic(blob):
    with pytest.raises(ModelFileError, match="magic"):
        modelfile.loads(b"XXXX" + blob[4:])


def test_future_version_rejected(blob):
    bumped = MAGIC + struct.pack("<I", VERSION + 1) + blob[8:]
    with pytest.raises(ModelFileError, match="version"):
        modelfile.loads(bumped)


def first_record_tag_offset(blob):
    (config_len,) = struct.unpack_from("<I", blob, 8)
    pos = 12 + config_len + 4
    (name_len,) = struct.unpack_from("<H", blob, pos)
    return pos + 2 + name_len


def test_unknown_kind_tag_rejected_with_version_guidance(blob):
    pos = first_record_tag_offset(blob)
    tampered = blob[:pos] + bytes([200]) + blob[pos + 1:]
    with pytest.raises(ModelFileError, match="unknown layer kind tag 200.*newer reader"):
        modelfile.loads(tampered)


def test_mismatched_kind_tag_rejected(blob):
    pos = first_record_tag_offset(blob)
    tampered = blob[:pos] + bytes([blob[pos] % 7 + 1]) + blob[pos + 1:]
    with pytest.raises(ModelFileError, match="does not match"):
        modelfile.loads(tampered)


def test_tampered_packed_bits_rejected(blob):
    model = f32_model()
    bits, _ = model.binary_layers()[0].packed
    word = bits.words.astype("<u8").tobytes()
    pos = blob.index(word)
    flipped = bytes([blob[pos] ^ 1])
    with pytest.raises(ModelFileError, match="packed weights"):
        modelfile.loads(blob[:pos] + flipped + blob[pos + 1:])


def test_invalid_config_record(blob):
    (config_len,) = struct.unpack_from("<I", blob, 8)
    bad = b'{"depths": []}'
    tampered = blob[:8] + struct.pack("<I", len(bad)) + bad + blob[12 + config_len:]
    with pytest.raises(ModelFileError, match="invalid config"):
        modelfile.loads(tampered)
