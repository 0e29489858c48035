import struct

import numpy as np
import pytest

from stan_eeg.checkpoint import MAGIC, VERSION, load_checkpoint, read_checkpoint, save_checkpoint
from stan_eeg.discriminator import DiscriminatorConfig, DiscriminatorParams
from stan_eeg.errors import ParseError
from stan_eeg.model import StanConfig, StanModel, freeze
from stan_eeg.nn import checksum

STAN = StanConfig(M=2, H=2, n=6, T=16, spatial_dim=4, temporal_dim=5)
DCFG = DiscriminatorConfig(spatial_kernel=3, temporal_kernel=4, temporal_stride=4, feature_dim=8,
                           fc_units=4, fc_layers=2)


@pytest.fixture
def saved(tmp_path):
    model = freeze(StanModel.create(STAN, 3))
    disc = DiscriminatorParams.init(DCFG, STAN, np.random.default_rng(4))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, disc, DCFG, meta={"offset": 1.5})
    return path, model, disc


def test_round_trip_bitwise(saved):
    path, model, disc = saved
    m2, d2, dcfg, meta = load_checkpoint(path)
    assert m2.cfg == STAN and dcfg == DCFG and meta == {"offset": 1.5}
    assert m2.frozen
    assert checksum(m2.params) == checksum(model.params)
    assert checksum(d2) == checksum(disc)


def test_backbone_only(tmp_path):
    model = StanModel.create(STAN, 0)
    save_checkpoint(tmp_path / "b.ckpt", model)
    m2, d2, dcfg, _ = load_checkpoint(tmp_path / "b.ckpt")
    assert d2 is None and dcfg is None and not m2.frozen


def test_layout_is_little_endian(saved):
    path, model, _ = saved
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    version, hlen = struct.unpack_from("<II", raw, 8)
    assert version == VERSION
    header, arrays = read_checkpoint(path)
    assert header["stan"]["n"] == 6
    first = next(iter(arrays))
    assert first.startswith("backbone.")


@pytest.mark.parametrize("mutate,match", [
    (lambda raw: b"NOTACKPT" + raw[8:], "magic"),
    (lambda raw: raw[:8] + struct.pack("<I", 99) + raw[12:], "version"),
    (lambda raw: raw[:-5], "truncated"),
    (lambda raw: raw[:16] + b"x" + raw[17:], "header"),
])
def test_corrupt_files(saved, mutate, match):
    path = saved[0]
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(ParseError, match=match):
        load_checkpoint(path)


def test_config_shape_mismatch(tmp_path):
    model = StanModel.create(STAN, 0)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    raw = path.read_bytes()
    hlen = struct.unpack_from("<I", raw, 12)[0]
    head = raw[16:16 + hlen].replace(b'"spatial_dim": 4', b'"spatial_dim": 5')
    path.write_bytes(raw[:12] + struct.pack("<I", len(head)) + head + raw[16 + hlen:])
    with pytest.raises(ParseError, match="shape"):
        load_checkpoint(path)
