import struct
import zlib

import numpy as np
import pytest

from shortcut.checkpoint import MAGIC, decode, encode, load_checkpoint, save_checkpoint
from shortcut.config import RunConfig
from shortcut.errors import CorruptionError
from shortcut.net import VelocityNet
from shortcut.optim import TrainState


def small_state(seed=0):
    cfg = RunConfig(hidden_dim=8, num_layers=2, time_embed_dim=4, steps=3, lr=3e-3)
    net = VelocityNet(cfg.net_config(), cfg.grid)
    state = TrainState.create(net.init(seed), lr=cfg.lr)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        state = state.apply_gradients({k: rng.normal(size=v.shape).astype(np.float32)
                                       for k, v in state.params.items()})
    return cfg, net, state


def test_round_trip_is_bitwise(tmp_path):
    cfg, net, state = small_state()
    save_checkpoint(cfg, state, tmp_path / "a.ckpt")
    ck = load_checkpoint(tmp_path / "a.ckpt")
    assert ck.config == cfg
    assert ck.state.step == 3 and ck.state.opt.step == 3
    assert ck.state.opt.lr == cfg.lr and ck.state.ema.ema_ratio == 0.999
    for a, b in ((state.params, ck.state.params), (state.ema.shadow, ck.state.ema.shadow),
                 (state.opt.m, ck.state.opt.m), (state.opt.v, ck.state.opt.v)):
        assert a.keys() == b.keys()
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()
    x = np.random.default_rng(0).normal(size=(9, 2))
    assert (net.forward(state.params, x, 0.3, 2).tobytes()
            == net.forward(ck.state.params, x, 0.3, 2).tobytes())
    assert encode(ck.config, ck.state) == (tmp_path / "a.ckpt").read_bytes()


def test_golden_layout():
    cfg, _, state = small_state()
    buf = encode(cfg, state)
    assert buf[:9] == b"SHORTCUT1"
    assert struct.unpack_from("<I", buf, 9) == (1,)
    (n,) = struct.unpack_from("<I", buf, 13)
    assert buf[17:17 + n].decode() == cfg.to_text()
    pos = 17 + n
    assert struct.unpack_from("<QQ", buf, pos) == (3, 3)
    assert struct.unpack_from("<6d", buf, pos + 16)[0] == cfg.lr
    assert struct.unpack("<I", buf[-4:])[0] == zlib.crc32(buf[:-4])
    # first tensor of the params section, little-endian float32
    sec = pos + 16 + 48
    assert struct.unpack_from("<I", buf, sec) == (4,)
    (ln,) = struct.unpack_from("<H", buf, sec + 4)
    assert buf[sec + 6:sec + 6 + ln] == b"params"
    p = sec + 6 + ln + 4
    (kl,) = struct.unpack_from("<H", buf, p)
    key = buf[p + 2:p + 2 + kl].decode()
    p += 2 + kl
    (ndim,) = struct.unpack_from("<B", buf, p)
    dims = struct.unpack_from(f"<{ndim}I", buf, p + 1)
    arr = state.params[key]
    assert dims == arr.shape
    start = p + 1 + 4 * ndim
    assert buf[start:start + arr.nbytes] == arr.astype("<f4").tobytes()


@pytest.mark.parametrize("cut", [0, 5, 12, 40, 200, -5, -1])
def test_truncation_detected(cut):
    cfg, _, state = small_state()
    buf = encode(cfg, state)
    with pytest.raises(CorruptionError) as e:
        decode(buf[:cut] if cut > 0 else buf[:cut])
    assert e.value.offset >= 0


def test_bad_magic_version_and_bitflip():
    cfg, _, state = small_state()
    buf = bytearray(encode(cfg, state))
    with pytest.raises(CorruptionError):
        decode(b"NOTSHORT1" + bytes(buf[9:]))
    bad = bytearray(buf)
    bad[9:13] = struct.pack("<I", 2)
    with pytest.raises(CorruptionError, match="version"):
        decode(bytes(bad))
    flip = bytearray(buf)
    flip[-40] ^= 0x10
    with pytest.raises(CorruptionError, match="checksum"):
        decode(bytes(flip))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_atomic_write_leaves_no_temp(tmp_path):
    cfg, _, state = small_state()
    save_checkpoint(cfg, state, tmp_path / "sub" / "x.ckpt")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["x.ckpt"]
