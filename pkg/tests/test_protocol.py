import socket
import struct
import zlib

import numpy as np
import pytest

import pyFedFlow as pff


@pytest.fixture()
def pair():
    a, b = socket.socketpair()
    yield a, b
    a.close()
    b.close()


def sample_params(seed=0):
    spec = pff.ArchitectureSpec(input_dim=8, latent_dim=2, hidden_dims=(4,))
    return pff.init_params(spec, seed)


def test_frame_layout():
    data = pff.encode_frame(pff.MsgType.HELLO, 7, 3, b"abc")
    assert len(data) == 23 + 3 + 4
    magic, version, kind, round_index, client_id, length = struct.unpack_from("<4sHBIIQ", data)
    assert (magic, version, kind, round_index, client_id, length) == (b"FEDF", 1, 0, 7, 3, 3)
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])


def test_decode_frame_fields():
    frame = pff.decode_frame(pff.encode_frame(pff.MsgType.CLIENT_UPDATE, 12, 4, b"xyz"))
    assert frame == pff.Frame(pff.MsgType.CLIENT_UPDATE, 12, 4, b"xyz")


@pytest.mark.parametrize("position", [0, 5, 10, 25, -1])
def test_corrupted_frame_is_rejected(position):
    data = bytearray(pff.encode_frame(pff.MsgType.GLOBAL_PARAMS, 1, 0, b"payload"))
    data[position] ^= 0x01
    with pytest.raises(pff.ProtocolError):
        pff.decode_frame(bytes(data))


def test_decode_frame_length_mismatch():
    data = pff.encode_frame(pff.MsgType.SHUTDOWN, 1, 0)
    with pytest.raises(pff.ProtocolError):
        pff.decode_frame(data[:-1])
    with pytest.raises(pff.ProtocolError):
        pff.decode_frame(data + b"\x00")


def test_read_frame_over_socket(pair):
    a, b = pair
    pff.send_frame(a, pff.MsgType.ROUND_DONE, 2, 1, b"ok")
    frame = pff.read_frame(b)
    assert (frame.msg_type, frame.round_index, frame.client_id, frame.payload) == (pff.MsgType.ROUND_DONE, 2, 1, b"ok")


def test_read_frame_crc_flip_over_socket(pair):
    a, b = pair
    data = bytearray(pff.encode_frame(pff.MsgType.CLIENT_UPDATE, 1, 0, b"\x00" * 16))
    data[-2] ^= 0xFF
    a.sendall(bytes(data))
    with pytest.raises(pff.ProtocolError):
        pff.read_frame(b)


def test_read_frame_eof(pair):
    a, b = pair
    a.close()
    with pytest.raises(EOFError):
        pff.read_frame(b)


def test_read_frame_closed_mid_frame(pair):
    a, b = pair
    a.sendall(pff.encode_frame(pff.MsgType.HELLO, 0, 0, b"12345678")[:10])
    a.close()
    with pytest.raises(pff.ProtocolError):
        pff.read_frame(b)


def test_params_payload():
    params = sample_params()
    payload = pff.encode_params_payload(params, 42, 0.125)
    decoded, n_k, loss = pff.decode_params_payload(payload, with_loss=True)
    np.testing.assert_array_equal(decoded.values, params.values)
    assert (n_k, loss) == (42, 0.125)

    decoded, n_k, loss = pff.decode_params_payload(pff.encode_params_payload(params))
    assert (n_k, loss) == (0, None)
    with pytest.raises(pff.ProtocolError):
        pff.decode_params_payload(pff.encode_params_payload(params, 1), with_loss=True)
    with pytest.raises(pff.ProtocolError):
        pff.decode_params_payload(payload)
    with pytest.raises(pff.ProtocolError):
        pff.decode_params_payload(payload[:12])


def test_stale_round_frame_is_discarded(pair):
    server_side, client_side = pair
    stale = sample_params(1)
    fresh = sample_params(2)
    pff.send_frame(client_side, pff.MsgType.CLIENT_UPDATE, 1, 0, pff.encode_params_payload(stale, 10, 9.0))
    pff.send_frame(client_side, pff.MsgType.CLIENT_UPDATE, 2, 0, pff.encode_params_payload(fresh, 10, 0.5))

    pool = pff.SocketClientPool({0: server_side})
    (update,) = pool.dispatch(sample_params(0), 2, [0])
    np.testing.assert_array_equal(update.params_local.values, fresh.values)
    assert (update.n_k, update.local_train_loss) == (10, 0.5)
    assert pool.client_ids == [0]

    assert pff.read_frame(client_side).msg_type == pff.MsgType.GLOBAL_PARAMS
    assert pff.read_frame(client_side).msg_type == pff.MsgType.ROUND_DONE


def test_corrupted_update_closes_connection(pair):
    server_side, client_side = pair
    data = bytearray(pff.encode_frame(pff.MsgType.CLIENT_UPDATE, 1, 0,
                                      pff.encode_params_payload(sample_params(), 5, 0.1)))
    data[30] ^= 0x10
    client_side.sendall(bytes(data))
    pool = pff.SocketClientPool({0: server_side})
    with pytest.raises(pff.ProtocolError):
        pool.dispatch(sample_params(), 1, [0])
    assert pool.client_ids == []


def test_client_error_frame_surfaces(pair):
    server_side, client_side = pair
    pff.send_frame(client_side, pff.MsgType.ERROR, 1, 0, b"shard exploded")
    pool = pff.SocketClientPool({0: server_side})
    with pytest.raises(RuntimeError, match="shard exploded"):
        pool.dispatch(sample_params(), 1, [0])


def test_update_without_loss_trailer_closes_connection(pair):
    server_side, client_side = pair
    pff.send_frame(client_side, pff.MsgType.CLIENT_UPDATE, 1, 0, pff.encode_params_payload(sample_params(), 5))
    pool = pff.SocketClientPool({0: server_side})
    with pytest.raises(pff.ProtocolError):
        pool.dispatch(sample_params(), 1, [0])
    assert pool.client_ids == []
