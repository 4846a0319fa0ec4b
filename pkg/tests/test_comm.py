import struct
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualforge import comm

finite = st.floats(allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(0, 64), elements=st.one_of(finite, st.just(0.0), st.just(-0.0))))
def test_vector_round_trip_bit_exact(v):
    back = comm.decode_vector(comm.encode_vector(v), v.size)
    assert back.tobytes() == v.astype("<f8").tobytes()


def test_sparse_and_dense_choice():
    v = np.zeros(100)
    v[[3, 50]] = [1.5, -2.0]
    enc = comm.encode_vector(v)
    assert struct.unpack_from("<II", enc) == (comm.SPARSE, 2)
    assert len(enc) == 8 + 2 * 12
    dense = np.arange(1.0, 9.0)
    assert struct.unpack_from("<II", comm.encode_vector(dense)) == (comm.DENSE, 8)
    # exactly d/4 nonzeros stays dense
    q = np.zeros(8)
    q[:2] = 1.0
    assert struct.unpack_from("<I", comm.encode_vector(q))[0] == comm.DENSE
    # a negative zero is a stored entry
    z = np.zeros(40)
    z[7] = -0.0
    back = comm.decode_vector(comm.encode_vector(z), 40)
    assert np.signbit(back[7])


@pytest.mark.parametrize("bad", [np.array([1.0, np.nan]), np.array([np.inf, 0.0])])
def test_non_finite_rejected(bad):
    with pytest.raises(comm.CodecError):
        comm.encode_vector(bad)


def test_corrupt_payloads():
    enc = comm.encode_vector(np.arange(4.0))
    with pytest.raises(comm.CodecError):
        comm.decode_vector(enc[:-1], 4)
    with pytest.raises(comm.CodecError):
        comm.decode_vector(enc, 5)
    with pytest.raises(comm.CodecError):
        comm.decode_vector(b"\x07\x00\x00\x00\x00\x00\x00\x00")
    sp = comm.encode_vector(np.eye(1, 20, 3).ravel())
    with pytest.raises(comm.CodecError):
        comm.decode_vector(sp)  # sparse needs a length
    with pytest.raises(comm.CodecError):
        comm.decode_vector(sp, 3)  # index out of range
    frame = comm.encode_frame(comm.STOP, {"x": 1})
    with pytest.raises(comm.CodecError):
        comm.decode_frame(b"XXXX" + frame[4:])
    with pytest.raises(comm.CodecError):
        comm.decode_frame(frame + b"\x00")


def test_messages_round_trip():
    msg = comm.RoundBroadcast(7, np.array([0.0, -0.0, 1e-300, 5.0]), 0.25, 3, step=False, evaluate=True)
    back = comm.RoundBroadcast.decode(msg.encode())
    assert (back.round, back.kappa, back.y_version, back.step, back.evaluate) == (7, 0.25, 3, False, True)
    assert back.delta_v_tilde.tobytes() == msg.delta_v_tilde.tobytes()
    res = comm.RoundResult(2, 7, np.array([1.0, 2.0]), 0.1 + 0.2, -1 / 3, 11, 4, np.array([3.0, 4.0]))
    out = comm.RoundResult.decode(res.encode())
    assert out.loss_sum == 0.1 + 0.2 and out.conj_sum == -1 / 3
    assert (out.worker_id, out.round, out.n_ell, out.batch) == (2, 7, 11, 4)
    assert out.v_local_raw.tolist() == [3.0, 4.0]
    assert comm.RoundResult.decode(comm.RoundResult(0, 1, np.zeros(3), 0.0, 0.0, 1).encode()).v_local_raw is None
    with pytest.raises(comm.WorkerFailure) as err:
        comm.RoundResult.decode(comm.error_frame(5, "boom"))
    assert err.value.worker_id == 5


def _echo(wid):
    def handle(frame):
        kind = frame[4]
        if kind in (comm.STEP, comm.EVAL):
            msg = comm.RoundBroadcast.decode(frame)
            return comm.RoundResult(wid, msg.round, msg.delta_v_tilde * (wid + 1), float(wid), 0.0, 1).encode()
        return comm.encode_frame(comm.ACK, {"worker_id": wid})
    return handle


@pytest.mark.parametrize("name", ["inline", "threads"])
def test_transport_order_and_stats(name):
    with comm.make_transport(name, [_echo(w) for w in range(3)], timeout=5.0) as tr:
        tr.broadcast(comm.RoundBroadcast(1, np.ones(4)))
        with pytest.raises(comm.ProtocolError):
            tr.broadcast(comm.RoundBroadcast(2, np.ones(4)))
        with pytest.raises(comm.ProtocolError):
            tr.request(comm.SNAPSHOT)
        with pytest.raises(comm.ProtocolError):
            tr.gather(2)
        res = tr.gather(1)
        assert [r.worker_id for r in res] == [0, 1, 2]
        assert [r.delta_v[0] for r in res] == [1.0, 2.0, 3.0]
        with pytest.raises(comm.ProtocolError):
            tr.gather(1)
        tr.request(comm.STOP)
        assert tr.stats.rounds == 1 and tr.stats.messages_down == 3 and tr.stats.messages_up == 3
        assert tr.stats.control_messages == 6
        assert tr.stats.bytes_down > 0 and tr.stats.bytes_up > 0


@pytest.mark.parametrize("name", ["inline", "threads"])
def test_worker_exception_surfaces(name):
    def bad(frame):
        raise RuntimeError("disk on fire")
    with comm.make_transport(name, [_echo(0), bad], timeout=5.0) as tr:
        tr.broadcast(comm.RoundBroadcast(1, np.ones(2)))
        with pytest.raises(comm.WorkerFailure, match="disk on fire"):
            tr.gather(1)


def test_thread_timeout():
    def slow(frame):
        time.sleep(1.0)
        return _echo(1)(frame)
    tr = comm.ThreadTransport([_echo(0), slow], timeout=0.1)
    tr.broadcast(comm.RoundBroadcast(1, np.ones(2)))
    with pytest.raises(comm.CommTimeout, match=r"\[1\]"):
        tr.gather(1)
    tr.close()


def test_unknown_transport():
    with pytest.raises(ValueError):
        comm.make_transport("carrier-pigeon", [])
