import struct

import numpy as np
import pytest

from covnet.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from covnet.errors import FormatError, ShapeError
from covnet.optim import Adam, AdamState, adam_step
from covnet.tensor import Tensor


def reference_adam(p, g, m, v, t, lr=1e-4, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam with explicit bias-corrected moments."""
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    return p - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def test_zero_gradient_leaves_parameters():
    p = np.array([1.0, -2.0, 3.0])
    state = AdamState()
    (out,) = adam_step([p], [np.zeros(3)], state)
    np.testing.assert_array_equal(out, p)
    assert state.step == 1


def test_first_step_closed_form():
    state = AdamState()
    (out,) = adam_step([np.array(0.0)], [np.array(1.0)], state)
    assert abs(out - (-1e-4)) < 1e-6


def test_matches_textbook_adam(rng):
    p = rng.standard_normal(5)
    ref_p, m, v = p.copy(), np.zeros(5), np.zeros(5)
    state = AdamState(learning_rate=1e-2)
    for t in range(1, 30):
        g = rng.standard_normal(5)
        (p,) = adam_step([p], [g], state)
        ref_p, m, v = reference_adam(ref_p, g, m, v, t, lr=1e-2)
    # the folded bias correction moves epsilon slightly; far below the tolerance
    np.testing.assert_allclose(p, ref_p, rtol=1e-9, atol=1e-12)


def test_quadratic_descent_is_monotone():
    w = np.array(1.0)
    state = AdamState(learning_rate=1e-2)
    trace = []
    for _ in range(100):
        (w,) = adam_step([w], [2 * w], state)
        trace.append(abs(float(w)))
    windows = [max(trace[i : i + 10]) for i in range(0, 100, 10)]
    assert all(b < a for a, b in zip(windows, windows[1:]))


def test_step_counter_and_shape_checks():
    state = AdamState()
    adam_step([np.zeros(2)], [np.ones(2)], state)
    adam_step([np.zeros(2)], [np.ones(2)], state)
    assert state.step == 2
    with pytest.raises(ShapeError):
        adam_step([np.zeros(2)], [np.ones(3)], state)
    with pytest.raises(ShapeError):
        adam_step([np.zeros(2)], [np.ones(2), np.ones(2)], AdamState())


def test_adam_does_not_mutate_inputs():
    p, g = np.ones(3), np.full(3, 0.5)
    adam_step([p], [g], AdamState())
    np.testing.assert_array_equal(p, 1.0)
    np.testing.assert_array_equal(g, 0.5)


def test_adam_wrapper_updates_leaves():
    w = Tensor(np.array([3.0, -1.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    for _ in range(50):
        (w * w).sum().backward()
        opt.step()
        opt.zero_grad()
    assert np.all(np.abs(w.numpy()) < 0.5)


# checkpoints


def test_checkpoint_round_trip(tmp_path, rng):
    params = {"enc.w": rng.standard_normal((3, 4)).astype(np.float32), "b": np.zeros(2, np.float32),
              "scalar": np.array(1.5, np.float32)}
    path = save_checkpoint(tmp_path / "m.cvnt", params)
    back = load_checkpoint(path)
    assert list(back) == list(params)
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()


def test_checkpoint_layout():
    blob = encode_checkpoint({"ab": np.array([[1.0, 2.0]], np.float32)})
    expected = b"CVNT" + struct.pack("<II", 1, 1) + struct.pack("<H", 2) + b"ab"
    expected += struct.pack("<BII", 2, 1, 2) + struct.pack("<2f", 1.0, 2.0)
    assert blob == expected


@pytest.mark.parametrize("cut", [3, 12, 20])
def test_checkpoint_rejects_damage(cut):
    blob = encode_checkpoint({"w": np.ones((2, 2), np.float32)})
    with pytest.raises(FormatError):
        decode_checkpoint(blob[:cut])
    with pytest.raises(FormatError):
        decode_checkpoint(blob + b"\0")
    with pytest.raises(FormatError):
        decode_checkpoint(b"XXXX" + blob[4:])
