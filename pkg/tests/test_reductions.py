"""Parameter restrictions under which richer cells collapse to simpler
ones, checked to 1e-12 over many random parameterizations."""

import numpy as np
import pytest

from vulcast.autodiff import Tensor
from vulcast.cells import (
    CellState,
    ConvLSTMCell,
    ConvTimeAwareLSTMCell,
    ConvTimeLSTMCell,
    LSTMCell,
    TimeAwareLSTMCell,
    TimeLSTMCell,
)

N_TRIALS = 20
ATOL = 1e-12


def dense_to_conv(W: np.ndarray) -> np.ndarray:
    """(in, hidden) matmul weight -> (hidden, in, 1, 1) conv kernel."""
    return W.T[:, :, None, None].copy()


def rand_dense_state(rng, hidden):
    return CellState(Tensor(rng.standard_normal((1, hidden))),
                     Tensor(rng.standard_normal((1, hidden))))


def as_conv_state(state, hidden):
    return CellState(Tensor(state.h.data.reshape(hidden, 1, 1).copy()),
                     Tensor(state.c.data.reshape(hidden, 1, 1).copy()))


def copy_gates(dense, conv, names):
    for g in names:
        conv.params[f"Kx{g}"].data = dense_to_conv(dense.params[f"Wx{g}"].data)
        conv.params[f"Kh{g}"].data = dense_to_conv(dense.params[f"Wh{g}"].data)
        conv.params[f"b{g}"].data = dense.params[f"b{g}"].data.copy()


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_convlstm_1x1_reduces_to_lstm(trial):
    rng = np.random.default_rng(100 + trial)
    d, m = 3, 4
    dense = LSTMCell(d, m, rng)
    conv = ConvLSTMCell(d, m, 1, rng)
    copy_gates(dense, conv, ("i", "f", "o", "c"))
    x = rng.standard_normal(d)
    st = rand_dense_state(rng, m)
    out_d = dense.step(Tensor(x[None, :]), st)
    out_c = conv.step(Tensor(x[:, None, None]), as_conv_state(st, m))
    np.testing.assert_allclose(out_c.h.data.ravel(), out_d.h.data.ravel(), atol=ATOL, rtol=0)
    np.testing.assert_allclose(out_c.c.data.ravel(), out_d.c.data.ravel(), atol=ATOL, rtol=0)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_convtimelstm_1x1_reduces_to_timelstm(trial):
    rng = np.random.default_rng(200 + trial)
    d, m = 3, 4
    dense = TimeLSTMCell(d, m, rng)
    conv = ConvTimeLSTMCell(d, m, 1, rng)
    copy_gates(dense, conv, ("i", "o", "c"))
    for g in ("1", "2"):
        conv.params[f"Kxt{g}"].data = dense_to_conv(dense.params[f"Wx{g}"].data)
        conv.params[f"Ktt{g}"].data = dense.params[f"wt{g}"].data[:, None, None, None].copy()
        conv.params[f"bt{g}"].data = dense.params[f"b{g}"].data.copy()
    conv.params["Kto"].data[...] = 0.0
    dt = float(rng.uniform(0, 90))
    x = rng.standard_normal(d)
    st = rand_dense_state(rng, m)
    out_d = dense.step(Tensor(x[None, :]), st, dt=dt)
    out_c = conv.step(Tensor(x[:, None, None]), as_conv_state(st, m), dt=dt)
    # propagated memory and output-side memory agree exactly ...
    np.testing.assert_allclose(out_c.c.data.ravel(), out_d.c.data.ravel(), atol=ATOL, rtol=0)
    np.testing.assert_allclose(out_c.aux["c_tilde"].data.ravel(),
                               out_d.aux["c_tilde"].data.ravel(), atol=ATOL, rtol=0)
    # ... and the hidden states agree once the output squashing is swapped:
    # the dense cell emits o*tanh(c~) while the fused cell emits O*sigma(C~)
    o = out_d.aux["o"].data.ravel()
    c_tilde = out_d.aux["c_tilde"].data.ravel()
    np.testing.assert_allclose(out_c.h.data.ravel(),
                               o / (1.0 + np.exp(-c_tilde)) * 1.0, atol=ATOL, rtol=0)
    np.testing.assert_allclose(out_c.aux["o"].data.ravel(), o, atol=ATOL, rtol=0)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_convtimeawarelstm_1x1_reduces_to_timeawarelstm(trial):
    rng = np.random.default_rng(300 + trial)
    d, m = 3, 4
    dense = TimeAwareLSTMCell(d, m, rng)
    conv = ConvTimeAwareLSTMCell(d, m, 1, rng)
    copy_gates(dense, conv, ("i", "f", "o", "c"))
    conv.params["Kd"].data = dense_to_conv(dense.params["Wd"].data)
    conv.params["bd"].data = dense.params["bd"].data.copy()
    dt = float(rng.uniform(0, 90))
    x = rng.standard_normal(d)
    st = rand_dense_state(rng, m)
    out_d = dense.step(Tensor(x[None, :]), st, dt=dt)
    out_c = conv.step(Tensor(x[:, None, None]), as_conv_state(st, m), dt=dt)
    np.testing.assert_allclose(out_c.h.data.ravel(), out_d.h.data.ravel(), atol=ATOL, rtol=0)
    np.testing.assert_allclose(out_c.c.data.ravel(), out_d.c.data.ravel(), atol=ATOL, rtol=0)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_timeawarelstm_unit_discount_reduces_to_lstm(trial):
    # dt=0 makes the discount exactly 1, so memory decomposition cancels
    rng = np.random.default_rng(400 + trial)
    d, m = 3, 4
    aware = TimeAwareLSTMCell(d, m, rng)
    plain = LSTMCell(d, m, rng)
    for g in ("i", "f", "o", "c"):
        plain.params[f"Wx{g}"].data = aware.params[f"Wx{g}"].data.copy()
        plain.params[f"Wh{g}"].data = aware.params[f"Wh{g}"].data.copy()
        plain.params[f"b{g}"].data = aware.params[f"b{g}"].data.copy()
    x = Tensor(rng.standard_normal((1, d)))
    st = rand_dense_state(rng, m)
    out_a = aware.step(x, st, dt=0.0)
    out_p = plain.step(x, st)
    np.testing.assert_allclose(out_a.h.data, out_p.h.data, atol=ATOL, rtol=0)
    np.testing.assert_allclose(out_a.c.data, out_p.c.data, atol=ATOL, rtol=0)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_convtimeawarelstm_unit_discount_reduces_to_convlstm(trial):
    rng = np.random.default_rng(500 + trial)
    cin, m, k = 2, 3, 3
    aware = ConvTimeAwareLSTMCell(cin, m, k, rng)
    plain = ConvLSTMCell(cin, m, k, rng)
    for g in ("i", "f", "o", "c"):
        plain.params[f"Kx{g}"].data = aware.params[f"Kx{g}"].data.copy()
        plain.params[f"Kh{g}"].data = aware.params[f"Kh{g}"].data.copy()
        plain.params[f"b{g}"].data = aware.params[f"b{g}"].data.copy()
    x = Tensor(rng.standard_normal((cin, 4, 4)))
    st = CellState(Tensor(rng.standard_normal((m, 4, 4))),
                   Tensor(rng.standard_normal((m, 4, 4))))
    out_a = aware.step(x, st, dt=0.0)
    out_p = plain.step(x, st)
    np.testing.assert_allclose(out_a.h.data, out_p.h.data, atol=ATOL, rtol=0)
    np.testing.assert_allclose(out_a.c.data, out_p.c.data, atol=ATOL, rtol=0)
