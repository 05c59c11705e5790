"""Recurrent cell zoo: LSTM, ConvLSTM, the two time-gated dense variants,
and the fused convolutional time-aware cells.

Dense cells operate on batched row vectors (pixels as independent
observations), so inputs are (P, input_dim) and states are (P, hidden_dim).
Convolutional cells operate on single scenes: inputs (Cin, H, W), states
(hidden_channels, H, W).

Elapsed-time handling: values entering learned gates are divided by
``time_divisor`` (corpus mean gap, in days) to keep pre-activations O(1);
the memory-discount function ``time_discount`` always sees raw days.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, conv2d, matmul, narrow, sigmoid, tanh

__all__ = [
    "CellState",
    "time_discount",
    "LSTMCell",
    "TimeLSTMCell",
    "TimeAwareLSTMCell",
    "ConvLSTMCell",
    "ConvTimeLSTMCell",
    "ConvTimeAwareLSTMCell",
    "make_cell",
    "CELL_KINDS",
    "DT_CONVENTION",
    "is_convolutional",
    "uses_time",
]

DEFAULT_TIME_DIVISOR = 37.0


def time_discount(dt):
    """Monotone non-increasing memory discount g(dt) = 1 / log(e + dt).

    dt is in raw days (scalar or array); g(0) == 1 exactly.
    """
    return 1.0 / np.log(math.e + np.asarray(dt, dtype=np.float64))


@dataclass
class CellState:
    """Hidden state H and cell memory C for one recurrent layer."""

    h: Tensor
    c: Tensor
    aux: dict = field(default_factory=dict)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _const(shape, value: float) -> Tensor:
    return Tensor(np.full(shape, value, dtype=np.float64), requires_grad=True)


class _Cell:
    """Common parameter bookkeeping for all cell kinds."""

    #: parameter names subject to the non-positivity constraint
    constrained: tuple[str, ...] = ()

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def zero_state(self, batch_or_spatial) -> CellState:
        raise NotImplementedError

    def step(self, x: Tensor, state: CellState, dt=None) -> CellState:
        raise NotImplementedError


class _DenseCell(_Cell):
    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim

    def zero_state(self, batch: int) -> CellState:
        z = np.zeros((batch, self.hidden_dim))
        return CellState(Tensor(z), Tensor(z.copy()))

    def _gate(self, name: str, x: Tensor, h: Tensor) -> Tensor:
        p = self.params
        return matmul(x, p[f"Wx{name}"]) + matmul(h, p[f"Wh{name}"]) + p[f"b{name}"]

    def _init_gate(self, rng, name: str, bias: float = 0.0):
        d, h = self.input_dim, self.hidden_dim
        self.params[f"Wx{name}"] = _uniform(rng, (d, h), d)
        self.params[f"Wh{name}"] = _uniform(rng, (h, h), h)
        self.params[f"b{name}"] = _const((h,), bias)


class LSTMCell(_DenseCell):
    """Standard LSTM with input, forget, and output gates."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        super().__init__(input_dim, hidden_dim)
        for name, bias in (("i", 0.0), ("f", 1.0), ("o", 0.0), ("c", 0.0)):
            self._init_gate(rng, name, bias)

    def step(self, x, state, dt=None):
        i = sigmoid(self._gate("i", x, state.h))
        f = sigmoid(self._gate("f", x, state.h))
        o = sigmoid(self._gate("o", x, state.h))
        c = f * state.c + i * tanh(self._gate("c", x, state.h))
        return CellState(o * tanh(c), c)


class TimeLSTMCell(_DenseCell):
    """LSTM variant with the two learned time gates t1 and t2.

    The forecast-side gate t1 shapes the output memory; t2 shapes the
    propagated memory.  The candidate uses a sigmoid squashing, as does
    the published variant this follows.  dt is the interval *following*
    the observation, in days.
    """

    constrained = ("wt1",)

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator,
                 time_divisor: float = DEFAULT_TIME_DIVISOR):
        super().__init__(input_dim, hidden_dim)
        self.time_divisor = time_divisor
        for name in ("i", "o", "c"):
            self._init_gate(rng, name)
        d, h = input_dim, hidden_dim
        for name in ("1", "2"):
            self.params[f"Wx{name}"] = _uniform(rng, (d, h), d)
            self.params[f"b{name}"] = _zeros((h,))
        self.params["wt1"] = Tensor(-np.abs(rng.uniform(-1, 1, size=h)),
                                    requires_grad=True)
        self.params["wt2"] = _uniform(rng, (h,), 1)

    def _time_gate(self, name: str, x: Tensor, dt_scaled: float) -> Tensor:
        p = self.params
        return sigmoid(matmul(x, p[f"Wx{name}"]) + sigmoid(p[f"wt{name}"] * dt_scaled)
                       + p[f"b{name}"])

    def step(self, x, state, dt=None):
        if dt is None or dt < 0:
            raise ValueError(f"TimeLSTM requires dt >= 0, got {dt}")
        ds = float(dt) / self.time_divisor
        i = sigmoid(self._gate("i", x, state.h))
        o = sigmoid(self._gate("o", x, state.h))
        t1 = self._time_gate("1", x, ds)
        t2 = self._time_gate("2", x, ds)
        cand = sigmoid(self._gate("c", x, state.h))
        it1 = i * t1
        c_tilde = (1.0 - it1) * state.c + it1 * cand
        c = (1.0 - i) * state.c + i * t2 * cand
        h = o * tanh(c_tilde)
        return CellState(h, c, aux={"c_tilde": c_tilde, "o": o, "t1": t1})


class TimeAwareLSTMCell(_DenseCell):
    """LSTM variant that discounts the short-term memory component by g(dt).

    dt is the interval *preceding* the observation, in days.
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator,
                 time_divisor: float = DEFAULT_TIME_DIVISOR):
        super().__init__(input_dim, hidden_dim)
        self.time_divisor = time_divisor
        for name, bias in (("i", 0.0), ("f", 1.0), ("o", 0.0), ("c", 0.0)):
            self._init_gate(rng, name, bias)
        h = hidden_dim
        self.params["Wd"] = _uniform(rng, (h, h), h)
        self.params["bd"] = _zeros((h,))

    def step(self, x, state, dt=None):
        if dt is None or dt < 0:
            raise ValueError(f"TimeAwareLSTM requires dt >= 0, got {dt}")
        p = self.params
        c_short = tanh(matmul(state.c, p["Wd"]) + p["bd"])
        c_short_hat = c_short * float(time_discount(dt))
        c_star = (state.c - c_short) + c_short_hat
        i = sigmoid(self._gate("i", x, state.h))
        f = sigmoid(self._gate("f", x, state.h))
        o = sigmoid(self._gate("o", x, state.h))
        cand = tanh(self._gate("c", x, state.h))
        c = f * c_star + i * cand
        return CellState(o * tanh(c), c)


class _ConvCell(_Cell):
    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {kernel_size}")
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.kernel_size = kernel_size

    def zero_state(self, spatial: tuple[int, int]) -> CellState:
        H, W = spatial
        z = np.zeros((self.hidden_channels, H, W))
        return CellState(Tensor(z), Tensor(z.copy()))

    def _gate(self, name: str, x: Tensor, h: Tensor) -> Tensor:
        p = self.params
        return (conv2d(x, p[f"Kx{name}"], p[f"b{name}"])
                + conv2d(h, p[f"Kh{name}"], Tensor(np.zeros(self.hidden_channels))))

    def _gates(self, names: tuple[str, ...], x: Tensor, h: Tensor) -> list[Tensor]:
        """All pre-activation gates in one convolution over [x; h].

        Per-gate kernels stay separate parameters; they are concatenated
        into a single (len(names)*ch)-output kernel so one im2col pass
        serves every gate.
        """
        p = self.params
        xh = concat([x, h], axis=0)
        K = concat([concat([p[f"Kx{n}"], p[f"Kh{n}"]], axis=1) for n in names],
                   axis=0)
        b = concat([p[f"b{n}"] for n in names], axis=0)
        out = conv2d(xh, K, b)
        ch = self.hidden_channels
        return [narrow(out, 0, i * ch, ch) for i in range(len(names))]

    def _init_kernel(self, rng, name: str, cin: int) -> None:
        k, ch = self.kernel_size, self.hidden_channels
        fan_in = cin * k * k
        self.params[name] = _uniform(rng, (ch, cin, k, k), fan_in)

    def _init_gate(self, rng, name: str, bias: float = 0.0):
        self._init_kernel(rng, f"Kx{name}", self.in_channels)
        self._init_kernel(rng, f"Kh{name}", self.hidden_channels)
        self.params[f"b{name}"] = _const((self.hidden_channels,), bias)


class ConvLSTMCell(_ConvCell):
    """LSTM with matrix states and convolutional weight application."""

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int,
                 rng: np.random.Generator):
        super().__init__(in_channels, hidden_channels, kernel_size)
        for name, bias in (("i", 0.0), ("f", 1.0), ("o", 0.0), ("c", 0.0)):
            self._init_gate(rng, name, bias)

    def step(self, x, state, dt=None):
        gi, gf, go, gc = self._gates(("i", "f", "o", "c"), x, state.h)
        i, f, o = sigmoid(gi), sigmoid(gf), sigmoid(go)
        c = f * state.c + i * tanh(gc)
        return CellState(o * tanh(c), c)


def _as_dt_map(dt, spatial) -> np.ndarray:
    d = np.asarray(dt, dtype=np.float64)
    if d.ndim == 0:
        d = np.full(spatial, float(d))
    if d.shape != spatial:
        raise ValueError(f"dt map shape {d.shape} does not match scene {spatial}")
    if np.any(d < 0):
        raise ValueError("dt map must be non-negative")
    return d


class ConvTimeLSTMCell(_ConvCell):
    """Fused cell: convolutional states with the two learned time gates.

    dt is a per-pixel map of elapsed days (interval following each pixel's
    observation); a scalar is broadcast to a uniform map.  The output gate
    carries its own convolution over the dt map, and the hidden state uses a
    sigmoid squashing of the output-side memory.
    """

    constrained = ("Ktt1",)

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int,
                 rng: np.random.Generator,
                 time_divisor: float = DEFAULT_TIME_DIVISOR):
        super().__init__(in_channels, hidden_channels, kernel_size)
        self.time_divisor = time_divisor
        for name in ("i", "o", "c"):
            self._init_gate(rng, name)
        for name in ("t1", "t2"):
            self._init_kernel(rng, f"Kx{name}", self.in_channels)
            self._init_kernel(rng, f"Kt{name}", 1)
            self.params[f"b{name}"] = _zeros((hidden_channels,))
        self.params["Ktt1"].data = -np.abs(self.params["Ktt1"].data)
        self._init_kernel(rng, "Kto", 1)

    def step(self, x, state, dt=None):
        spatial = x.shape[1:]
        dmap = _as_dt_map(dt, spatial) / self.time_divisor
        dt_t = Tensor(dmap[None, :, :])
        p = self.params
        ch = self.hidden_channels
        gi, go, gc = self._gates(("i", "o", "c"), x, state.h)
        # the three dt-map convolutions share one im2col pass, as do the
        # input-side halves of the two time gates
        gt = conv2d(dt_t, concat([p["Ktt1"], p["Ktt2"], p["Kto"]], axis=0),
                    Tensor(np.zeros(3 * ch)))
        gx = conv2d(x, concat([p["Kxt1"], p["Kxt2"]], axis=0),
                    concat([p["bt1"], p["bt2"]], axis=0))
        t1 = sigmoid(narrow(gx, 0, 0, ch) + sigmoid(narrow(gt, 0, 0, ch)))
        t2 = sigmoid(narrow(gx, 0, ch, ch) + sigmoid(narrow(gt, 0, ch, ch)))
        i = sigmoid(gi)
        cand = sigmoid(gc)
        it1 = i * t1
        c_tilde = (1.0 - it1) * state.c + it1 * cand
        c = (1.0 - i) * state.c + i * t2 * cand
        o = sigmoid(go + narrow(gt, 0, 2 * ch, ch))
        h = o * sigmoid(c_tilde)
        return CellState(h, c, aux={"c_tilde": c_tilde, "o": o, "t1": t1})


class ConvTimeAwareLSTMCell(_ConvCell):
    """Fused cell: convolutional states with short/long memory decomposition.

    The short-term component is discounted elementwise by g applied to the
    raw per-pixel dt map (interval preceding each pixel's observation).
    """

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int,
                 rng: np.random.Generator,
                 time_divisor: float = DEFAULT_TIME_DIVISOR):
        super().__init__(in_channels, hidden_channels, kernel_size)
        self.time_divisor = time_divisor
        for name, bias in (("i", 0.0), ("f", 1.0), ("o", 0.0), ("c", 0.0)):
            self._init_gate(rng, name, bias)
        self._init_kernel(rng, "Kd", hidden_channels)
        self.params["bd"] = _zeros((hidden_channels,))

    def step(self, x, state, dt=None):
        spatial = x.shape[1:]
        dmap = _as_dt_map(dt, spatial)
        p = self.params
        c_short = tanh(conv2d(state.c, p["Kd"], p["bd"]))
        c_short_hat = c_short * Tensor(time_discount(dmap)[None, :, :])
        c_star = (state.c - c_short) + c_short_hat
        gi, gf, go, gc = self._gates(("i", "f", "o", "c"), x, state.h)
        i, f, o = sigmoid(gi), sigmoid(gf), sigmoid(go)
        cand = tanh(gc)
        c = f * c_star + i * cand
        return CellState(o * tanh(c), c)


CELL_KINDS = {
    "lstm": LSTMCell,
    "timelstm": TimeLSTMCell,
    "timeawarelstm": TimeAwareLSTMCell,
    "convlstm": ConvLSTMCell,
    "convtimelstm": ConvTimeLSTMCell,
    "convtimeawarelstm": ConvTimeAwareLSTMCell,
}

#: which inter-scene gap each time-aware kind consumes
DT_CONVENTION = {
    "timelstm": "following",
    "convtimelstm": "following",
    "timeawarelstm": "preceding",
    "convtimeawarelstm": "preceding",
}


def is_convolutional(kind: str) -> bool:
    return kind.startswith("conv")


def uses_time(kind: str) -> bool:
    return kind in DT_CONVENTION


def make_cell(kind: str, in_dim: int, hidden_dim: int,
              rng: np.random.Generator, kernel_size: int = 3,
              time_divisor: float = DEFAULT_TIME_DIVISOR) -> _Cell:
    """Instantiate a cell of the given kind with freshly initialized weights."""
    if kind not in CELL_KINDS:
        raise ValueError(f"unknown cell kind {kind!r}; expected one of {sorted(CELL_KINDS)}")
    cls = CELL_KINDS[kind]
    if is_convolutional(kind):
        if uses_time(kind):
            return cls(in_dim, hidden_dim, kernel_size, rng, time_divisor=time_divisor)
        return cls(in_dim, hidden_dim, kernel_size, rng)
    if uses_time(kind):
        return cls(in_dim, hidden_dim, rng, time_divisor=time_divisor)
    return cls(in_dim, hidden_dim, rng)
