"""Model assembly: declarative specs, stacked-layer rollout over a scene
sequence, the recurrent U-Net composition, and the linear output heads.

A forecast consumes ``n`` chronologically ordered input scenes and emits a
single next-scene image in scaled units.  Dense cells treat every pixel as
an independent observation sharing one parameter set; convolutional cells
consume whole scenes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import Tensor, concat_channels, conv2d, matmul, pool2, upsample2
from .cells import (
    DEFAULT_TIME_DIVISOR,
    DT_CONVENTION,
    CELL_KINDS,
    is_convolutional,
    make_cell,
    uses_time,
)

__all__ = ["ModelSpec", "ForecastModel"]


@dataclass
class ModelSpec:
    """Declarative description of a forecaster."""

    cell_kind: str
    hidden_dims: list[int] = field(default_factory=lambda: [8])
    kernel_size: int = 3
    unet: bool = False
    window_length: int = 6
    weight_decay: float = 0.0
    time_divisor: float = DEFAULT_TIME_DIVISOR
    # "fill_age": per-pixel dt maps include pixel staleness;
    # "uniform": every pixel sees the plain scene gap
    dt_mode: str = "fill_age"

    def __post_init__(self):
        if self.cell_kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.cell_kind!r}")
        if not self.hidden_dims or any(d < 1 for d in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.window_length < 1:
            raise ValueError("window_length must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.dt_mode not in ("fill_age", "uniform"):
            raise ValueError(f"unknown dt_mode {self.dt_mode!r}")
        if self.unet:
            if not is_convolutional(self.cell_kind):
                raise ValueError("unet composition requires a convolutional cell kind")
            dims = self.hidden_dims
            if len(dims) < 3 or len(dims) % 2 == 0 or dims != dims[::-1]:
                raise ValueError(
                    f"unet requires an odd count of palindromic hidden_dims, got {dims}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def _avgpool2_map(m: np.ndarray) -> np.ndarray:
    """2x downsample a dt map by block averaging (input path, no gradient)."""
    H, W = m.shape
    return m.reshape(H // 2, 2, W // 2, 2).mean(axis=(1, 3))


class ForecastModel:
    """A ModelSpec realized with concrete parameters."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        self.spec = spec
        conv = is_convolutional(spec.cell_kind)
        dims = spec.hidden_dims
        self.layers = []
        self._up_projections: list[tuple[Tensor, Tensor]] = []
        if spec.unet:
            self._build_unet(rng)
        else:
            in_dim = 1
            for d in dims:
                self.layers.append(make_cell(
                    spec.cell_kind, in_dim, d, rng,
                    kernel_size=spec.kernel_size, time_divisor=spec.time_divisor))
                in_dim = d
        head_in = dims[-1]
        if conv:
            bound = 1.0 / np.sqrt(head_in)
            self.head_w = Tensor(rng.uniform(-bound, bound, size=(1, head_in, 1, 1)),
                                 requires_grad=True)
        else:
            bound = 1.0 / np.sqrt(head_in)
            self.head_w = Tensor(rng.uniform(-bound, bound, size=(head_in, 1)),
                                 requires_grad=True)
        self.head_b = Tensor(np.zeros(1), requires_grad=True)

    def _build_unet(self, rng):
        spec = self.spec
        dims = spec.hidden_dims
        depth = len(dims) // 2
        in_ch = 1
        for j, d in enumerate(dims):
            if j > depth:
                # expanding layer: learned 1x1 up-projection halves the
                # deeper hidden channels to the symmetric layer's width,
                # then the skip concat doubles them again
                skip = dims[2 * depth - j]
                bound = 1.0 / np.sqrt(in_ch)
                proj_w = Tensor(rng.uniform(-bound, bound, size=(skip, in_ch, 1, 1)),
                                requires_grad=True)
                proj_b = Tensor(np.zeros(skip), requires_grad=True)
                self._up_projections.append((proj_w, proj_b))
                in_ch = 2 * skip
            self.layers.append(make_cell(
                spec.cell_kind, in_ch, d, rng,
                kernel_size=spec.kernel_size, time_divisor=spec.time_divisor))
            in_ch = d

    # ---- parameter access ----------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for k, cell in enumerate(self.layers):
            for name in sorted(cell.params):
                out.append((f"layer{k}.{name}", cell.params[name]))
        for j, (w, b) in enumerate(self._up_projections):
            out.append((f"up{j}.K", w))
            out.append((f"up{j}.b", b))
        out.append(("head.W", self.head_w))
        out.append(("head.b", self.head_b))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def constrained_parameters(self) -> list[Tensor]:
        out = []
        for cell in self.layers:
            for name in cell.constrained:
                out.append(cell.params[name])
        return out

    def load_parameters(self, values: dict[str, np.ndarray]):
        for name, tensor in self.named_parameters():
            v = values[name]
            if v.shape != tensor.shape:
                raise ValueError(f"parameter {name}: shape {v.shape} != {tensor.shape}")
            tensor.data = np.array(v, dtype=np.float64)

    # ---- dt plumbing ----------------------------------------------------

    def _step_dt(self, sequence, t: int):
        kind = self.spec.cell_kind
        if not uses_time(kind):
            return None
        convention = DT_CONVENTION[kind]
        if is_convolutional(kind):
            if self.spec.dt_mode == "uniform":
                gaps = (sequence.dt_following if convention == "following"
                        else sequence.dt_preceding)
                H, W = sequence.inputs.shape[1:]
                return np.full((H, W), float(gaps[t]))
            maps = (sequence.dt_maps_following if convention == "following"
                    else sequence.dt_maps_preceding)
            return maps[t]
        gaps = (sequence.dt_following if convention == "following"
                else sequence.dt_preceding)
        return float(gaps[t])

    # ---- forward paths --------------------------------------------------

    def forward(self, sequence) -> Tensor:
        """Build the forecast graph for one sequence; output is (H, W), scaled units."""
        n = self.spec.window_length
        if sequence.inputs.shape[0] != n:
            raise ValueError(f"sequence has {sequence.inputs.shape[0]} scenes, "
                             f"model expects {n}")
        if is_convolutional(self.spec.cell_kind):
            if self.spec.unet:
                h = self._forward_unet(sequence)
            else:
                h = self._forward_conv(sequence)
            out = conv2d(h, self.head_w, self.head_b)
            H, W = sequence.inputs.shape[1:]
            return out.reshape(H, W)
        h = self._forward_dense(sequence)
        out = matmul(h, self.head_w) + self.head_b
        H, W = sequence.inputs.shape[1:]
        return out.reshape(H, W)

    def forecast(self, sequence) -> np.ndarray:
        """Inference-only forecast as a plain array (scaled units)."""
        return self.forward(sequence).data.copy()

    def _forward_dense(self, sequence) -> Tensor:
        n, H, W = sequence.inputs.shape
        states = [cell.zero_state(H * W) for cell in self.layers]
        h = None
        for t in range(n):
            dt = self._step_dt(sequence, t)
            inp = Tensor(sequence.inputs[t].reshape(H * W, 1))
            for k, cell in enumerate(self.layers):
                states[k] = cell.step(inp, states[k], dt)
                inp = states[k].h
            h = inp
        return h

    def _forward_conv(self, sequence) -> Tensor:
        n, H, W = sequence.inputs.shape
        states = [cell.zero_state((H, W)) for cell in self.layers]
        h = None
        for t in range(n):
            dt = self._step_dt(sequence, t)
            inp = Tensor(sequence.inputs[t][None, :, :])
            for k, cell in enumerate(self.layers):
                states[k] = cell.step(inp, states[k], dt)
                inp = states[k].h
            h = inp
        return h

    def _forward_unet(self, sequence) -> Tensor:
        n, H, W = sequence.inputs.shape
        dims = self.spec.hidden_dims
        depth = len(dims) // 2
        if H % (1 << depth) or W % (1 << depth):
            raise ValueError(f"spatial size {H}x{W} not divisible by {1 << depth}")

        # per-layer dt maps at each resolution
        dt_levels: list[list] = []
        base = [self._step_dt(sequence, t) for t in range(n)]
        dt_levels.append(base)
        for level in range(1, depth + 1):
            prev = dt_levels[-1]
            dt_levels.append([None if m is None else _avgpool2_map(m) for m in prev])

        def run_layer(k: int, inputs: list[Tensor], level: int) -> list[Tensor]:
            cell = self.layers[k]
            spatial = inputs[0].shape[1:]
            state = cell.zero_state(spatial)
            outs = []
            for t in range(n):
                state = cell.step(inputs[t], state, dt_levels[level][t])
                outs.append(state.h)
            return outs

        seq_in = [Tensor(sequence.inputs[t][None, :, :]) for t in range(n)]
        hidden_seqs: list[list[Tensor]] = []
        # contracting half plus middle layer
        for k in range(depth + 1):
            hidden_seqs.append(run_layer(k, seq_in, level=k))
            if k < depth:
                seq_in = [pool2(h) for h in hidden_seqs[k]]
        # expanding half with skip concatenation
        prev = hidden_seqs[depth]
        for j, k in enumerate(range(depth + 1, len(dims))):
            level = len(dims) - 1 - k
            proj_w, proj_b = self._up_projections[j]
            skip = hidden_seqs[2 * depth - k]
            seq_in = [concat_channels(conv2d(upsample2(h), proj_w, proj_b), s)
                      for h, s in zip(prev, skip)]
            prev = run_layer(k, seq_in, level=level)
        return prev[-1]
