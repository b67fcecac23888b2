"""The dual-branch detector.

Each branch is four blocks of separable conv -> ReLU -> 2x2 max-pool with
widths 16, 32, 64, 128.  Cross-stitch units sit after the pooling stages,
each branch ends in a 128-wide ReLU dense layer, and the concatenated
features feed a 2-way classifier.
"""

from __future__ import annotations

import enum
import zlib
from typing import Iterator

import numpy as np

from . import tensor as T
from .stitch import CrossStitchUnit, init_unit, stitch
from .tensor import ShapeError, Tensor

WIDTHS = (16, 32, 64, 128)
KERNEL = 3
IN_CHANNELS = 3
FC_FEATURES = 128
N_CLASSES = 2


class StitchMode(str, enum.Enum):
    RGB_ONLY = "rgb"
    FREQ_ONLY = "freq"
    NO_STITCH = "none"
    ONE_STITCH = "one"
    ALL_STITCHES = "all"

    @property
    def uses_spatial(self) -> bool:
        return self is not StitchMode.FREQ_ONLY

    @property
    def uses_frequency(self) -> bool:
        return self is not StitchMode.RGB_ONLY

    @property
    def n_stitches(self) -> int:
        return {StitchMode.ONE_STITCH: 1, StitchMode.ALL_STITCHES: 4}.get(self, 0)


def _param_rng(seed: int, name: str) -> np.random.Generator:
    # keyed by name, so a parameter gets the same values in every mode
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


def _he(seed: int, name: str, shape: tuple[int, ...], fan_in: int, gain: float = 2.0) -> Tensor:
    values = _param_rng(seed, name).standard_normal(shape) * np.sqrt(gain / fan_in)
    return Tensor(values, requires_grad=True, name=name)


def _zeros(name: str, shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


class Branch:
    """One backbone: four separable-conv blocks plus its dense feature layer."""

    def __init__(self, prefix: str, input_size: int, seed: int):
        self.prefix = prefix
        self.blocks: list[tuple[Tensor, Tensor, Tensor]] = []
        c_in = IN_CHANNELS
        for i, c_out in enumerate(WIDTHS, start=1):
            name = f"{prefix}.block{i}"
            self.blocks.append(
                (
                    _he(seed, f"{name}.depthwise", (c_in, KERNEL, KERNEL), KERNEL * KERNEL, gain=1.0),
                    _he(seed, f"{name}.pointwise", (c_out, c_in), c_in),
                    _zeros(f"{name}.bias", (c_out,)),
                )
            )
            c_in = c_out
        side = input_size // 2 ** len(WIDTHS)
        flat = WIDTHS[-1] * side * side
        self.fc_weight = _he(seed, f"{prefix}.fc.weight", (FC_FEATURES, flat), flat)
        self.fc_bias = _zeros(f"{prefix}.fc.bias", (FC_FEATURES,))

    def block(self, i: int, x: Tensor) -> Tensor:
        depthwise, pointwise, bias = self.blocks[i]
        return T.maxpool2d(T.relu(T.separable_conv2d(x, depthwise, pointwise, bias)))

    def head(self, x: Tensor) -> Tensor:
        return T.relu(T.dense(T.flatten(x), self.fc_weight, self.fc_bias))

    def parameters(self) -> Iterator[Tensor]:
        for block in self.blocks:
            yield from block
        yield self.fc_weight
        yield self.fc_bias


class DualBranchModel:
    def __init__(self, mode: StitchMode | str, input_size: int, seed: int):
        mode = StitchMode(mode)
        if input_size < 16 or input_size % 16:
            raise ValueError(f"input size must be a positive multiple of 16, got {input_size}")
        self.mode = mode
        self.input_size = input_size
        self.seed = seed
        self.spatial = Branch("spatial", input_size, seed) if mode.uses_spatial else None
        self.frequency = Branch("frequency", input_size, seed) if mode.uses_frequency else None
        n_branches = int(mode.uses_spatial) + int(mode.uses_frequency)
        width = FC_FEATURES * n_branches
        self.classifier_weight = _he(seed, "classifier.weight", (N_CLASSES, width), width, gain=0.01)
        self.classifier_bias = _zeros("classifier.bias", (N_CLASSES,))
        self.stitch_units = [init_unit(f"stitch{i}.alpha") for i in range(1, mode.n_stitches + 1)]

    # ------------------------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        """All trainable tensors by name, in checkpoint order (alphas last)."""
        params: dict[str, Tensor] = {}
        for branch in (self.spatial, self.frequency):
            if branch is not None:
                for p in branch.parameters():
                    params[p.name] = p
        params[self.classifier_weight.name] = self.classifier_weight
        params[self.classifier_bias.name] = self.classifier_bias
        for unit in self.stitch_units:
            params[unit.alpha.name] = unit.alpha
        return params

    def is_stitch_param(self, name: str) -> bool:
        return name.startswith("stitch")

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def _check_inputs(self, x: Tensor | None, which: str) -> Tensor:
        if x is None:
            raise ShapeError(f"{self.mode.value} mode needs a {which} input")
        if not isinstance(x, Tensor):
            x = Tensor(x)
        n = self.input_size
        if x.data.ndim != 4 or x.shape[1:] != (IN_CHANNELS, n, n):
            raise ShapeError(f"{which} input must be [B,{IN_CHANNELS},{n},{n}], got {x.shape}")
        return x

    def features(self, spatial=None, frequency=None) -> tuple[Tensor | None, Tensor | None]:
        """Per-branch 128-wide features after the dense layers."""
        x_r = self._check_inputs(spatial, "spatial") if self.spatial else None
        x_d = self._check_inputs(frequency, "frequency") if self.frequency else None
        if x_r is not None and x_d is not None and x_r.shape[0] != x_d.shape[0]:
            raise ShapeError(f"batch sizes differ: {x_r.shape[0]} vs {x_d.shape[0]}")
        # one unit: after the first pooling stage; four: after every stage
        stitch_after = range(len(self.stitch_units))
        units = iter(self.stitch_units)
        for i in range(len(WIDTHS)):
            if x_r is not None:
                x_r = self.spatial.block(i, x_r)
            if x_d is not None:
                x_d = self.frequency.block(i, x_d)
            if i in stitch_after:
                x_r, x_d = stitch(x_r, x_d, next(units))
        f_r = self.spatial.head(x_r) if x_r is not None else None
        f_d = self.frequency.head(x_d) if x_d is not None else None
        return f_r, f_d

    def forward(self, spatial=None, frequency=None) -> Tensor:
        """Logits [B, 2].  Inputs the mode does not use are ignored."""
        f_r, f_d = self.features(spatial, frequency)
        if f_r is not None and f_d is not None:
            joined = T.concat(f_r, f_d)
        else:
            joined = f_r if f_r is not None else f_d
        return T.dense(joined, self.classifier_weight, self.classifier_bias)

    __call__ = forward

    def pre_flatten_shape(self) -> tuple[int, int, int]:
        side = self.input_size // 2 ** len(WIDTHS)
        return (WIDTHS[-1], side, side)


def build_model(mode: StitchMode | str, input_size: int = 64, seed: int = 0) -> DualBranchModel:
    return DualBranchModel(mode, input_size, seed)


def expected_parameter_count(mode: StitchMode | str, input_size: int) -> int:
    """Closed-form parameter count of :func:`build_model`."""
    mode = StitchMode(mode)
    per_branch = 0
    c_in = IN_CHANNELS
    for c_out in WIDTHS:
        per_branch += c_in * KERNEL * KERNEL + c_out * c_in + c_out
        c_in = c_out
    side = input_size // 2 ** len(WIDTHS)
    per_branch += FC_FEATURES * WIDTHS[-1] * side * side + FC_FEATURES
    n_branches = int(mode.uses_spatial) + int(mode.uses_frequency)
    head = N_CLASSES * FC_FEATURES * n_branches + N_CLASSES
    return n_branches * per_branch + head + 4 * mode.n_stitches
