"""Conditional generator and discriminator.

The discriminator exposes its penultimate activations as an encoder; the
logit is a single affine map of those features.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .datasets import CALO, POINTS2D, ConditionedDataset, encode_conditions
from .errors import InvalidArgumentError

POINT2D = "point2d"
IMAGE44 = "image44"
_KIND_FOR_DATASET = {POINTS2D: POINT2D, CALO: IMAGE44}

ParamSet = Dict[str, torch.Tensor]


@dataclass(frozen=True)
class GeneratorSpec:
    condition_dim: int
    output_kind: str = POINT2D
    latent_dim: int = 16
    hidden: Tuple[int, ...] = (64, 64)
    channels: Tuple[int, ...] = (32, 16, 8)
    # fixed affine maps between data space and network space
    cond_mean: Optional[Tuple[float, ...]] = None
    cond_std: Optional[Tuple[float, ...]] = None
    out_shift: Tuple[float, ...] = (0.0,)
    out_scale: Tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.output_kind not in (POINT2D, IMAGE44):
            raise InvalidArgumentError(f"unknown output kind {self.output_kind!r}")
        if self.latent_dim < 1 or self.condition_dim < 1:
            raise InvalidArgumentError("latent_dim and condition_dim must be positive")

    @property
    def output_shape(self) -> Tuple[int, ...]:
        return (2,) if self.output_kind == POINT2D else (44, 44)


@dataclass(frozen=True)
class DiscriminatorSpec:
    condition_dim: int
    input_kind: str = POINT2D
    hidden: Tuple[int, ...] = (128, 128)
    feature_dim: int = 64
    channels: Tuple[int, ...] = (16, 32, 32)
    cond_mean: Optional[Tuple[float, ...]] = None
    cond_std: Optional[Tuple[float, ...]] = None
    in_shift: Tuple[float, ...] = (0.0,)
    in_scale: Tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.input_kind not in (POINT2D, IMAGE44):
            raise InvalidArgumentError(f"unknown input kind {self.input_kind!r}")
        if self.feature_dim < 1:
            raise InvalidArgumentError("feature_dim must be positive")

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return (2,) if self.input_kind == POINT2D else (44, 44)


def specs_for_dataset(
    dataset: ConditionedDataset,
    latent_dim: int = 16,
    g_hidden: Sequence[int] = (64, 64),
    d_hidden: Sequence[int] = (128, 128),
    feature_dim: int = 64,
) -> Tuple[GeneratorSpec, DiscriminatorSpec]:
    """Default specs with normalization constants taken from ``dataset``."""
    kind = _KIND_FOR_DATASET[dataset.kind]
    enc = encode_conditions(dataset.kind, dataset.conditions)
    if dataset.kind == CALO:
        mean = enc.mean(axis=0)
        std = enc.std(axis=0)
        std[std == 0] = 1.0
        cond_mean, cond_std = tuple(map(float, mean)), tuple(map(float, std))
    else:
        cond_mean = cond_std = None
    samples = dataset.samples.astype(np.float64)
    if kind == POINT2D:
        shift = tuple(map(float, samples.mean(axis=0)))
        scale = tuple(map(float, samples.std(axis=0)))
    else:
        shift = (0.0,)
        scale = (float(samples.reshape(len(samples), -1).max(axis=1).mean()),)
    g = GeneratorSpec(
        condition_dim=enc.shape[1],
        output_kind=kind,
        latent_dim=latent_dim,
        hidden=tuple(g_hidden),
        cond_mean=cond_mean,
        cond_std=cond_std,
        out_shift=shift,
        out_scale=scale,
    )
    d = DiscriminatorSpec(
        condition_dim=enc.shape[1],
        input_kind=kind,
        hidden=tuple(d_hidden),
        feature_dim=feature_dim,
        cond_mean=cond_mean,
        cond_std=cond_std,
        in_shift=shift,
        in_scale=scale,
    )
    return g, d


def _affine_buffers(module: nn.Module, cond_mean, cond_std, shift, scale):
    dim = module.condition_dim
    mean = torch.zeros(dim) if cond_mean is None else torch.tensor(cond_mean)
    std = torch.ones(dim) if cond_std is None else torch.tensor(cond_std)
    # non-persistent: constants live on the GeneratorSpec/DiscriminatorSpec, not the ParamSet
    module.register_buffer("cond_mean", mean, persistent=False)
    module.register_buffer("cond_std", std, persistent=False)
    module.register_buffer("shift", torch.tensor(shift), persistent=False)
    module.register_buffer("scale", torch.tensor(scale), persistent=False)


class Generator(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        self.condition_dim = spec.condition_dim
        _affine_buffers(self, spec.cond_mean, spec.cond_std, spec.out_shift, spec.out_scale)
        n_in = spec.latent_dim + spec.condition_dim
        if spec.output_kind == POINT2D:
            layers = []
            for width in spec.hidden:
                layers += [nn.Linear(n_in, width), nn.LeakyReLU(0.2)]
                n_in = width
            layers.append(nn.Linear(n_in, 2))
            self.body = nn.Sequential(*layers)
        else:
            c0, c1, c2 = spec.channels
            self.project = nn.Linear(n_in, c0 * 6 * 6)
            self.conv1 = nn.Conv2d(c0, c1, 3, padding=1)
            self.conv2 = nn.Conv2d(c1, c2, 3, padding=1)
            self.conv3 = nn.Conv2d(c2, 1, 3, padding=1)

    def forward(self, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        c = (c - self.cond_mean) / self.cond_std
        h = torch.cat([z, c], dim=-1)
        if self.spec.output_kind == POINT2D:
            return self.shift + self.scale * self.body(h)
        h = F.leaky_relu(self.project(h), 0.2).view(len(h), -1, 6, 6)
        h = F.leaky_relu(self.conv1(F.interpolate(h, size=11)), 0.2)
        h = F.leaky_relu(self.conv2(F.interpolate(h, size=22)), 0.2)
        h = self.conv3(F.interpolate(h, size=44))
        return self.scale * F.softplus(h.squeeze(1))


class Discriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        self.condition_dim = spec.condition_dim
        _affine_buffers(self, spec.cond_mean, spec.cond_std, spec.in_shift, spec.in_scale)
        if spec.input_kind == POINT2D:
            layers = []
            n_in = 2 + spec.condition_dim
            for width in spec.hidden:
                layers += [nn.Linear(n_in, width), nn.LeakyReLU(0.2)]
                n_in = width
            layers += [nn.Linear(n_in, spec.feature_dim), nn.LeakyReLU(0.2)]
            self.encoder = nn.Sequential(*layers)
        else:
            c0, c1, c2 = spec.channels
            self.conv1 = nn.Conv2d(1, c0, 4, stride=2, padding=1)  # 44 -> 22
            self.conv2 = nn.Conv2d(c0, c1, 4, stride=2, padding=1)  # 22 -> 11
            self.conv3 = nn.Conv2d(c1 + spec.condition_dim, c2, 3, stride=2, padding=1)  # 11 -> 6
            self.fc = nn.Linear(c2 * 6 * 6, spec.feature_dim)
        self.head = nn.Linear(spec.feature_dim, 1)

    def encode(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        """Penultimate-layer features."""
        c = (c - self.cond_mean) / self.cond_std
        x = (x - self.shift) / self.scale
        if self.spec.input_kind == POINT2D:
            return self.encoder(torch.cat([x, c], dim=-1))
        h = F.leaky_relu(self.conv1(x.unsqueeze(1)), 0.2)
        h = F.leaky_relu(self.conv2(h), 0.2)
        cmap = c[:, :, None, None].expand(-1, -1, h.shape[2], h.shape[3])
        h = F.leaky_relu(self.conv3(torch.cat([h, cmap], dim=1)), 0.2)
        return F.leaky_relu(self.fc(h.flatten(1)), 0.2)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        features = self.encode(x, c)
        return self.head(features).squeeze(-1), features


# -- functional interface over ParamSets -----------------------------------

@lru_cache(maxsize=32)
def _template(spec) -> nn.Module:
    module = Generator(spec) if isinstance(spec, GeneratorSpec) else Discriminator(spec)
    return module.double()


def init_params(spec, seed: int, dtype=torch.float32) -> ParamSet:
    torch.manual_seed(seed)
    module = Generator(spec) if isinstance(spec, GeneratorSpec) else Discriminator(spec)
    return {k: v.detach().to(dtype) for k, v in module.state_dict().items()}


def _check_params(params: ParamSet, template: nn.Module) -> None:
    expected = {k: tuple(v.shape) for k, v in template.state_dict().items()}
    got = {k: tuple(v.shape) for k, v in params.items()}
    if expected != got:
        raise InvalidArgumentError("parameter set does not match the network spec")


def _batched(arr, width: int, what: str) -> Tuple[torch.Tensor, bool]:
    t = torch.as_tensor(arr)
    single = t.ndim == 1
    if single:
        t = t.unsqueeze(0)
    if t.ndim != 2 or t.shape[1] != width:
        raise InvalidArgumentError(f"{what} must have trailing size {width}, got {tuple(t.shape)}")
    return t, single


def generator_forward(spec: GeneratorSpec, params: ParamSet, z, c) -> torch.Tensor:
    """Apply the generator with explicit parameters.

    ``z`` and ``c`` are single vectors or batches; ``c`` is the encoded
    condition. Output keeps the input's batching.
    """
    template = _template(spec)
    _check_params(params, template)
    dtype = next(iter(params.values())).dtype
    z, single = _batched(z, spec.latent_dim, "z")
    c, single_c = _batched(c, spec.condition_dim, "c")
    if single != single_c or len(z) != len(c):
        raise InvalidArgumentError("z and c batch sizes differ")
    with torch.no_grad():
        template.to(dtype)
    out = torch.func.functional_call(template, params, (z.to(dtype), c.to(dtype)))
    return out[0] if single else out


def discriminator_forward(spec: DiscriminatorSpec, params: ParamSet, x, c):
    """Return ``(logit, features)`` for a sample or a batch of samples."""
    template = _template(spec)
    _check_params(params, template)
    dtype = next(iter(params.values())).dtype
    x = torch.as_tensor(x)
    single = x.ndim == len(spec.input_shape)
    if single:
        x = x.unsqueeze(0)
    if tuple(x.shape[1:]) != spec.input_shape:
        raise InvalidArgumentError(f"x must have shape {spec.input_shape}, got {tuple(x.shape[1:])}")
    c, single_c = _batched(c, spec.condition_dim, "c")
    if single != single_c or len(x) != len(c):
        raise InvalidArgumentError("x and c batch sizes differ")
    with torch.no_grad():
        template.to(dtype)
    logit, feats = torch.func.functional_call(template, params, (x.to(dtype), c.to(dtype)))
    return (logit[0], feats[0]) if single else (logit, feats)


def spec_to_dict(spec) -> dict:
    return dataclasses.asdict(spec)


def spec_from_dict(cls, doc: dict):
    fields = {f.name for f in dataclasses.fields(cls)}
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in doc.items() if k in fields}
    return cls(**kwargs)
