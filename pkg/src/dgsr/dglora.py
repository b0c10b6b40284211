"""Low-rank adapters with degradation-conditioned update-direction correction.

A frozen base weight W (d_out x d_in) carries a trainable low-rank pair
(A: d_out x r, B: r x d_in).  A small conditioning network turns the
two-component degradation vector into a per-block r x r matrix C that is
inserted between A and B, so the effective update is A @ C @ B.  One shared
MLP plus learned per-block ID embeddings produce distinct C matrices per
backbone block; all adapters inside a block share that block's C.

Convolutions are adapted on the flattened kernel view
(out_channels) x (in_channels * k * k); the low-rank path is evaluated as
conv(B) -> channel mix by C -> 1x1 conv(A), which is algebraically identical
to convolving with the merged delta kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import InputError, StateError

DEFAULT_RANK_MAP = {"encoder": 16, "unet": 32, "decoder": 16}
SURFACES = ("encoder", "unet", "decoder")
MODULATION_MODES = ("unshared", "shared", "vanilla")


def _as_d_tensor(d, dtype=torch.float32) -> torch.Tensor:
    """Coerce a degradation vector (object, array or tensor) to a tensor."""
    if hasattr(d, "as_array"):
        d = d.as_array()
    if isinstance(d, torch.Tensor):
        t = d
    else:
        t = torch.as_tensor(np.asarray(d, dtype=np.float32))
    if t.shape[-1] != 2:
        raise InputError(f"degradation vector must have 2 components, got shape {tuple(t.shape)}")
    return t.to(dtype)


class FourierEmbedder(nn.Module):
    """Maps d in [0,1]^2 to concat[sin(2*pi*d w^T), cos(2*pi*d w^T)], shape (2, 2m).

    The frequency vector w is sampled once at creation and never trained.
    """

    def __init__(self, m: int = 64, scale: float = 1.0, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.m = m
        self.register_buffer("w", torch.randn(m, generator=gen) * scale)

    @property
    def out_width(self) -> int:
        return 4 * self.m

    def forward(self, d: torch.Tensor) -> torch.Tensor:
        # d: (..., 2) -> (..., 2, 2m)
        ang = 2.0 * math.pi * d.unsqueeze(-1) * self.w.to(d.dtype)
        return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


def fourier_embed(embedder: FourierEmbedder, d) -> torch.Tensor:
    """Embed a single degradation vector; returns a (2, 2m) tensor."""
    return embedder(_as_d_tensor(d, dtype=embedder.w.dtype))


class ModulationNet(nn.Module):
    """Shared MLP emitting per-block correction matrices from embedded degradations.

    The flattened Fourier embedding is first projected up by ``fc`` so it is
    not overwhelmed by the block ID embedding, then the concatenation runs
    through a shared 2-hidden-layer MLP.  The output layer starts at zero
    weight with an identity bias, so every C is exactly the identity at
    initialization and early training matches plain low-rank adaptation.

    The MLP emits a max_rank x max_rank matrix; blocks with a smaller rank
    use the leading r x r submatrix (the identity bias makes that slice I_r).
    """

    def __init__(
        self,
        embed_width: int,
        num_blocks: int,
        max_rank: int,
        block_embed_dim: int = 64,
        fc_width: int = 256,
        hidden: int = 256,
        seed: int = 0,
    ):
        super().__init__()
        self.num_blocks = num_blocks
        self.max_rank = max_rank
        self.block_embed_dim = block_embed_dim
        self.fc = nn.Linear(embed_width, fc_width)
        self.block_embed = nn.Parameter(torch.empty(num_blocks, block_embed_dim))
        self.hidden1 = nn.Linear(fc_width + block_embed_dim, hidden)
        self.hidden2 = nn.Linear(hidden, hidden)
        self.out = nn.Linear(hidden, max_rank * max_rank)
        self._init_parameters(seed)

    def _init_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for lin in (self.fc, self.hidden1, self.hidden2):
            std = math.sqrt(2.0 / lin.in_features)
            with torch.no_grad():
                lin.weight.copy_(torch.randn(lin.weight.shape, generator=gen) * std)
                lin.bias.zero_()
        with torch.no_grad():
            self.block_embed.copy_(
                torch.randn(self.block_embed.shape, generator=gen) * 0.2
            )
            self.out.weight.zero_()
            self.out.bias.copy_(torch.eye(self.max_rank).flatten())

    def forward(
        self, d_e: torch.Tensor, block_index: int, shared: bool = False
    ) -> torch.Tensor:
        """(B, 2, 2m) embedding -> (B, max_rank, max_rank) correction matrix."""
        if not 1 <= block_index <= self.num_blocks:
            raise InputError(
                f"block_index {block_index} out of range [1, {self.num_blocks}]"
            )
        if d_e.ndim == 2:
            d_e = d_e.unsqueeze(0)
        flat = d_e.reshape(d_e.shape[0], -1)
        h = F.relu(self.fc(flat))
        emb = self.block_embed[0 if shared else block_index - 1]
        h = torch.cat([h, emb.to(h.dtype).expand(h.shape[0], -1)], dim=-1)
        h = F.relu(self.hidden1(h))
        h = F.relu(self.hidden2(h))
        return self.out(h).view(-1, self.max_rank, self.max_rank)


def modulation(
    net: ModulationNet, d_e: torch.Tensor, block_index: int, rank: int | None = None
) -> torch.Tensor:
    """Correction matrix for one block; returns (r, r) for a single embedding."""
    single = d_e.ndim == 2
    c = net(d_e, block_index)
    r = rank or net.max_rank
    c = c[:, :r, :r]
    return c[0] if single else c


@dataclass
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int
    padding: int


class DGLoRAAdapter(nn.Module):
    """Trainable (A, B) pair attached to one named frozen base weight."""

    def __init__(
        self,
        target: str,
        block_index: int,
        rank: int,
        d_out: int,
        d_in: int,
        conv: ConvSpec | None = None,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        if rank < 1:
            raise InputError(f"rank must be >= 1, got {rank}")
        if rank > min(d_out, d_in):
            raise InputError(
                f"rank {rank} exceeds min(d_out={d_out}, d_in={d_in}) for {target}"
            )
        self.target = target
        self.block_index = block_index
        self.rank = rank
        self.d_out = d_out
        self.d_in = d_in
        self.conv = conv
        a = torch.randn(d_out, rank, generator=generator) / math.sqrt(rank)
        self.A = nn.Parameter(a)
        self.B = nn.Parameter(torch.zeros(rank, d_in))

    def num_parameters(self) -> int:
        return self.rank * (self.d_out + self.d_in)

    def delta_matrix(self, c: torch.Tensor) -> torch.Tensor:
        """Merged update A @ C @ B as a (d_out, d_in) matrix."""
        return self.A @ c.to(self.A.dtype) @ self.B

    def delta_conv(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        """Low-rank conv path: conv(B) -> per-sample C mix -> 1x1 conv(A)."""
        spec = self.conv
        down = F.conv2d(
            x,
            self.B.view(self.rank, spec.in_channels, spec.kernel_size, spec.kernel_size),
            stride=spec.stride,
            padding=spec.padding,
        )
        if c.ndim == 2:
            c = c.unsqueeze(0)
        mixed = torch.einsum("bqr,brhw->bqhw", c.to(down.dtype), down)
        return F.conv2d(mixed, self.A.view(self.d_out, self.rank, 1, 1))


def dglora_forward(
    adapter: DGLoRAAdapter, W: torch.Tensor, c: torch.Tensor, x: torch.Tensor
) -> torch.Tensor:
    """(W + A C B) x on the dense matrix view."""
    if W.shape != (adapter.d_out, adapter.d_in):
        raise InputError(
            f"W shape {tuple(W.shape)} does not match adapter ({adapter.d_out}, {adapter.d_in})"
        )
    if c.shape != (adapter.rank, adapter.rank):
        raise InputError(f"C shape {tuple(c.shape)} must be ({adapter.rank}, {adapter.rank})")
    if x.shape[0] != adapter.d_in:
        raise InputError(f"x length {x.shape[0]} does not match d_in {adapter.d_in}")
    return W @ x + adapter.A @ (c.to(W.dtype) @ (adapter.B @ x))


def merge(adapter: DGLoRAAdapter, W: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
    """Fold the adapter into the base weight for one fixed degradation vector."""
    if W.shape != (adapter.d_out, adapter.d_in):
        raise InputError(
            f"W shape {tuple(W.shape)} does not match adapter ({adapter.d_out}, {adapter.d_in})"
        )
    return W + adapter.delta_matrix(c)


class Condition:
    """Per-block correction matrices computed for one batch of degradations."""

    def __init__(self, matrices: dict[int, torch.Tensor]):
        self.matrices = matrices

    def matrix_for(self, block_index: int) -> torch.Tensor:
        try:
            return self.matrices[block_index]
        except KeyError:
            raise StateError(f"no correction matrix for block {block_index}") from None


class AdapterRegistry(nn.Module):
    """All adapters injected into a backbone plus their conditioning networks."""

    def __init__(
        self,
        adapters: list[DGLoRAAdapter],
        embedder: FourierEmbedder,
        modnet: ModulationNet,
        mode: str = "unshared",
        rank_map: dict[str, int] | None = None,
        surfaces: tuple[str, ...] = (),
    ):
        super().__init__()
        if mode not in MODULATION_MODES:
            raise InputError(f"unknown modulation mode {mode!r}")
        self.adapters = nn.ModuleList(adapters)
        self.embedder = embedder
        self.modnet = modnet
        self.mode = mode
        self.rank_map = dict(rank_map or {})
        self.surfaces = tuple(surfaces)
        self.block_ranks: dict[int, int] = {}
        for a in adapters:
            prev = self.block_ranks.setdefault(a.block_index, a.rank)
            if prev != a.rank:
                raise StateError(
                    f"block {a.block_index} has adapters with mixed ranks {prev} vs {a.rank}"
                )

    def condition(self, d) -> Condition:
        """Compute the per-block C matrices for a batch of degradation vectors."""
        d_t = _as_d_tensor(d, dtype=self.embedder.w.dtype)
        if d_t.ndim == 1:
            d_t = d_t.unsqueeze(0)
        matrices: dict[int, torch.Tensor] = {}
        if self.mode == "vanilla":
            batch = d_t.shape[0]
            for idx, rank in self.block_ranks.items():
                eye = torch.eye(rank, dtype=self.embedder.w.dtype)
                matrices[idx] = eye.unsqueeze(0).expand(batch, -1, -1)
            return Condition(matrices)
        d_e = self.embedder(d_t)
        for idx, rank in self.block_ranks.items():
            c = self.modnet(d_e, idx, shared=self.mode == "shared")
            matrices[idx] = c[:, :rank, :rank]
        return Condition(matrices)

    def trainable_parameters(self):
        for a in self.adapters:
            yield from a.parameters()
        if self.mode != "vanilla":
            yield from self.modnet.parameters()

    def adapter_parameter_count(self) -> int:
        return sum(a.num_parameters() for a in self.adapters)

    def conditioning_parameter_count(self) -> int:
        if self.mode == "vanilla":
            return 0
        return sum(p.numel() for p in self.modnet.parameters())


class AdaptableConv2d(nn.Module):
    """Conv layer whose weight can carry a degradation-guided adapter.

    The adapter is held as a plain reference, not a registered submodule:
    adapters belong to the registry, and the base model's state_dict must
    contain base weights only.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
        padding: int = 1,
        surface: str = "unet",
        block_index: int = 0,
        adaptable: bool = True,
    ):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size, stride, padding)
        self.surface = surface
        self.block_index = block_index
        self.adaptable = adaptable
        self.__dict__["adapter"] = None

    def __setattr__(self, name, value):
        if name == "adapter":
            self.__dict__["adapter"] = value
        else:
            super().__setattr__(name, value)

    @property
    def spec(self) -> ConvSpec:
        c = self.conv
        return ConvSpec(
            in_channels=c.in_channels,
            out_channels=c.out_channels,
            kernel_size=c.kernel_size[0],
            stride=c.stride[0],
            padding=c.padding[0],
        )

    def weight_matrix(self) -> torch.Tensor:
        """Flattened (out_channels, in_channels*k*k) view of the base kernel."""
        return self.conv.weight.reshape(self.conv.out_channels, -1)

    def forward(self, x: torch.Tensor, cond: Condition | None = None) -> torch.Tensor:
        y = self.conv(x)
        if self.adapter is not None:
            if cond is None:
                raise StateError(
                    f"adapter attached to {self.adapter.target} but no condition supplied"
                )
            y = y + self.adapter.delta_conv(x, cond.matrix_for(self.block_index))
        return y


def merged_clone(backbone, registry: AdapterRegistry, d):
    """Adapter-free copy of the backbone with A C B folded into each base kernel.

    Valid for a single degradation vector; the copy's plain forward then
    matches the adapter path for that d (up to float accumulation order).
    """
    import copy as _copy

    cond = registry.condition(d)
    merged = _copy.deepcopy(backbone)
    for _, block_index, _, layer in merged.adaptable_convs():
        if layer.adapter is None:
            continue
        c = cond.matrix_for(block_index)[0]
        w_new = merge(layer.adapter, layer.weight_matrix(), c)
        with torch.no_grad():
            layer.conv.weight.copy_(w_new.reshape(layer.conv.weight.shape))
        layer.adapter = None
    return merged


def inject(
    backbone,
    surfaces,
    rank_map: dict[str, int] | None = None,
    mode: str = "unshared",
    embed_m: int = 64,
    seed: int = 0,
) -> AdapterRegistry:
    """Attach adapters to every attachable weight in the chosen surfaces.

    Returns a registry enumerating the adapters with their block indices and
    owning the conditioning networks.  Any previously attached adapters on
    the backbone are replaced.
    """
    surfaces = tuple(surfaces)
    if not surfaces:
        raise InputError("surface set must be nonempty")
    for s in surfaces:
        if s not in SURFACES:
            raise InputError(f"unknown surface {s!r}; expected subset of {SURFACES}")
    ranks = dict(DEFAULT_RANK_MAP)
    ranks.update(rank_map or {})

    gen = torch.Generator().manual_seed(seed)
    adapters: list[DGLoRAAdapter] = []
    for surface, block_index, name, layer in backbone.adaptable_convs():
        layer.adapter = None
        if surface not in surfaces:
            continue
        spec = layer.spec
        adapter = DGLoRAAdapter(
            target=name,
            block_index=block_index,
            rank=ranks[surface],
            d_out=spec.out_channels,
            d_in=spec.in_channels * spec.kernel_size**2,
            conv=spec,
            generator=gen,
        )
        layer.adapter = adapter
        adapters.append(adapter)

    embedder = FourierEmbedder(m=embed_m, seed=seed)
    modnet = ModulationNet(
        embed_width=embedder.out_width,
        num_blocks=backbone.num_blocks,
        max_rank=max(a.rank for a in adapters),
        seed=seed,
    )
    return AdapterRegistry(
        adapters, embedder, modnet, mode=mode, rank_map=ranks, surfaces=surfaces
    )
