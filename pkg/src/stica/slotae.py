"""Slot autoencoder: CNN encoder, slot attention, categorical latents,
spatial broadcast decoder with a learnable background latent.

Each slot is a 128-logit vector read as 16 independent 8-way categorical
distributions; latents are hard one-hot samples with straight-through
gradients. The decoder emits per-slot RGB and mask panels plus a background
panel whose pre-softmax mask is pinned to zero, then mixes them with the
softmax-normalized masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .diffcore import Tensor
from .diffcore import functional as F
from .diffcore import nn

LOG_2PI = float(np.log(2.0 * np.pi))


def _coord_grid(size, dtype):
    """(1, 4, size, size) buffer of (x, y, 1-x, 1-y) in [0, 1]."""
    lin = (np.arange(size, dtype=np.float64) + 0.5) / size
    xs, ys = np.meshgrid(lin, lin)
    grid = np.stack([xs, ys, 1.0 - xs, 1.0 - ys])[None]
    return Tensor(grid.astype(dtype))


class ConvEncoder(nn.Module):
    """Strided conv stack ending at an 8x8 feature map with position MLP."""

    def __init__(self, image_size, channels, rng, dtype=np.float32):
        super().__init__()
        need = int(np.log2(image_size / 8))
        if len(channels) < need:
            raise ValueError(f"need >= {need} conv layers for image size {image_size}")
        convs = []
        c_in = 3
        for i, c_out in enumerate(channels):
            stride = 2 if i < need else 1
            convs.append(nn.Conv2d(c_in, c_out, 3, rng, stride=stride, padding=1, dtype=dtype))
            c_in = c_out
        self.convs = nn.ModuleList(convs)
        self.dim = c_in
        self.pos_proj = nn.Linear(4, c_in, rng, dtype=dtype)
        self.norm = nn.LayerNorm(c_in, dtype=dtype)
        self.mlp = nn.MLP([c_in, c_in, c_in], rng, dtype=dtype)
        self.grid = _coord_grid(8, dtype)

    def __call__(self, obs):
        x = obs
        for conv in self.convs:
            x = F.relu(conv(x))
        b = x.shape[0]
        # (B, C, 8, 8) -> (B, 64, C) token list with positional embedding
        x = F.reshape(x, (b, self.dim, 64))
        x = F.transpose(x, (0, 2, 1))
        pos = F.reshape(self.grid, (1, 4, 64))
        pos = F.transpose(pos, (0, 2, 1))
        x = F.add(x, self.pos_proj(pos))
        return self.mlp(self.norm(x))


class SlotAttention(nn.Module):
    """Iterative slot refinement; attention softmax runs over the slot axis."""

    def __init__(self, num_slots, slot_size, input_dim, iterations, rng,
                 dtype=np.float32, eps=1e-8):
        super().__init__()
        self.num_slots = num_slots
        self.slot_size = slot_size
        self.iterations = iterations
        self.eps = eps
        self.mu = nn.param(rng.normal(0.0, 0.5, size=(1, 1, slot_size)), dtype)
        self.log_sigma = nn.param(np.full((1, 1, slot_size), np.log(0.5)), dtype)
        self.norm_input = nn.LayerNorm(input_dim, dtype=dtype)
        self.norm_slots = nn.LayerNorm(slot_size, dtype=dtype)
        self.norm_mlp = nn.LayerNorm(slot_size, dtype=dtype)
        self.to_q = nn.Linear(slot_size, slot_size, rng, bias=False, dtype=dtype)
        self.to_k = nn.Linear(input_dim, slot_size, rng, bias=False, dtype=dtype)
        self.to_v = nn.Linear(input_dim, slot_size, rng, bias=False, dtype=dtype)
        self.gru = nn.GRUCell(slot_size, slot_size, rng, dtype=dtype)
        self.mlp = nn.MLP([slot_size, slot_size, slot_size], rng, dtype=dtype)
        self.scale = 1.0 / np.sqrt(slot_size)

    def __call__(self, inputs, noise):
        """``inputs``: (B, P, D) encoder tokens; ``noise``: (B, n, S) N(0,1)."""
        b = inputs.shape[0]
        n, s = self.num_slots, self.slot_size
        if noise.shape != (b, n, s):
            raise ValueError(f"slot noise must be {(b, n, s)}, got {noise.shape}")
        slots = F.add(self.mu, F.mul(F.exp(self.log_sigma), noise))
        inp = self.norm_input(inputs)
        k = self.to_k(inp)
        v = self.to_v(inp)
        kt = F.transpose(k, (0, 2, 1))
        for _ in range(self.iterations):
            prev = slots
            q = self.to_q(self.norm_slots(slots))
            logits = F.mul(F.matmul(q, kt), self.scale)  # (B, n, P)
            attn = F.softmax(logits, axis=1)  # slots compete for features
            weights = F.div(attn, F.add(F.reduce_sum(attn, axis=2, keepdims=True), self.eps))
            updates = F.matmul(weights, v)  # (B, n, S)
            flat_u = F.reshape(updates, (b * n, s))
            flat_p = F.reshape(prev, (b * n, s))
            slots = F.reshape(self.gru(flat_u, flat_p), (b, n, s))
            slots = F.add(slots, self.mlp(self.norm_mlp(slots)))
        return slots


class BroadcastDecoder(nn.Module):
    """Spatial broadcast decoder: tile latent over a grid, concat coords,
    1x1 conv, then upsample+conv stages to full resolution, emitting
    RGB (3) + mask (1) channels per panel."""

    def __init__(self, image_size, latent_dim, channels, rng, dtype=np.float32,
                 grid=8):
        super().__init__()
        ups = int(np.log2(image_size / grid))
        if len(channels) != ups + 1:
            raise ValueError(f"decoder needs {ups + 1} channel entries for "
                             f"image {image_size} from grid {grid}")
        self.grid = grid
        self.coords = _coord_grid(grid, dtype)
        self.head = nn.Conv2d(latent_dim + 4, channels[0], 1, rng, dtype=dtype)
        self.stages = nn.ModuleList([
            nn.Conv2d(channels[i], channels[i + 1], 3, rng, padding=1, dtype=dtype)
            for i in range(ups)
        ])
        self.out = nn.Conv2d(channels[-1], 4, 3, rng, padding=1, dtype=dtype)

    def __call__(self, latents):
        """``latents``: (P, D) -> RGB (P, 3, H, W), raw masks (P, 1, H, W)."""
        p, d = latents.shape
        g = self.grid
        z = F.reshape(latents, (p, d, 1, 1))
        zero_plane = Tensor(np.zeros((1, 1, g, g), dtype=latents.dtype))
        tiled = F.add(z, zero_plane)
        coords = F.add(self.coords, Tensor(np.zeros((p, 1, 1, 1), dtype=latents.dtype)))
        x = F.concat([tiled, coords], axis=1)
        x = F.relu(self.head(x))
        for stage in self.stages:
            x = F.relu(stage(F.upsample_nearest2d(x, 2)))
        x = self.out(x)
        rgb = x[:, :3]
        mask = x[:, 3:]
        return rgb, mask


@dataclass
class DecoderOutput:
    rgb: Tensor          # (B, P, 3, H, W): per-slot panels (+ background last)
    masks_raw: Tensor    # (B, P, 1, H, W) pre-softmax (background pinned)
    masks: Tensor        # (B, P, 1, H, W) softmax-normalized over panels
    mixed: Tensor        # (B, 3, H, W)
    has_background: bool

    @property
    def slot_rgb(self):
        return self.rgb[:, :-1] if self.has_background else self.rgb

    @property
    def slot_masks(self):
        return self.masks[:, :-1] if self.has_background else self.masks

    @property
    def background_rgb(self):
        return self.rgb[:, -1] if self.has_background else None


class SlotAutoencoder(nn.Module):
    """Encoder/decoder pair over object slots with categorical latents."""

    def __init__(self, rng, image_size=64, num_slots=5, categoricals=16, classes=8,
                 iterations=4, encoder_channels=(32, 64, 128, 128),
                 decoder_channels=(64, 64, 64, 32), background=True,
                 dtype=np.float32):
        super().__init__()
        self.image_size = image_size
        self.num_slots = num_slots
        self.categoricals = categoricals
        self.classes = classes
        self.slot_size = categoricals * classes
        self.background = background
        self.dtype = dtype
        self.encoder = ConvEncoder(image_size, encoder_channels, rng, dtype)
        self.slot_attention = SlotAttention(num_slots, self.slot_size,
                                            self.encoder.dim, iterations, rng, dtype)
        self.decoder = BroadcastDecoder(image_size, self.slot_size,
                                        decoder_channels, rng, dtype)
        if background:
            self.z_bg = nn.param(rng.normal(0.0, 0.1, size=(self.slot_size,)), dtype)

    # -- encoding -----------------------------------------------------------

    def encode(self, obs, noise):
        """Observations (B, 3, H, W) -> slot logits (B, n, slot_size)."""
        if obs.ndim != 4 or obs.shape[1:] != (3, self.image_size, self.image_size):
            raise ValueError(
                f"expected (B, 3, {self.image_size}, {self.image_size}) observations, "
                f"got {tuple(obs.shape)}")
        obs = obs if isinstance(obs, Tensor) else Tensor(np.asarray(obs, dtype=self.dtype))
        noise = noise if isinstance(noise, Tensor) else Tensor(np.asarray(noise, dtype=self.dtype))
        feats = self.encoder(obs)
        return self.slot_attention(feats, noise)

    def sample_noise(self, batch, rng):
        return Tensor(rng.standard_normal(
            (batch, self.num_slots, self.slot_size)).astype(self.dtype))

    def sample_latents(self, logits, rng=None, mode=False):
        """Slot logits -> one-hot latents (B, n, categoricals, classes)."""
        shaped = F.reshape(logits, logits.shape[:-1] + (self.categoricals, self.classes))
        return F.st_onehot(shaped, rng=rng, mode=mode)

    # -- decoding -----------------------------------------------------------

    def decode(self, latents, bg_mask=0.0):
        """Latents (B, n, categoricals, classes) -> DecoderOutput.

        ``bg_mask`` is the constant pre-softmax mask value of the background
        panel (a -inf here suppresses the background entirely; test hook).
        """
        b, n = latents.shape[0], latents.shape[1]
        flat = F.reshape(latents, (b, n, self.slot_size))
        panels = n
        if self.background:
            bg = F.reshape(self.z_bg, (1, 1, self.slot_size))
            bg = F.add(bg, Tensor(np.zeros((b, 1, 1), dtype=self.dtype)))
            flat = F.concat([flat, bg], axis=1)
            panels = n + 1
        rgb, mask = self.decoder(F.reshape(flat, (b * panels, self.slot_size)))
        h = self.image_size
        rgb = F.reshape(rgb, (b, panels, 3, h, h))
        mask = F.reshape(mask, (b, panels, 1, h, h))
        if self.background:
            slot_mask = mask[:, :n]
            bg_plane = Tensor(np.full((b, 1, 1, h, h), bg_mask, dtype=self.dtype))
            mask = F.concat([slot_mask, bg_plane], axis=1)
        masks = F.softmax(mask, axis=1)
        mixed = F.reduce_sum(F.mul(masks, rgb), axis=1)
        return DecoderOutput(rgb=rgb, masks_raw=mask, masks=masks, mixed=mixed,
                             has_background=self.background)

    # -- losses ---------------------------------------------------------------

    def reconstruction_nll(self, obs, mixed):
        """Unit-variance Gaussian NLL per frame, averaged over the batch."""
        obs = obs if isinstance(obs, Tensor) else Tensor(np.asarray(obs, dtype=self.dtype))
        diff = F.sub(mixed, obs)
        per_frame = int(np.prod(obs.shape[-3:]))
        sq = F.reduce_sum(F.mul(diff, diff)) * 0.5
        frames = float(np.prod(obs.shape[: obs.ndim - 3]))
        const = 0.5 * per_frame * LOG_2PI
        return F.add(F.div(sq, frames), const)

    def ae_loss(self, obs, logits, mixed, predicted_logits, alpha1=5.0, alpha2=0.03):
        """Total autoencoder loss and components.

        ``obs``/``mixed``: (B, L, 3, H, W); ``logits``: (B, L, n, slot_size);
        ``predicted_logits``: dynamics predictions aligned with frames
        1..L-1, already detached, or None to skip the cross term (the first
        frame of a window has no prediction). Components are averaged per
        frame over the steps where they are defined.
        """
        if logits.shape[:2] != obs.shape[:2]:
            raise ValueError(f"logits {logits.shape} do not align with obs {obs.shape}")
        j_rec = self.reconstruction_nll(obs, mixed)
        shaped = F.reshape(logits, logits.shape[:-1] + (self.categoricals, self.classes))
        ent = entropy(shaped)  # (B, L, n)
        j_ent = F.neg(F.reduce_mean(F.reduce_sum(ent, axis=2)))
        if predicted_logits is not None:
            target = logits[:, 1:]
            pred = predicted_logits.detach() if isinstance(predicted_logits, Tensor) \
                else Tensor(np.asarray(predicted_logits, dtype=self.dtype))
            perm = match_slots_batch(target.data, pred.data)
            pred_m = _apply_perm(pred, perm)
            j_cross = F.reduce_mean(F.reduce_sum(
                cross_entropy_logits(target, pred_m, self.categoricals, self.classes), axis=2))
        else:
            j_cross = Tensor(np.zeros((), dtype=self.dtype))
        total = F.add(F.add(j_rec, F.mul(j_ent, alpha1)), F.mul(j_cross, alpha2))
        return total, {"j_rec": float(j_rec.item()), "j_ent": float(j_ent.item()),
                       "j_cross": float(j_cross.item()), "ae_total": float(total.item())}


# ---------------------------------------------------------------------------
# slot matching and categorical measures

def match_slots(logits_a, logits_b):
    """Permutation pi minimizing sum_k ||a_k - b_pi(k)||_1 (optimal assignment)."""
    a = np.asarray(logits_a, dtype=np.float64)
    b = np.asarray(logits_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"match_slots: shapes differ {a.shape} vs {b.shape}")
    cost = np.abs(a[:, None, :] - b[None, :, :]).sum(axis=-1)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(a.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def match_cost(logits_a, logits_b, perm):
    a = np.asarray(logits_a, dtype=np.float64)
    b = np.asarray(logits_b, dtype=np.float64)
    return float(np.abs(a - b[perm]).sum())


def match_slots_batch(a, b):
    """Vectorized wrapper: (..., n, D) pairs -> (..., n) permutations."""
    lead = a.shape[:-2]
    a2 = a.reshape((-1,) + a.shape[-2:])
    b2 = b.reshape((-1,) + b.shape[-2:])
    out = np.stack([match_slots(x, y) for x, y in zip(a2, b2)])
    return out.reshape(lead + (a.shape[-2],))


def _apply_perm(tensor, perm):
    """Reorder the slot axis (third from last... here axis=2 of (B,L,n,D))."""
    b, l, n = perm.shape[0], perm.shape[1], perm.shape[2]
    flat = F.reshape(tensor, (b * l * n,) + tuple(tensor.shape[3:]))
    base = (np.arange(b * l).reshape(b, l, 1) * n + perm).reshape(-1)
    out = F.index_select(flat, 0, base)
    return F.reshape(out, tuple(tensor.shape))


def entropy(logits):
    """Shannon entropy in nats summed over the categorical axis.

    ``logits``: (..., categoricals, classes) -> (...) per latent set.
    """
    logp = F.log_softmax(logits, axis=-1)
    p = F.softmax(logits, axis=-1)
    return F.neg(F.reduce_sum(F.mul(p, logp), axis=(-2, -1)))


def cross_entropy_logits(p_logits, q_logits, categoricals, classes):
    """H(p, q) between categorical stacks given as flat (..., D) logits."""
    shape = p_logits.shape[:-1] + (categoricals, classes)
    p = F.softmax(F.reshape(p_logits, shape), axis=-1)
    logq = F.log_softmax(F.reshape(q_logits, shape), axis=-1)
    return F.neg(F.reduce_sum(F.mul(p, logq), axis=(-2, -1)))
