"""Training objectives and the identity chain connecting them.

A batch is a Tensor whose leading axis indexes samples; the remaining
axes are features (image batches are (B,C,H,W), 2-D point batches are
(B,2)). A critic is anything with `forward(batch) -> (vector, scalar)`
where the scalar head is the per-sample sum of the vector head.

Three adversarial forms are provided: the paired vector-head loss, its
unpaired separable rearrangement, and the two-sided scalar-head loss.
Whenever the critic separates real from generated on every feature of
every pair, the three coincide; `identity_chain_check` verifies that
numerically. Batch reductions in the unpaired forms run in value-sorted
order, so reordering a batch cannot change the result even in the last
bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def recon_l1(x: Tensor, gx: Tensor) -> Tensor:
    """Mean per-sample L1 distance: (1/m) * sum |x - gx|."""
    if x.shape != gx.shape:
        raise ad.ShapeMismatch(f"reconstruction pair shapes differ: {x.shape} vs {gx.shape}")
    m = x.shape[0]
    return ad.scale(ad.l1_norm(ad.sub(x, gx)), 1.0 / m)


def ae_loss(x: Tensor, g, z) -> Tensor:
    """Autoencoder objective: mean per-sample L1 between x and G(x, z)."""
    return recon_l1(x, g.forward(x, z))


def paired_adv_loss(x: Tensor, gx: Tensor, d) -> Tensor:
    """Paired adversarial objective: (1/m) * sum_k |D(x_k) - D(gx_k)|_1."""
    if x.shape[0] != gx.shape[0]:
        raise ad.ShapeMismatch(
            f"paired batches must align: {x.shape[0]} real vs {gx.shape[0]} generated")
    vec_x, _ = d.forward(x)
    vec_g, _ = d.forward(gx)
    return ad.scale(ad.l1_norm(ad.sub(vec_x, vec_g)), 1.0 / x.shape[0])


def separable_adv_loss(x: Tensor, gx: Tensor, d) -> Tensor:
    """Unpaired rearrangement: mean_k sum_i D_i(x_k) - mean_k sum_i D_i(gx_k).

    No index alignment is required between the two batches; each side is
    reduced in canonical order and normalized by its own size.
    """
    vec_x, _ = d.forward(x)
    vec_g, _ = d.forward(gx)
    sx = ad.ordered_sum(ad.sum_(vec_x, axis=1))
    sg = ad.ordered_sum(ad.sum_(vec_g, axis=1))
    return ad.sub(ad.scale(sx, 1.0 / x.shape[0]), ad.scale(sg, 1.0 / gx.shape[0]))


def wgan_loss(real: Tensor, fake: Tensor, d) -> Tensor:
    """Scalar-head objective: mean D_hat(real) - mean D_hat(fake).

    The critic ascends this; the generator's step uses
    `generator_wgan_loss`, the fake term alone with flipped sign.
    """
    _, s_real = d.forward(real)
    _, s_fake = d.forward(fake)
    a = ad.scale(ad.ordered_sum(s_real), 1.0 / real.shape[0])
    b = ad.scale(ad.ordered_sum(s_fake), 1.0 / fake.shape[0])
    return ad.sub(a, b)


def generator_wgan_loss(fake: Tensor, d) -> Tensor:
    """-mean D_hat(fake): what the generator descends in scalar-head mode."""
    _, s_fake = d.forward(fake)
    return ad.scale(ad.ordered_sum(s_fake), -1.0 / fake.shape[0])


def separation_rate(x: Tensor, gx: Tensor, d) -> float:
    """Fraction of (feature, pair) slots with D_i(x_k) >= D_i(gx_k)."""
    vec_x, _ = d.forward(x)
    vec_g, _ = d.forward(gx)
    return float(np.mean(vec_x.data >= vec_g.data))


@dataclass(frozen=True)
class ChainCheckResult:
    applicable: bool  # False when elementwise separation does not hold
    paired: float
    separable: float
    wgan: float

    @property
    def paired_vs_separable(self) -> float:
        return abs(self.paired - self.separable)

    @property
    def separable_vs_wgan(self) -> float:
        return abs(self.separable - self.wgan)

    @property
    def max_discrepancy(self) -> float:
        return max(self.paired_vs_separable, self.separable_vs_wgan)


def identity_chain_check(x: Tensor, gx: Tensor, d) -> ChainCheckResult:
    """Evaluate all three adversarial forms on the same paired batches.

    When D_i(x_k) >= D_i(gx_k) holds for every feature i and pair k, the
    three must agree; the caller gets the values and the discrepancies.
    When separation fails the chain is reported as not applicable rather
    than an error.
    """
    if x.shape[0] != gx.shape[0]:
        raise ad.ShapeMismatch(
            f"chain check needs paired batches: {x.shape[0]} vs {gx.shape[0]}")
    vec_x, _ = d.forward(x)
    vec_g, _ = d.forward(gx)
    applicable = bool(np.all(vec_x.data >= vec_g.data))
    return ChainCheckResult(
        applicable=applicable,
        paired=paired_adv_loss(x, gx, d).item(),
        separable=separable_adv_loss(x, gx, d).item(),
        wgan=wgan_loss(x, gx, d).item(),
    )
