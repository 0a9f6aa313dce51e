import math

import numpy as np
import pytest
import torch

from modalvgae.model import (
    AttentionPool,
    BaselineGNN,
    EvidentialHead,
    ModalVGAE,
    ModelConfig,
    ResidualSageBlock,
    SageLayer,
    build_baseline,
    build_model,
    mean_aggregate,
    num_parameters,
    seeded_dropout,
)

TINY = ModelConfig(
    n_inputs=10,
    spectral_widths=(12, 8),
    graph_width=8,
    graph_width2=12,
    latent_width=4,
    fusion_width=12,
    decoder_width=8,
    head_widths=(8,),
    n_modes=2,
    dropout=0.1,
)


def path_graph(n):
    members = torch.tensor([[i, i + 1] for i in range(n - 1)], dtype=torch.long)
    return torch.cat([members, members.flip(1)], dim=0)


def random_input(n, f=10, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.randn((n, f), generator=g, dtype=dtype)


def permute_graph(x, edges, perm):
    inv = torch.empty_like(perm)
    inv[perm] = torch.arange(len(perm))
    return x[perm], inv[edges]


def test_spectral_identical_rows_identical_outputs():
    model = build_model(TINY, seed=0)
    x = random_input(4)
    x[2] = x[0]
    out = model.spectral(x)
    assert torch.equal(out[2], out[0])
    assert out.shape == (4, TINY.spectral_widths[-1])


def test_spectral_permutation_equivariance():
    model = build_model(TINY, seed=0)
    x = random_input(6)
    perm = torch.randperm(6, generator=torch.Generator().manual_seed(1))
    assert torch.allclose(model.spectral(x)[perm], model.spectral(x[perm]), atol=1e-6)


def test_mean_aggregate_isolated_node_is_self():
    h = random_input(3, f=5)
    edges = torch.tensor([[0, 1], [1, 0]], dtype=torch.long)  # node 2 isolated
    agg = mean_aggregate(h, edges)
    assert torch.allclose(agg[2], h[2])
    assert torch.allclose(agg[0], 0.5 * (h[0] + h[1]))


def test_sage_complete_graph_equal_features():
    torch.manual_seed(0)
    layer = SageLayer(5, 7)
    h = torch.ones(4, 5) * 0.3
    edges = torch.tensor([(i, j) for i in range(4) for j in range(4) if i != j], dtype=torch.long)
    out = layer(h, edges)
    assert torch.allclose(out, out[0].expand_as(out), atol=1e-7)


def test_sage_edge_out_of_range():
    layer = SageLayer(5, 5)
    with pytest.raises(IndexError):
        layer(torch.zeros(2, 5), torch.tensor([[0, 5]], dtype=torch.long))


def test_sage_permutation_equivariance():
    torch.manual_seed(1)
    layer = SageLayer(6, 6)
    x = random_input(7, f=6)
    edges = path_graph(7)
    perm = torch.randperm(7, generator=torch.Generator().manual_seed(2))
    px, pe = permute_graph(x, edges, perm)
    assert (layer(x, edges)[perm] - layer(px, pe)).abs().max() < 1e-6


def test_residual_block_zero_weights_identity():
    block = ResidualSageBlock(5)
    with torch.no_grad():
        block.layer.lin.weight.zero_()
        block.layer.lin.bias.zero_()
    x = random_input(4, f=5)
    assert torch.equal(block(x, path_graph(4)), x)  # gelu(0) == 0


def test_residual_block_difference_equals_layer_term():
    torch.manual_seed(3)
    block = ResidualSageBlock(5)
    x = random_input(4, f=5)
    edges = path_graph(4)
    assert torch.allclose(block(x, edges) - x, block.layer(x, edges))


def test_attention_single_node():
    pool = AttentionPool(6)
    h = random_input(1, f=6)
    pooled, w = pool(h)
    assert torch.allclose(pooled, h[0])
    assert torch.allclose(w, torch.ones(1))


def test_attention_equal_rows_uniform():
    pool = AttentionPool(6)
    h = torch.ones(5, 6) * 1.7
    pooled, w = pool(h)
    assert torch.allclose(w, torch.full((5,), 0.2))
    assert torch.allclose(pooled, h[0])


def test_attention_shift_invariance_double_precision():
    pool = AttentionPool(6).double()
    h = random_input(5, f=6, dtype=torch.float64)
    scores = pool.query(h).squeeze(-1)
    w0 = torch.softmax(scores, dim=0)
    w1 = torch.softmax(scores + 7.5, dim=0)
    assert (w0 - w1).abs().max() < 1e-12


def test_latent_encode_shapes_and_linearity():
    model = build_model(TINY, seed=0).double()
    with torch.no_grad():
        model.w_mu.bias.zero_()
        model.w_sigma.bias.zero_()
    h = torch.randn(TINY.graph_width2, dtype=torch.float64)
    mu1, lv1 = model.latent(h)
    mu2, lv2 = model.latent(2 * h)
    assert mu1.shape == (TINY.latent_width,) and lv1.shape == (TINY.latent_width,)
    assert torch.allclose(mu2, 2 * mu1) and torch.allclose(lv2, 2 * lv1)
    mu0, lv0 = model.latent(torch.zeros_like(h))
    assert torch.all(mu0 == 0) and torch.all(lv0 == 0)


def test_reparameterize():
    mu = torch.tensor([1.0, -2.0])
    logvar = torch.zeros(2)
    assert torch.equal(ModalVGAE.reparameterize(mu, logvar, torch.zeros(2)), mu)
    e = torch.tensor([0.5, 0.25])
    assert torch.allclose(ModalVGAE.reparameterize(mu, logvar, e), mu + e)


def test_reparameterize_monte_carlo_mean():
    g = torch.Generator().manual_seed(0)
    mu = torch.tensor([0.7])
    draws = ModalVGAE.reparameterize(
        mu, torch.zeros(1), torch.randn((100000, 1), generator=g)
    )
    assert abs(float(draws.mean()) - 0.7) < 0.02


def test_node_decoder_broadcast_and_shape():
    model = build_model(TINY, seed=0)
    x = random_input(6)
    edges = path_graph(6)
    h1, h2, h_g, _ = model.encode(x, edges)
    z = torch.randn(TINY.latent_width, generator=torch.Generator().manual_seed(4))
    zz = z.unsqueeze(0).expand(6, -1)
    assert torch.equal(zz[3], z)
    phi = model.decode_nodes(h1, h2, z, edges)
    assert phi.shape == (6, TINY.n_modes)
    assert torch.isfinite(phi).all()


def test_context_vector_contract():
    model = build_model(TINY, seed=0)
    h_g = torch.randn(TINY.graph_width2, generator=torch.Generator().manual_seed(5))
    dz = TINY.latent_width
    c0 = model.context_vector(h_g, torch.zeros(dz))
    assert c0.shape == (TINY.graph_width2 + 2 * dz,)
    assert torch.all(c0[-dz:] == 0) and torch.all(c0[TINY.graph_width2 : TINY.graph_width2 + dz] == 0)
    z = torch.randn(dz, generator=torch.Generator().manual_seed(6))
    c1 = model.context_vector(h_g, z)
    c3 = model.context_vector(h_g, 3.0 * z)
    assert torch.allclose(c3[-dz:], 3.0 * c1[-dz:])


def test_evidential_constraints():
    head = EvidentialHead(8, (8,), 3, eps=1e-6)
    with torch.no_grad():
        head.out.weight.zero_()
        head.out.bias.zero_()
    out = head(torch.randn(8, generator=torch.Generator().manual_seed(7)))
    assert torch.allclose(out.nu, torch.full((3,), math.log(2.0) + 1e-6))
    assert torch.allclose(out.alpha, torch.full((3,), math.log(2.0) + 1.0 + 1e-6))
    head2 = EvidentialHead(8, (8,), 3, eps=1e-6)
    for seed in range(20):
        c = torch.randn(8, generator=torch.Generator().manual_seed(seed)) * 10
        o = head2(c)
        assert torch.all(o.nu > 0) and torch.all(o.alpha > 1) and torch.all(o.beta > 0)


def test_forward_mean_mode_deterministic():
    model = build_model(TINY, seed=0)
    x, edges = random_input(5), path_graph(5)
    a = model(x, edges, mode="mean")
    b = model(x, edges, mode="mean")
    assert torch.equal(a.phi, b.phi)
    assert torch.equal(a.nig_freq.gamma, b.nig_freq.gamma)
    assert torch.equal(a.z, a.mu)


def test_forward_stochastic_reproducible():
    model = build_model(TINY, seed=0)
    x, edges = random_input(5), path_graph(5)
    a = model(x, edges, mode="sample", generator=torch.Generator().manual_seed(3))
    b = model(x, edges, mode="sample", generator=torch.Generator().manual_seed(3))
    c = model(x, edges, mode="sample", generator=torch.Generator().manual_seed(4))
    assert torch.equal(a.phi, b.phi)
    assert not torch.equal(a.z, c.z)


def test_forward_invariants_random_sweep():
    model = build_model(TINY, seed=0)
    for seed in range(30):
        n = 4 + seed % 5
        with torch.no_grad():
            out = model(random_input(n, seed=seed), path_graph(n), mode="mean")
        assert abs(float(out.attention.sum()) - 1.0) < 1e-6
        assert torch.all(out.attention > 0)
        assert torch.all(out.nig_freq.nu > 0) and torch.all(out.nig_freq.alpha > 1)
        assert torch.all(out.nig_zeta.beta > 0)
        assert torch.isfinite(out.phi).all()


def test_full_forward_permutation_equivariance():
    model = build_model(TINY, seed=0)
    x, edges = random_input(7), path_graph(7)
    out = model(x, edges, mode="mean")
    perm = torch.randperm(7, generator=torch.Generator().manual_seed(8))
    px, pe = permute_graph(x, edges, perm)
    pout = model(px, pe, mode="mean")
    assert (out.phi[perm] - pout.phi).abs().max() < 1e-5
    assert (out.h_g - pout.h_g).abs().max() < 1e-5
    for a, b in zip(out.nig_freq, pout.nig_freq):
        assert (a - b).abs().max() < 1e-5
    assert (out.attention[perm] - pout.attention).abs().max() < 1e-5


def test_seeded_dropout_replayable():
    x = torch.ones(100, 10)
    a = seeded_dropout(x, 0.5, True, torch.Generator().manual_seed(0))
    b = seeded_dropout(x, 0.5, True, torch.Generator().manual_seed(0))
    assert torch.equal(a, b)
    assert torch.equal(seeded_dropout(x, 0.5, False, None), x)


def test_baseline_contracts():
    model = build_baseline(TINY, seed=0)
    x, edges = random_input(6), path_graph(6)
    f1, z1, phi1 = model(x, edges)
    f2, z2, phi2 = model(x, edges)
    assert torch.equal(f1, f2) and torch.equal(phi1, phi2)
    assert f1.shape == (TINY.n_modes,) and z1.shape == (TINY.n_modes,)
    assert phi1.shape == (6, TINY.n_modes)


def test_baseline_strictly_smaller():
    cfg = ModelConfig()
    assert num_parameters(BaselineGNN(cfg)) < num_parameters(ModalVGAE(cfg))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(graph_width2=64, graph_width=128).validate()
    with pytest.raises(ValueError):
        ModelConfig(dropout=1.0).validate()
    with pytest.raises(ValueError):
        ModelConfig(spectral_widths=(64, 32)).validate()  # must end at graph width


def test_gradient_check_model_ops():
    """Autograd parameter gradients vs central finite differences (float64)."""
    cfg = TINY
    model = build_model(cfg, seed=0).double()
    x = random_input(5, dtype=torch.float64)
    edges = path_graph(5)

    def probe():
        out = model(x, edges, mode="mean")
        return (
            out.phi.sum()
            + out.nig_freq.gamma.sum() + out.nig_freq.nu.sum()
            + out.nig_freq.alpha.sum() + out.nig_freq.beta.sum()
            + out.nig_zeta.gamma.sum()
            + out.h_g.sum() + out.mu.sum() + out.logvar.sum()
        )

    model.zero_grad()
    probe().backward()
    step = 1e-5
    worst = 0.0
    for name, p in model.named_parameters():
        grad = p.grad
        if grad is None:
            continue
        flat = p.data.view(-1)
        gflat = grad.view(-1)
        idx = torch.linspace(0, flat.numel() - 1, steps=min(6, flat.numel())).long()
        for i in idx:
            orig = float(flat[i])
            flat[i] = orig + step
            up = float(probe())
            flat[i] = orig - step
            dn = float(probe())
            flat[i] = orig
            fd = (up - dn) / (2 * step)
            an = float(gflat[i])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            worst = max(worst, rel)
    assert worst < 1e-4
