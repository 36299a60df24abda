"""Environment lighting tests: lat-long conventions, bilinear sampling,
split-sum tables, constant-map fixed points, and the map generator.

A constant environment is the key oracle: prefiltering and cosine
convolution are weighted averages, so a constant map must reproduce
itself regardless of sample placement.
"""

import math

import torch

from gir.envlight import (
    EnvGenerator,
    EnvironmentMap,
    build_dfg_lut,
    build_mip_chain,
    compute_irradiance,
    dfg_lookup,
    direction_grid,
    dirs_to_uv,
    hammersley,
    irradiance_lookup,
    light_regularizer,
    prefilter_specular,
    sample_env,
    specular_lookup,
)


def test_direction_grid_conventions():
    h, w = 8, 16
    dirs = direction_grid(h, w, dtype=torch.float64)
    assert dirs.shape == (h, w, 3)
    assert (dirs.norm(dim=-1) - 1).abs().max() < 1e-12
    # Top row points near +z, bottom row near -z.
    assert float(dirs[0, :, 2].min()) > 0.9
    assert float(dirs[-1, :, 2].max()) < -0.9
    # First column azimuth: u=0.5/w maps just past phi = -pi (-x side).
    assert float(dirs[h // 2, 0, 0]) < -0.9


def test_dirs_to_uv_inverts_direction_grid():
    h, w = 16, 32
    dirs = direction_grid(h, w, dtype=torch.float64)
    u, v = dirs_to_uv(dirs)
    uu = (torch.arange(w, dtype=torch.float64) + 0.5) / w
    vv = (torch.arange(h, dtype=torch.float64) + 0.5) / h
    assert (u - uu).abs().max() < 1e-9
    assert (v - vv[:, None]).abs().max() < 1e-9


def test_sample_env_exact_at_texel_centers():
    gen = torch.Generator().manual_seed(101)
    env = torch.rand(8, 16, 3, generator=gen, dtype=torch.float64)
    dirs = direction_grid(8, 16, dtype=torch.float64)
    vals = sample_env(env, dirs)
    assert (vals - env).abs().max() < 1e-9


def test_sample_env_wraps_azimuth_seam():
    env = torch.zeros(2, 4, 3, dtype=torch.float64)
    env[:, 0] = 1.0  # first column
    env[:, -1] = 3.0  # last column
    # Halfway between the last and first columns in u, on row 0's latitude.
    theta = (0.5 / 2) * math.pi
    phi = -math.pi  # u = 0 exactly, half a texel left of column 0's center
    d = torch.tensor(
        [[math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]],
        dtype=torch.float64,
    )
    val = sample_env(env, d)
    assert (val - 2.0).abs().max() < 1e-9  # (1 + 3) / 2 across the seam


def test_sample_env_differentiable_in_env():
    env = torch.rand(4, 8, 3, dtype=torch.float64, requires_grad=True)
    dirs = torch.nn.functional.normalize(torch.randn(10, 3, dtype=torch.float64), dim=-1)
    sample_env(env, dirs).sum().backward()
    assert env.grad is not None
    assert float(env.grad.abs().sum()) > 0


def test_environment_map_validation():
    EnvironmentMap(torch.ones(4, 8, 3))
    for bad in (
        torch.ones(4, 9, 3),
        torch.ones(4, 8, 4),
        -torch.ones(4, 8, 3),
        torch.full((4, 8, 3), float("nan")),
    ):
        try:
            EnvironmentMap(bad)
            assert False, "expected ValueError"
        except ValueError:
            pass


def test_hammersley_low_discrepancy():
    pts = hammersley(256, seed=0)
    assert pts.shape == (256, 2)
    assert float(pts.min()) >= 0 and float(pts.max()) < 1
    # Stratified first coordinate: sorted gaps are exactly 1/n.
    gaps = torch.sort(pts[:, 0]).values.diff()
    assert (gaps - 1.0 / 256).abs().max() < 1e-12
    assert torch.equal(pts, hammersley(256, seed=0))
    assert not torch.equal(pts, hammersley(256, seed=1))


def test_prefilter_constant_env_fixed_point():
    const = torch.full((8, 16, 3), 0.7)
    levels = prefilter_specular(const, num_levels=3, samples=8, seed=0)
    # Source is below the 16-row floor, so no level downsamples.
    assert [tuple(l.shape) for l in levels] == [(8, 16, 3), (8, 16, 3), (8, 16, 3)]
    for level in levels:
        assert (level - 0.7).abs().max() < 1e-6


def test_prefilter_resolution_floors():
    big = torch.full((64, 128, 3), 1.0)
    levels = prefilter_specular(big, num_levels=4, samples=4, seed=0)
    # Halving stops at the 16-row floor instead of collapsing to a few
    # texels, which would smear bright regions across the sphere.
    assert [tuple(l.shape) for l in levels] == [
        (64, 128, 3),
        (32, 64, 3),
        (16, 32, 3),
        (16, 32, 3),
    ]
    try:
        prefilter_specular(big, num_levels=1)
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_irradiance_constant_env_fixed_point():
    const = torch.full((8, 16, 3), 0.7)
    irr = compute_irradiance(const, out_hw=(4, 8), samples=16, seed=0)
    assert irr.shape == (4, 8, 3)
    assert (irr - 0.7).abs().max() < 1e-6


def test_irradiance_resolution_cannot_exceed_source():
    try:
        compute_irradiance(torch.ones(4, 8, 3), out_hw=(8, 16))
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_irradiance_matches_quadrature_on_smooth_env():
    # Oracle: direct cosine-weighted quadrature of the rendering integral
    # (1/pi) * int L (n . w) dw on a fine lat-long grid.
    h, w = 32, 64
    dirs = direction_grid(h, w, dtype=torch.float64)
    env = (1.0 + dirs[..., 2:3]).expand(h, w, 3).contiguous()  # linear in z
    theta = (torch.arange(h, dtype=torch.float64) + 0.5) / h * math.pi
    dw = torch.sin(theta)[:, None] * (math.pi / h) * (2 * math.pi / w)
    normal = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
    cos = (dirs @ normal).clamp_min(0.0)
    want = float((env[..., 0] * cos * dw).sum() / math.pi)
    irr = compute_irradiance(env, out_hw=(32, 64), samples=4096, seed=0)
    got = float(sample_env(irr, normal.unsqueeze(0))[0, 0])
    assert abs(got - want) / want < 0.02


def test_specular_lookup_linear_between_levels():
    const = torch.full((8, 16, 3), 1.0)
    mip = build_mip_chain(const, num_levels=3, samples=8, irradiance_hw=(4, 8), irradiance_samples=8, seed=0)
    mip.levels[0] = torch.full((8, 16, 3), 1.0)
    mip.levels[1] = torch.full((4, 8, 3), 2.0)
    mip.levels[2] = torch.full((2, 4, 3), 3.0)
    d = torch.tensor([[0.0, 0.0, 1.0]])
    for r, want in ((0.0, 1.0), (0.25, 1.5), (0.5, 2.0), (0.75, 2.5), (1.0, 3.0)):
        got = float(specular_lookup(mip, d, torch.tensor([r]))[0, 0])
        assert abs(got - want) < 1e-6
    assert mip.roughnesses == [0.0, 0.5, 1.0]


def test_irradiance_lookup_reads_irradiance_map():
    const = torch.full((8, 16, 3), 0.25)
    mip = build_mip_chain(const, num_levels=2, samples=8, irradiance_hw=(4, 8), irradiance_samples=8, seed=0)
    vals = irradiance_lookup(mip, torch.tensor([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]))
    assert (vals - 0.25).abs().max() < 1e-6


def test_dfg_lookup_exact_at_cell_centers():
    lut = build_dfg_lut(res=16, samples=64, seed=0)
    assert lut.shape == (16, 16, 2)
    centers = (torch.arange(16, dtype=torch.float32) + 0.5) / 16
    got = dfg_lookup(lut, centers[3].expand(4), centers[torch.tensor([0, 5, 10, 15])])
    want = lut[3, torch.tensor([0, 5, 10, 15])]
    assert (got - want).abs().max() == 0


def test_dfg_lut_range_and_mirror_limit():
    lut = build_dfg_lut(res=16, samples=4096, seed=0)
    s = lut[..., 0] + lut[..., 1]
    assert float(lut.min()) >= 0
    # Pre-integrated response never exceeds white-furnace energy by more
    # than Monte Carlo noise.
    assert float(s.max()) < 1.005
    # Smooth surface seen head-on reflects all split-sum energy.
    assert abs(float(s[-1, 0]) - 1.0) < 5e-3


def test_dfg_lut_smooth_in_both_axes():
    lut = build_dfg_lut(res=32, samples=2048, seed=0)
    dv = (lut[1:] - lut[:-1]).abs().max()
    dr = (lut[:, 1:] - lut[:, :-1]).abs().max()
    assert float(dv) < 0.2
    assert float(dr) < 0.2


def test_light_regularizer_identities():
    gen = torch.Generator().manual_seed(103)
    gray = torch.rand(4, 8, 1, generator=gen).expand(4, 8, 3).contiguous()
    assert float(light_regularizer(gray)) == 0.0
    hand = torch.tensor([[[1.0, 0.0, 0.0]]], dtype=torch.float64)
    assert abs(float(light_regularizer(hand)) - 4.0 / 3.0) < 1e-12
    env = EnvironmentMap(torch.rand(4, 8, 3, generator=gen))
    assert float(light_regularizer(env)) > 0


def test_env_generator_shapes_positivity_determinism():
    gen_a = EnvGenerator(embed_height=4, embed_width=8, embed_channels=8, upsamples=2, seed=3)
    gen_b = EnvGenerator(embed_height=4, embed_width=8, embed_channels=8, upsamples=2, seed=3)
    out = gen_a().detach()
    assert out.shape == (16, 32, 3)
    assert (gen_a.out_height, gen_a.out_width) == (16, 32)
    assert float(out.min()) > 0  # softplus head
    assert torch.equal(out, gen_b().detach())
    gen_c = EnvGenerator(embed_height=4, embed_width=8, embed_channels=8, upsamples=2, seed=4)
    assert not torch.equal(out, gen_c().detach())


def test_env_generator_validation():
    try:
        EnvGenerator(embed_height=4, embed_width=9)
        assert False, "expected ValueError"
    except ValueError:
        pass
    try:
        EnvGenerator(embed_height=4, embed_width=8, upsamples=2, stage_channels=(8,))
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_env_generator_gradients_reach_embedding():
    gen = EnvGenerator(embed_height=4, embed_width=8, embed_channels=4, upsamples=1, seed=0)
    gen().sum().backward()
    assert gen.embedding.grad is not None
    assert float(gen.embedding.grad.abs().sum()) > 0
    for p in gen.parameters():
        assert p.grad is not None


def test_env_generator_embedding_gradient_matches_fd():
    gen = EnvGenerator(embed_height=2, embed_width=4, embed_channels=2, upsamples=1, seed=1).double()
    out = gen().sum()
    out.backward()
    grad = gen.embedding.grad.clone()
    eps = 1e-6
    for idx in ((0, 0, 0, 0), (0, 1, 1, 2)):
        with torch.no_grad():
            base = gen.embedding[idx].item()
            gen.embedding[idx] = base + eps
            hi = float(gen().sum())
            gen.embedding[idx] = base - eps
            lo = float(gen().sum())
            gen.embedding[idx] = base
        fd = (hi - lo) / (2 * eps)
        assert abs(fd - float(grad[idx])) < 1e-5 * max(1.0, abs(fd))
