import math

import pytest
import torch
import torch.nn as nn

from stsf_cd.errors import ConfigurationError, ShapeError
from stsf_cd.pgffm import (
    DualPathDiffs,
    GatedFusion,
    PriorGuidedFusion,
    PriorProjector,
    dual_path_diff,
    gated_combination,
    gated_fuse,
    pgffm_forward,
    prior_distance,
    prior_projector,
)


def test_distance_of_identical_priors_is_zero():
    p = torch.randn(1, 8, 4, 4)
    assert torch.equal(prior_distance(p, p.clone()), torch.zeros(1, 1, 4, 4))


def test_distance_three_four_five():
    a = torch.tensor([3.0, 4.0]).view(1, 2, 1, 1)
    assert prior_distance(a, torch.zeros_like(a)).item() == pytest.approx(5.0)


def test_distance_matches_scalar_loop_and_is_symmetric():
    a, b = torch.randn(1, 8, 4, 4), torch.randn(1, 8, 4, 4)
    d = prior_distance(a, b)
    for r in range(4):
        for c in range(4):
            expected = math.sqrt(sum((float(a[0, k, r, c]) - float(b[0, k, r, c])) ** 2 for k in range(8)))
            assert float(d[0, 0, r, c]) == pytest.approx(expected, abs=1e-6)
    torch.testing.assert_close(d, prior_distance(b, a), atol=1e-7, rtol=0)


def test_distance_shape_mismatch():
    with pytest.raises(ShapeError):
        prior_distance(torch.randn(1, 4, 4, 4), torch.randn(1, 4, 2, 2))


def test_projector_starts_at_half():
    m = prior_projector(torch.rand(2, 1, 8, 8) * 10, PriorProjector())
    assert torch.equal(m, torch.full_like(m, 0.5))


def test_identity_projector_gives_logistic_value():
    projector = PriorProjector(hidden=1)
    identity = torch.zeros(1, 1, 3, 3)
    identity[0, 0, 1, 1] = 1.0
    with torch.no_grad():
        for conv in (projector.conv1, projector.conv2):
            conv.weight.copy_(identity)
            conv.bias.zero_()
    d = torch.zeros(1, 1, 3, 3)
    d[0, 0, 1, 1] = 3.0
    m = projector(d)
    assert m[0, 0, 1, 1].item() == pytest.approx(0.95257, abs=1e-5)
    assert m[0, 0, 0, 0].item() == 0.5


def test_dual_path_differences():
    s = torch.randn(1, 4, 2, 2)
    c_sar = torch.ones(1, 4, 2, 2)
    diffs = dual_path_diff(s, s.clone(), 2 * c_sar, c_sar)
    assert torch.equal(diffs.specific, torch.zeros_like(s))
    assert torch.equal(diffs.common, torch.ones_like(s))

    a, b, c, d = (torch.randn(1, 4, 2, 2) for _ in range(4))
    forward, swapped = dual_path_diff(a, b, c, d), dual_path_diff(b, a, d, c)
    assert torch.equal(swapped.specific, -forward.specific)
    assert torch.equal(swapped.common, -forward.common)


def test_gate_saturation_and_midpoint():
    fs, fc = torch.randn(1, 4, 3, 3), torch.randn(1, 4, 3, 3)
    ones = torch.ones(1, 1, 3, 3)
    assert torch.equal(gated_combination(ones, fs, fc), fs)
    assert torch.equal(gated_combination(torch.zeros_like(ones), fs, fc), fc)
    mid = gated_combination(0.5 * ones, torch.full_like(fs, 2.0), torch.full_like(fc, 4.0))
    assert torch.equal(mid, torch.full_like(fs, 3.0))


def test_gate_is_convex_and_linear():
    g = torch.Generator().manual_seed(0)
    m = torch.rand(1000, 1, 1, 1, generator=g)
    fs = torch.randn(1000, 3, 1, 1, generator=g)
    fc = torch.randn(1000, 3, 1, 1, generator=g)
    out = gated_combination(m.view(1, 1, 1000, 1).expand(1, 1, 1000, 1),
                            fs.permute(1, 0, 2, 3).reshape(1, 3, 1000, 1),
                            fc.permute(1, 0, 2, 3).reshape(1, 3, 1000, 1))
    lo = torch.minimum(fs, fc).permute(1, 0, 2, 3).reshape(1, 3, 1000, 1)
    hi = torch.maximum(fs, fc).permute(1, 0, 2, 3).reshape(1, 3, 1000, 1)
    assert (out >= lo - 1e-6).all() and (out <= hi + 1e-6).all()

    fs_, fc_ = torch.randn(1, 2, 4, 4), torch.randn(1, 2, 4, 4)
    m_ = torch.rand(1, 1, 4, 4)
    g0 = gated_combination(torch.zeros_like(m_), fs_, fc_)
    torch.testing.assert_close(gated_combination(m_, fs_, fc_) - g0, m_ * (fs_ - fc_), atol=1e-6, rtol=0)


def test_gated_fuse_refines_mix():
    fusion = GatedFusion(4).eval()
    diffs = DualPathDiffs(torch.randn(1, 4, 4, 4), torch.randn(1, 4, 4, 4))
    m = torch.rand(1, 1, 4, 4)
    fused, g = fusion(m, diffs)
    assert fused.shape == (1, 4, 4, 4)
    torch.testing.assert_close(fused, fusion.refine(g))
    torch.testing.assert_close(gated_fuse(m, diffs, fusion), fused)


def test_concat_fusion_mode():
    fusion = GatedFusion(4, mode="concat").eval()
    assert fusion.refine[0].in_channels == 8
    fused, _ = fusion(torch.rand(1, 1, 4, 4), DualPathDiffs(torch.randn(1, 4, 4, 4), torch.randn(1, 4, 4, 4)))
    assert fused.shape == (1, 4, 4, 4)
    with pytest.raises(ConfigurationError):
        GatedFusion(4, mode="average")


def _pyramid(channels, size=64):
    return tuple(torch.randn(1, c, size // s, size // s) for c, s in zip(channels, (4, 8, 16, 32)))


def test_identical_priors_give_midpoint_mix():
    channels = (4, 8, 16, 32)
    fusion = PriorGuidedFusion(channels).eval()
    s_opt, s_sar, c_opt, c_sar = (_pyramid(channels) for _ in range(4))
    prior = _pyramid((6, 6, 6, 6))
    fused, gates, mixes = fusion(s_opt, s_sar, c_opt, c_sar, prior, prior, return_details=True)
    assert [f.shape for f in fused] == [s.shape for s in s_opt]
    for i, scale in enumerate(fusion):
        assert torch.equal(gates[i], torch.full_like(gates[i], 0.5))
        specific = scale.specific_proj(s_opt[i]) - scale.specific_proj(s_sar[i])
        torch.testing.assert_close(mixes[i], 0.5 * (specific + (c_opt[i] - c_sar[i])))
    assert len(pgffm_forward(s_opt, s_sar, c_opt, c_sar, prior, prior, fusion)) == 4


def test_scales_have_independent_projectors():
    fusion = PriorGuidedFusion((4, 4, 4, 4))
    ids = {id(scale.projector.conv1.weight) for scale in fusion}
    assert len(ids) == 4
    assert isinstance(fusion[0].specific_proj, nn.Conv2d)
