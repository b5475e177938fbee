import dataclasses

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch.utils.flop_counter import FlopCounterMode

from affmixer.config import MixerConfig
from affmixer.errors import DimensionError, NonFiniteError
from affmixer.tam import MixerBlock, MixerLevel, TemporalAggregation, tam_flops
from oracles import central_diff, max_rel_error

SHAPES = {1: (6, 4, 4), 2: (8, 2, 2), 3: (10, 1, 1)}


def small_cfg(**kw):
    return MixerConfig(embed_dim=(8, 8, 8), depth=(1, 1, 1), **kw)


def pyramid(b, t, dtype=torch.float32, seed=0):
    g = torch.Generator().manual_seed(seed)
    return {lv: torch.randn(b, t, c, h, w, generator=g, dtype=dtype) for lv, (c, h, w) in SHAPES.items()}


@settings(max_examples=10, deadline=None)
@given(b=st.integers(1, 3), t=st.integers(1, 5), levels=st.sampled_from([(1, 2, 3), (2, 3), (3,), (1,)]))
def test_output_shapes(b, t, levels):
    cfg = dataclasses.replace(small_cfg(), levels=levels)
    tam = TemporalAggregation(cfg, SHAPES, t)
    out = tam(pyramid(b, t))
    assert out.per_frame.shape == (b, t, 8 * len(levels))
    assert out.per_sequence.shape == (b, 8 * len(levels))


def test_single_frame_clip():
    tam = TemporalAggregation(small_cfg(), SHAPES, 1)
    out = tam(pyramid(2, 1))
    torch.testing.assert_close(out.per_sequence, out.per_frame[:, 0])


def test_tokenize_is_row_major():
    level = MixerLevel(2, (2, 3), 1, 2, 1, small_cfg())
    with torch.no_grad():
        level.proj.weight.copy_(torch.eye(2))
        level.proj.bias.zero_()
    feats = torch.arange(12.0).view(1, 1, 2, 2, 3)
    tokens = level.tokenize(feats)
    assert tokens[0, 0, :, 0].tolist() == list(range(6))
    assert tokens[0, 0, 4].tolist() == [4.0, 10.0]


def test_residual_identity_bitwise():
    torch.manual_seed(0)
    tam = TemporalAggregation(small_cfg(), SHAPES, 4).double()
    tam.zero_mixing_outputs()
    pyr = pyramid(2, 4, torch.float64)
    out = tam(pyr)
    baseline = torch.cat([tam.levels[str(lv)].tokenize(pyr[lv]).mean(dim=2) for lv in (1, 2, 3)], dim=-1)
    assert torch.equal(out.per_frame, baseline)


def test_temporal_mixing_is_only_cross_frame_path():
    torch.manual_seed(0)
    cfg = small_cfg(mixing_order=("spatial", "channel"))
    tam = TemporalAggregation(cfg, SHAPES, 5)
    pyr = pyramid(1, 5)
    perm = torch.tensor([3, 0, 4, 1, 2])
    out = tam(pyr).per_frame
    out_p = tam({k: v[:, perm] for k, v in pyr.items()}).per_frame
    torch.testing.assert_close(out_p, out[:, perm], rtol=0, atol=1e-6)

    torch.manual_seed(0)
    full = TemporalAggregation(small_cfg(), SHAPES, 5)
    a = full(pyr).per_frame
    b = full({k: v[:, perm] for k, v in pyr.items()}).per_frame
    assert not torch.allclose(b, a[:, perm], atol=1e-4)


def test_padded_frames_do_not_leak():
    torch.manual_seed(0)
    tam = TemporalAggregation(small_cfg(), SHAPES, 4)
    mask = torch.tensor([[True, True, True, False]])
    pyr = pyramid(1, 4)
    other = {k: v.clone() for k, v in pyr.items()}
    for v in other.values():
        v[:, 3] = 123.0
    a, b = tam(pyr, mask), tam(other, mask)
    torch.testing.assert_close(a.per_frame[:, :3], b.per_frame[:, :3], rtol=0, atol=1e-6)
    torch.testing.assert_close(a.per_sequence, a.per_frame[:, :3].mean(1), rtol=0, atol=1e-6)


def test_mixer_block_gradients_match_finite_differences():
    torch.manual_seed(0)
    block = MixerBlock(2, 4, 8, small_cfg()).double()
    x = torch.randn(1, 2, 4, 8, dtype=torch.float64, requires_grad=True)
    w = torch.randn(1, 2, 4, 8, dtype=torch.float64)
    (block(x) * w).sum().backward()
    numeric = central_diff(lambda: (block(x.detach()) * w).sum(), x.detach())
    assert max_rel_error(x.grad, numeric) < 1e-6
    for name, p in block.named_parameters():
        num = central_diff(lambda: (block(x.detach()) * w).sum(), p)
        assert max_rel_error(p.grad, num) < 1e-6, name


def test_shape_and_finiteness_errors():
    block = MixerBlock(2, 4, 8, small_cfg())
    with pytest.raises(DimensionError):
        block(torch.randn(1, 3, 4, 8))
    tam = TemporalAggregation(small_cfg(), SHAPES, 2)
    with pytest.raises(DimensionError):
        tam({1: pyramid(1, 2)[1]})
    bad = pyramid(1, 2)
    bad[2][0, 0, 0, 0, 0] = float("inf")
    with pytest.raises(NonFiniteError):
        tam(bad)
    with pytest.raises(DimensionError):
        TemporalAggregation(small_cfg(), {1: SHAPES[1]}, 2)


def test_flops_match_closed_form_and_torch_counter():
    cfg = MixerConfig(embed_dim=(8, 12, 16), depth=(2, 1, 1), temporal_expansion=3.0)
    t = 6
    flops = tam_flops(cfg, SHAPES, t)
    expect = {"tokenize": 0, "temporal": 0, "spatial": 0, "channel": 0}
    for lv, (c, h, w) in SHAPES.items():
        s, d, n = h * w, cfg.dim(lv), cfg.n_blocks(lv)
        expect["tokenize"] += 2 * t * s * c * d
        expect["temporal"] += n * 4 * s * d * t * round(t * 3.0)
        expect["spatial"] += n * 4 * t * d * s * round(s * 2.0)
        expect["channel"] += n * 4 * t * s * d * round(d * 2.0)
    assert {k: flops[k] for k in expect} == expect
    assert flops["total"] == sum(expect.values())

    tam = TemporalAggregation(cfg, SHAPES, t)
    with FlopCounterMode(display=False) as counter:
        tam(pyramid(1, t))
    assert counter.get_total_flops() == flops["total"]


def test_flop_scaling_in_t():
    cfg = small_cfg()
    f = {t: tam_flops(cfg, SHAPES, t) for t in (4, 8, 16)}
    for k in ("tokenize", "spatial", "channel"):
        assert f[8][k] == 2 * f[4][k] and f[16][k] == 2 * f[8][k]
    assert f[8]["temporal"] == 4 * f[4]["temporal"]


def test_level_ablation_is_monotone():
    sizes, flops = [], []
    for levels in [(3,), (2, 3), (1, 2, 3)]:
        cfg = dataclasses.replace(small_cfg(), levels=levels)
        tam = TemporalAggregation(cfg, SHAPES, 4)
        sizes.append(sum(p.numel() for p in tam.parameters()))
        flops.append(tam_flops(cfg, SHAPES, 4)["total"])
    assert sizes == sorted(sizes) and len(set(sizes)) == 3
    assert flops == sorted(flops) and len(set(flops)) == 3


@pytest.mark.parametrize("levels,width", [((1, 2, 3), 192), ((3,), 64)])
def test_fused_width(levels, width):
    cfg = MixerConfig(levels=levels, depth=(1, 1, 1))
    out = TemporalAggregation(cfg, SHAPES, 8)(pyramid(1, 8))
    assert out.per_frame.shape == (1, 8, width)


def test_constant_clip_without_temporal_mixing_gives_identical_rows():
    torch.manual_seed(0)
    tam = TemporalAggregation(small_cfg(mixing_order=("spatial", "channel")), SHAPES, 4)
    still = {k: v[:, :1].repeat(1, 4, 1, 1, 1) for k, v in pyramid(1, 4).items()}
    out = tam(still)
    torch.testing.assert_close(out.per_frame, out.per_frame[:, :1].expand(-1, 4, -1), rtol=0, atol=1e-6)
    torch.testing.assert_close(out.per_sequence, out.per_frame[:, 0], rtol=0, atol=1e-6)


def test_tokenize_identity_and_zero_input():
    level = MixerLevel(8, (2, 2), 3, 8, 1, small_cfg())
    with torch.no_grad():
        level.proj.weight.copy_(torch.eye(8))
        level.proj.bias.zero_()
    x = torch.randn(1, 3, 8, 2, 2)
    torch.testing.assert_close(level.tokenize(x), x.flatten(-2).transpose(-1, -2))
    fresh = MixerLevel(8, (2, 2), 3, 8, 1, small_cfg())
    tokens = fresh.tokenize(torch.zeros(1, 3, 8, 2, 2))
    torch.testing.assert_close(tokens, fresh.proj.bias.detach().expand_as(tokens))
