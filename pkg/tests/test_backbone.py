import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from affmixer.backbone import Backbone, apply_freeze_policy, extract_pyramid
from affmixer.config import BackboneConfig
from affmixer.errors import ConfigError, DimensionError, NonFiniteError


def conv_params(cin, cout):
    return 9 * cin * cout + cout


@pytest.fixture
def backbone():
    torch.manual_seed(0)
    return Backbone(BackboneConfig(channels=(8, 12, 16), stem_channels=(4, 6)))


@settings(max_examples=8, deadline=None)
@given(b=st.integers(1, 2), t=st.integers(1, 3), h=st.sampled_from([32, 64]), w=st.sampled_from([32, 96]))
def test_pyramid_shapes(b, t, h, w):
    torch.manual_seed(0)
    bb = Backbone(BackboneConfig(channels=(8, 12, 16), stem_channels=(4, 6)))
    pyr = extract_pyramid(torch.rand(b, t, 3, h, w), bb)
    for tap, c, s in zip(pyr, (8, 12, 16), (8, 16, 32)):
        assert tap.shape == (b, t, c, h // s, w // s)


def test_224_input_gives_28_14_7_grids(backbone):
    pyr = backbone(torch.rand(1, 1, 3, 224, 224))
    assert [tuple(p.shape[-2:]) for p in pyr] == [(28, 28), (14, 14), (7, 7)]


@pytest.mark.parametrize("shape", [(1, 2, 3, 33, 32), (1, 2, 3, 32, 48), (1, 2, 4, 32, 32), (2, 3, 32, 32)])
def test_bad_shapes(backbone, shape):
    with pytest.raises(DimensionError):
        backbone(torch.rand(*shape))


def test_non_finite_input(backbone):
    x = torch.rand(1, 1, 3, 32, 32)
    x[0, 0, 0, 0, 0] = float("nan")
    with pytest.raises(NonFiniteError):
        backbone(x)


def test_frames_are_independent(backbone):
    x = torch.rand(1, 3, 3, 32, 32)
    full = backbone(x)
    single = backbone(x[:, 1:2])
    for a, b in zip(full, single):
        torch.testing.assert_close(a[:, 1:2], b, rtol=0, atol=1e-6)


@pytest.mark.parametrize("k", range(6))
def test_freeze_counts_follow_conv_formula(backbone, k):
    widths = [3, 4, 6, 8, 12, 16]
    per_stage = [conv_params(a, b) for a, b in zip(widths[:-1], widths[1:])]
    report = apply_freeze_policy(backbone, k)
    assert report.trainable_params == sum(per_stage[5 - k:])
    assert report.frozen_params == sum(per_stage[:5 - k])
    assert report.total_params == sum(p.numel() for p in backbone.parameters())
    assert report.trainable_stages == list(range(5 - k, 5))
    for i, stage in enumerate(backbone.stages):
        assert all(p.requires_grad == (i >= 5 - k) for p in stage.parameters())


def test_freeze_rejects_out_of_range(backbone):
    with pytest.raises(ConfigError):
        apply_freeze_policy(backbone, 6)


def test_adapter_seam(tmp_path, monkeypatch):
    (tmp_path / "my_adapter.py").write_text(
        "import torch.nn as nn\n"
        "class Net(nn.Module):\n"
        "    def __init__(self):\n"
        "        super().__init__()\n"
        "        self.stages = nn.ModuleList([nn.Conv2d(3, 5, 8, stride=8), nn.Conv2d(5, 5, 2, stride=2),"
        " nn.Conv2d(5, 5, 2, stride=2)])\n"
        "    def forward(self, x):\n"
        "        a = self.stages[0](x); b = self.stages[1](a); return a, b, self.stages[2](b)\n"
        "def build(cfg):\n"
        "    return Net()\n"
    )
    monkeypatch.syspath_prepend(str(tmp_path))
    cfg = BackboneConfig(kind="external-adapter", adapter="my_adapter:build", channels=(5, 5, 5), trainable_suffix=1)
    bb = Backbone(cfg)
    assert [p.shape[2] for p in bb(torch.rand(1, 1, 3, 64, 64))] == [5, 5, 5]
    report = apply_freeze_policy(bb)
    assert report.trainable_stages == [2]


def test_bad_adapter():
    with pytest.raises(ConfigError):
        Backbone(BackboneConfig(kind="external-adapter", adapter="no_such_module_xyz:f"))
