import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from affmixer.config import BackboneConfig, ClipSpec, MixerConfig, RunConfig  # noqa: E402
from affmixer.data import SyntheticSpec, generate_synthetic, load_manifest  # noqa: E402

torch.set_num_threads(1)


def tiny_config(**kw) -> RunConfig:
    base = dict(
        backbone=BackboneConfig(channels=(8, 8, 8), stem_channels=(4, 8), trainable_suffix=5),
        mixer=MixerConfig(embed_dim=(8, 8, 8), depth=(1, 1, 1)),
        tasks=("au", "va", "ah", "emi"),
        clip=ClipSpec(length=8, stride=4),
        batch_size=2,
        image_size=32,
        steps=6,
        val_every=3,
        log_every=100,
    )
    base.update(kw)
    return RunConfig(**base).validate()


@pytest.fixture
def tiny_cfg(tmp_path):
    return tiny_config(out_dir=str(tmp_path / "run"))


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_synth")
    generate_synthetic(SyntheticSpec(seed=3, length=20, length_jitter=4, image_size=32, n_train=4, n_val=3,
                                     n_test=2, invalid_rate=0.1), root)
    return load_manifest(root / "manifest.jsonl")


_acceptance_lines = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        props = dict(report.user_properties)
        if "criterion" in props:
            status = "PASS" if report.passed else "FAIL"
            _acceptance_lines.append(f"[{status}] criterion {props['criterion']}: {props.get('detail', '')}")


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
