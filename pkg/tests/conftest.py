import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scpm.data import SynthSpec, generate_synthetic  # noqa: E402
from scpm.pipeline import data_from_synthetic, pretrain  # noqa: E402
from scpm.training import TrainConfig  # noqa: E402

TINY_MODEL = dict(emb_dim=8, hidden=16, style_dim=4, attn_dim=8, filters=16, lm_hidden=32,
                  context_output=True)


def tiny_config(**kw) -> TrainConfig:
    base = dict(epochs=3, lm_epochs=3, clf_epochs=3, batch_size=32, lr=1e-2, seed=3,
                model=dict(TINY_MODEL))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_synth():
    return generate_synthetic(SynthSpec(sentences_per_style=400, seed=99))


@pytest.fixture(scope="session")
def tiny_data(tiny_synth):
    return data_from_synthetic(tiny_synth, tiny_config())


@pytest.fixture(scope="session")
def pretrained(tiny_data):
    """Tiny model after the LM and classifier phases."""
    return pretrain(tiny_data, tiny_config())


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, (ok, detail) in sorted(mod.RESULTS.items()):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
