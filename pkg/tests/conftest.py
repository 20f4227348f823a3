import pytest
from hypothesis import HealthCheck, settings

from sinklab.harness.config import ExperimentConfig
from sinklab.toymodel import ModelConfig, build_model

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL = dict(n_layers=4, n_heads=2, d_model=16, n_img=16, n_txt=8, n_steps=10, init_seed=3)


@pytest.fixture(scope="session")
def small_config():
    return ModelConfig(**SMALL)


@pytest.fixture(scope="session")
def small_model(small_config):
    return build_model(small_config)


@pytest.fixture
def small_experiment(tmp_path):
    def make(count=4, **kw):
        d = {
            "name": "test",
            "model": dict(SMALL),
            "prompts": {"count": count, "seed": 1},
            "base_seed": 50,
            "conditions": [{"name": "baseline", "pathway": "none"},
                           {"name": "sink", "pathway": "score", "eta": 0.0, "k": 1}],
            "stats": {"n_resamples": 200},
            "families": {"ksweep_grid": [1, 3], "specificity_grid": [1, 3], "attribution_k": 3},
            "output": {"dir": str(tmp_path / "runs")},
        }
        d.update(kw)
        return ExperimentConfig.from_dict(d)
    return make



def pytest_terminal_summary(terminalreporter):
    import sys
    lines = [line for name, mod in list(sys.modules.items())
             if name.endswith("test_acceptance") for line in getattr(mod, "LINES", [])]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(lines), key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
