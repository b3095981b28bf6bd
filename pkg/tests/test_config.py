import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorenzrt.config import RunConfig
from lorenzrt.errors import ConfigError


def test_default_roundtrip():
    cfg = RunConfig()
    text = cfg.to_text()
    assert RunConfig.from_text(text) == cfg
    assert RunConfig.from_text(text).to_text() == text
    assert "returns.t_star = auto" in text


@settings(max_examples=60, deadline=None)
@given(lo=st.floats(0.4, 1.0), width=st.floats(0.0, 0.5), seed=st.integers(0, 2 ** 40),
       bins=st.integers(2, 2 ** 16), phi=st.sampled_from(["x", "x2", "cos", "2*x", "x+0.1"]),
       bar=st.one_of(st.none(), st.floats(0.003, 0.009)))
def test_roundtrip_is_exact(lo, width, seed, bins, phi, bar):
    hi = min(lo + width, 1.0)
    cfg = (RunConfig().replace("family", lambda_lo=lo, lambda_hi=hi)
           .replace("run", seed=seed).replace("measure", bins=bins, phi=phi)
           .replace("returns", bar_delta=bar))
    back = RunConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back.to_text() == cfg.to_text()


@pytest.mark.parametrize("text", [
    "family.lambda_lo = 0.9\nfamily.lambda_hi = 0.5\n",
    "run.seed = abc\n",
    "nosection = 1\n",
    "run.unknown = 1\n",
    "measure.phi = nonsense\n",
    "returns.bar_delta = 0.04\n",
    "run.ensemble = 0\n",
    "partition.r_star = 5\nreturns.t_star = 7\n",
    "just words\n",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_partial_config_uses_defaults():
    cfg = RunConfig.from_text("# calibration\nfamily.lambda_lo = 1.0\nfamily.lambda_hi = 1.0\n")
    assert cfg.family.lambda_lo == 1.0 and cfg.run == RunConfig().run
    assert cfg.bar_delta() == pytest.approx(cfg.partition_config().delta / 10)
