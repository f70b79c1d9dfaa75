import pytest

from tinyunet.config import ConfigError, RunConfig, load_config, parse_config

FULL = """
[data]
count = 40
master_seed = 3
wind_min = 3.0
wind_max = 7.5

[scene]
width = 16
length = 16
noise_std = 0.02   ; relative
rms_height_coeff = 0.0002

[model]
B = 3
F = 8
seed = 11

[train]
epochs = 4
batch_size = 8
learning_rate = 0.001
optimizer = sgd

[bench]
runs = 40
height = 64
width = 64

[metrics]
absent = zero
"""


def test_defaults():
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.data.count == 80 and cfg.train.learning_rate == 0.0008 and cfg.train.batch_size == 16
    assert (cfg.model_config.B, cfg.model_config.F) == (2, 4)
    assert cfg.absent == "exclude"


def test_full_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(FULL)
    cfg = load_config(path)
    assert cfg.data.count == 40 and cfg.wind_range == (3.0, 7.5)
    assert cfg.scene.width == 16 and cfg.scene.noise_std == 0.02 and cfg.scene.rms_height_coeff == 0.0002
    assert (cfg.model.B, cfg.model.F, cfg.model.seed) == (3, 8, 11)
    assert cfg.train.optimizer == "sgd" and cfg.train.epochs == 4
    assert cfg.bench.runs == 40 and cfg.bench.height == 64
    assert cfg.absent == "zero"


def test_with_seed():
    cfg = parse_config(FULL).with_seed(99)
    assert cfg.data.master_seed == cfg.model.seed == cfg.train.seed == 99
    assert cfg.model.B == 3


@pytest.mark.parametrize("text", [
    "[nope]\nx = 1\n",
    "[model]\nwidth = 3\n",
    "[model]\nB = two\n",
    "[model]\nB = 7\n",
    "[train]\noptimizer = lbfgs\n",
    "[scene]\nseed = 4\n",
    "[metrics]\nabsent = maybe\n",
    "not an ini file",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_example_config_in_docs_parses():
    import tinyunet.config as C

    block = C.__doc__.split("::", 1)[1]
    cfg = parse_config("\n".join(line[4:] for line in block.splitlines()))
    assert cfg == RunConfig()
