import json
import math
from pathlib import Path

import pytest

from config import RunConfig, as_complex, as_pair, load_config
from errors import ConfigError

CONFIG_DIR = Path(__file__).parent / 'configs'


def test_defaults():
    cfg = load_config()
    assert (cfg.family, cfg.level, cfg.refinement, cfg.mode) == ('koch', 2, 1, 'fast')
    assert cfg.beta == pytest.approx(math.pi / 6)
    assert math.hypot(*cfg.direction) == pytest.approx(1.0)
    assert cfg.lambda_plus_complex == 7.5 + 7.5j
    assert cfg.study.levels() == [1, 2, 3]


def test_direction_is_normalised():
    cfg = load_config(direction=(0.0, 0.0, -2.0))
    assert cfg.direction == pytest.approx((0.0, 0.0, -1.0))


@pytest.mark.parametrize('overrides', [
    {'beta': 2.0},
    {'beta': 0.0},
    {'lambda_plus': (1.0, -1.0)},
    {'lambda_plus': (1.0, 0.0), 'lambda_minus': (-1.0, 0.0)},
    {'direction': (0.0, 0.0, 0.0)},
    {'k': -1.0},
    {'study': {'j_max': 3, 'j_ref': 3}},
    {'study': {'k_list': []}},
    {'grid': {'faces': ['+x', '+x']}},
    {'mode': 'sparse'},
])
def test_invalid_values_raise_config_error(overrides):
    with pytest.raises(ConfigError) as excinfo:
        load_config(**overrides)
    assert excinfo.value.exit_code == 2


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'levle': 3}))
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'absent.json')


def test_json_round_trip(tmp_path):
    cfg = load_config(family='square', level=1, k=12.0, lambda_minus=(3.0, 0.5), threads=4)
    path = tmp_path / 'run.json'
    path.write_text(cfg.model_dump_json())
    assert load_config(path) == cfg


def test_overrides_apply_over_file(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'level': 3, 'mode': 'dense'}))
    cfg = load_config(path, mode='fast', output_dir=str(tmp_path))
    assert (cfg.level, cfg.mode) == (3, 'fast')
    assert cfg.output_path == tmp_path


@pytest.mark.parametrize('path', sorted(CONFIG_DIR.glob('*.json')), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert isinstance(cfg, RunConfig)
    assert cfg.study.j_ref > cfg.study.j_max


def test_complex_pairs():
    assert as_complex((2.0, -1.0)) == 2 - 1j
    assert as_pair(3 + 4j) == (3.0, 4.0)
