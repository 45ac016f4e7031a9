import numpy as np
import pytest

from lupindp.checkpoint import load_checkpoint, save_checkpoint
from lupindp.config import EXAMPLE, ExperimentConfig, load_config, parse_config
from lupindp.evaluation import EvalProtocol
from lupindp.training import TrainConfig
from lupindp.errors import ConfigError, ContractError, ParseError
from lupindp.model import ModelConfig, init_model

CFG = ModelConfig(max_step=0.0378787878787878, time_scale=15.0)


def test_checkpoint_round_trip_is_exact(tmp_path):
    model = init_model(CFG, 4)
    save_checkpoint(tmp_path / "c.txt", model, "lupi", 4, 50)
    ck = load_checkpoint(tmp_path / "c.txt")
    assert ck.config == CFG and ck.mode == "lupi" and ck.seed == 4 and ck.epochs == 50
    other = ck.build_model()
    for (n1, a), (n2, b) in zip(model.named_parameters(), other.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(a.data, b.data)
    save_checkpoint(tmp_path / "d.txt", other, "lupi", 4, 50)
    assert (tmp_path / "c.txt").read_bytes() == (tmp_path / "d.txt").read_bytes()


def test_truncated_checkpoint_rejected(tmp_path):
    save_checkpoint(tmp_path / "c.txt", init_model(CFG, 0), "nopi", 0, 1)
    lines = (tmp_path / "c.txt").read_text().splitlines()
    (tmp_path / "t.txt").write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ParseError, match="truncated"):
        load_checkpoint(tmp_path / "t.txt")
    (tmp_path / "v.txt").write_text("\n".join(lines[:6] + ["1 2 3"] + lines[7:]) + "\n")
    with pytest.raises(ParseError) as info:
        load_checkpoint(tmp_path / "v.txt")
    assert info.value.line == 7
    (tmp_path / "m.txt").write_text("hello\n")
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path / "m.txt")


def test_checkpoint_with_missing_parameter_rejected(tmp_path):
    save_checkpoint(tmp_path / "c.txt", init_model(CFG, 0), "nopi", 0, 1)
    lines = (tmp_path / "c.txt").read_text().splitlines()
    (tmp_path / "x.txt").write_text("\n".join(lines[:5] + lines[7:]) + "\n")
    with pytest.raises(ContractError):
        load_checkpoint(tmp_path / "x.txt")


def test_example_config_parses():
    cfg = parse_config(EXAMPLE)
    assert cfg.task == "lv" and cfg.mode == "lupi" and cfg.n_train == 500
    assert cfg.model.max_step is None and cfg.model.time_scale is None


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(
        task="damping", mode="nopi", seed=3, n_train=20, n_test=10, model=CFG,
        train=TrainConfig(epochs=7, lr=0.003, batch_size=2, seed=3), eval=EvalProtocol(starred=True, seed=3),
    )
    (tmp_path / "c.ini").write_text(cfg.to_ini())
    back = load_config(tmp_path / "c.ini")
    assert back == cfg
    assert back.to_ini() == cfg.to_ini()


@pytest.mark.parametrize(
    "text,exc",
    [
        ("[run]\nmode = teacher\n", ConfigError),
        ("[model]\nhidden = many\n", ConfigError),
        ("[nonsense]\na = 1\n", ConfigError),
        ("no section header\n", ParseError),
        ("[train]\nbatch_size = 0\n", ConfigError),
    ],
)
def test_bad_configs(text, exc):
    with pytest.raises(exc):
        parse_config(text)
