import pytest

from extrapnet.config import (ConfigError, ExperimentConfig, dumps, get_profile, load_config, loads, profiles,
                              save_config)


def test_paper_hyperparameters():
    p, m, c = get_profile("prefix"), get_profile("maze"), get_profile("chess")
    assert (p.optimizer, p.lr, p.weight_decay, p.clip) == ("adam", 0.001, 2e-4, 1.0)
    assert (p.warmup_epochs, p.lr_milestones, p.lr_decay) == (10, (100, 200, 300), 0.5)
    assert (p.batch_size, p.epochs, p.normalize_input) == (150, 500, True)
    assert (p.net.width, p.net.iterations, p.net.effective_depth) == (120, 10, 44)
    assert (p.data.train_size, p.data.test_sizes, p.data.train_count) == (32, (40, 44), 10_000)

    assert (m.optimizer, m.lr, m.weight_decay, m.momentum) == ("sgd_momentum", 0.001, 2e-4, 0.9)
    assert (m.warmup_epochs, m.lr_milestones, m.lr_decay) == (5, (175,), 0.1)
    assert (m.batch_size, m.epochs) == (50, 200)
    assert (m.data.train_size, m.data.test_sizes, m.data.train_count, m.data.canvas) == (9, (13,), 50_000, 32)

    assert (c.optimizer, c.lr, c.weight_decay, c.momentum) == ("sgd_momentum", 0.1, 2e-4, 0.9)
    assert (c.warmup_epochs, c.lr_milestones, c.lr_decay) == (3, (100, 110), 0.1)
    assert (c.batch_size, c.epochs, c.data.rating_split) == (300, 140, 1385)
    assert c.net.effective_depth == 84 and c.net.width == 512


def test_desk_profiles():
    ps = get_profile("prefix-small")
    assert (ps.net.width, ps.net.iterations, ps.data.train_size) == (32, 6, 16)
    ms = get_profile("maze-small")
    assert (ms.net.width, ms.net.iterations) == (32, 6)
    assert 5 <= ms.data.train_size <= 9
    assert get_profile("chess-smoke").net.width == 64


def test_unknown_profile():
    with pytest.raises(ConfigError):
        get_profile("nope")


@pytest.mark.parametrize("name", sorted(profiles()))
def test_text_round_trip(name, tmp_path):
    cfg = get_profile(name)
    save_config(cfg, tmp_path / "c.txt")
    assert load_config(tmp_path / "c.txt") == cfg
    assert dumps(cfg).splitlines()[0] == "format_version = 1"


def test_partial_file_uses_profile():
    cfg = loads("profile = prefix-small\nnet.width = 48  # wider\nepochs = 3\n")
    assert cfg.net.width == 48 and cfg.epochs == 3 and cfg.net.iterations == 6


def test_overrides():
    cfg = get_profile("maze-small").with_overrides(["net.width=8", "lr_milestones=[5, 7]", "optimizer=sgd_momentum"])
    assert cfg.net.width == 8 and cfg.lr_milestones == (5, 7) and cfg.optimizer == "sgd_momentum"


@pytest.mark.parametrize("bad", ["nosuchkey=1", "net.nosuch=2", "optimizer=rmsprop", "widthonly"])
def test_bad_overrides(bad):
    with pytest.raises(ConfigError):
        get_profile("prefix").with_overrides([bad])


def test_bad_text():
    with pytest.raises(ConfigError):
        loads("format_version = 2\ntask = prefix\n")
    with pytest.raises(ConfigError):
        loads("epochs = 3\n")
    with pytest.raises(ConfigError):
        loads("task = prefix\nthis line has no equals\n")


def test_config_hash_sensitivity():
    a = get_profile("prefix")
    assert a.config_hash() == get_profile("prefix").config_hash()
    assert a.config_hash() != a.with_overrides(["seed=1"]).config_hash()
    assert ExperimentConfig.from_dict(a.to_dict()) == a


def test_task_mismatch_rejected():
    with pytest.raises(ConfigError):
        get_profile("prefix").with_overrides(["task=maze"])
