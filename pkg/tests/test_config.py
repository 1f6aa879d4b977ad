import pytest

from auxrecon.config import DEFAULT_SCHEDULE, ConfigError, RunConfig, parse_config


def test_defaults_round_trip_through_text():
    cfg = RunConfig(seed=3, lr=0.01, eval_schedule=((0, 0), (100, 50)), grad_term=False)
    assert parse_config(cfg.dumps()) == cfg


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\nsteps = 12  # trailing\nvariant = replace\n")
    assert cfg.steps == 12 and cfg.variant == "replace"


def test_schedule_syntax():
    cfg = parse_config("eval_schedule = 0:0, 30:0 ,100:100")
    assert cfg.eval_schedule == ((0, 0), (30, 0), (100, 100))
    assert RunConfig().eval_schedule == DEFAULT_SCHEDULE


@pytest.mark.parametrize("text,line", [
    ("steps = 3\nbogus = 1\n", 2),
    ("steps = 3\nsteps = 4\n", 2),
    ("\n\nlr = fast\n", 3),
    ("grad_term = maybe\n", 1),
    ("eval_schedule = 0:0, 120:0\n", 1),
    ("just some words\n", 1),
])
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError, match=f"cfg:{line}:"):
        parse_config(text, "cfg")


@pytest.mark.parametrize("changes", [
    {"dim": 30, "heads": 4}, {"variant": "none"}, {"optimizer": "rmsprop"}, {"rgb_only_prob": 2.0},
    {"alpha": -1.0}, {"frames": 9}, {"lr": 0.0}, {"world": "caves"}, {"eval_depth_subset": "all"},
])
def test_invariants(changes):
    with pytest.raises(ConfigError):
        RunConfig(**changes)


def test_mixed_world_alternates():
    cfg = RunConfig()
    assert {cfg.scene_spec(s).world for s in (0, 1)} == {"planes", "blobs"}
