"""
Quick checks that the toolkit is wired together.

This tests:
1. Module imports
2. Settings from the environment
3. Every CLI command is registered
4. A tiny decoder runs forward and backward
"""
import numpy as np
import pytest

REQUIRED_COMMANDS = [
    "extract",
    "train",
    "train-encoder",
    "invert",
    "evaluate",
    "perturb",
    "interpolate",
    "fit-distribution",
    "sample",
    "neurons",
]


def test_module_imports():
    import engine
    import schemas
    import services
    import storage

    for package in (engine, schemas, services, storage):
        missing = [name for name in package.__all__ if not hasattr(package, name)]
        assert not missing, f"{package.__name__} does not export {missing}"


def test_settings_from_environment(monkeypatch):
    from schemas.settings import InvertKitSettings, get_settings

    monkeypatch.setenv("INVERTKIT_THREADS", "2")
    monkeypatch.setenv("INVERTKIT_LOG_LEVEL", "DEBUG")
    settings = InvertKitSettings()
    assert settings.threads == 2
    assert settings.log_level == "DEBUG"
    assert get_settings() is get_settings()


def test_all_commands_registered():
    from main import build_parser

    parser = build_parser()
    commands = parser._subparsers._group_actions[0].choices
    missing = [name for name in REQUIRED_COMMANDS if name not in commands]
    assert not missing, f"missing commands: {missing}"


def test_unknown_command_exits():
    from main import main

    with pytest.raises(SystemExit) as info:
        main(["reticulate"])
    assert info.value.code == 2


def test_tiny_decoder_round_trip():
    from services import build_hog_net, build_network

    network = build_network(build_hog_net(8, width=0.0625), np.random.default_rng(0))
    out = network.forward(np.zeros((1, 31, 8, 8), np.float32))
    assert out.shape == (1, 3, 64, 64)
    grad = network.backward(np.ones(out.shape, np.float32))
    assert grad.shape == (1, 31, 8, 8)
