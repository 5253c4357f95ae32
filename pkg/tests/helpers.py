"""Shared state and helpers for the test suite."""

import os
import sys

import numpy as np

import chainforge.transfer as transfer_mod
from chainforge.core import RandomSource
from chainforge.synth import ToyConfig, gen_toy

TRACE_LOG: list[dict] = []
ACCEPTANCE_LINES: list[str] = []
ORIGINAL_HILL_CLIMB = transfer_mod.hill_climb_map


def checked_hill_climb(*args, **kwargs):
    """hill_climb_map plus assertions on its traces."""
    result = ORIGINAL_HILL_CLIMB(*args, **kwargs)
    best = result.best_so_far
    acc = result.accepted
    cfg = args[2] if len(args) > 2 else kwargs["cfg"]
    entry = {
        "non_decreasing": all(b >= a for a, b in zip(best, best[1:])),
        "accepted_increasing": all(b > a for a, b in zip(acc, acc[1:])),
        "length_ok": len(best) == cfg.budget + 1,
        "final": best[-1] == result.score,
    }
    TRACE_LOG.append(entry)
    assert entry["non_decreasing"], f"best-so-far trace decreased: {best}"
    assert entry["accepted_increasing"], f"accepted trace not strictly increasing: {acc}"
    assert entry["length_ok"] and entry["final"]
    return result


class OpenGuard:
    """Audit hook that refuses to open armed paths and can log all opens.

    Audit hooks cannot be removed, so a single instance is installed and
    its state toggled by tests.
    """

    def __init__(self):
        self.forbidden: set[str] = set()
        self.violations: list[str] = []
        self.opened: list[str] = []
        self.recording = False

    def __call__(self, event, args):
        if event != "open" or not (self.forbidden or self.recording):
            return
        path = args[0]
        if not isinstance(path, (str, bytes, os.PathLike)):
            return
        real = os.path.realpath(os.fsdecode(path))
        if self.recording:
            self.opened.append(real)
        if real in self.forbidden:
            self.violations.append(real)
            raise PermissionError(f"source data file opened after preparation: {real}")

    def arm(self, paths):
        self.forbidden = {os.path.realpath(str(p)) for p in paths}
        self.violations = []

    def disarm(self):
        self.forbidden = set()
        self.recording = False


OPEN_GUARD = OpenGuard()
sys.addaudithook(OPEN_GUARD)


class SpySource:
    """Wraps a model and logs every attribute a consumer reaches for."""

    ALLOWED = {"input_dim", "output_dim", "predict"}

    def __init__(self, model):
        object.__setattr__(self, "_model", model)
        object.__setattr__(self, "accessed", [])
        object.__setattr__(self, "predict_calls", 0)

    def __getattribute__(self, name):
        if name in ("_model", "accessed", "predict_calls", "ALLOWED", "illegal_accesses",
                    "__class__", "__dict__"):
            return object.__getattribute__(self, name)
        object.__getattribute__(self, "accessed").append(name)
        if name == "predict":
            object.__setattr__(self, "predict_calls", object.__getattribute__(self, "predict_calls") + 1)
        return getattr(object.__getattribute__(self, "_model"), name)

    def illegal_accesses(self):
        return sorted(set(self.accessed) - self.ALLOWED)


def toy_pair(n: int, seed: int = 0, noise: float = 0.0):
    """XOR and AND datasets drawn on the same corners."""
    xor = gen_toy(ToyConfig("xor", n, noise, RandomSource(seed, "toy")))
    andd = gen_toy(ToyConfig("and", n, noise, RandomSource(seed, "toy")))
    assert np.array_equal(xor.features, andd.features)
    return xor, andd
