"""Flat ``section.key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment.  Every key must be one of
:data:`DEFAULTS`; values are coerced to the default's type.  The
``schedule.<channel>.mu0`` key takes ``uniform`` (zero logits) or
``marginals`` (log of the training set's class frequencies).
"""

import numpy as np

from catbsi.graphs import Family
from catbsi.samplers import SamplerConfig, Scheme
from catbsi.schedule import PrecisionSchedule
from catbsi.training import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "schedule.node.beta_start": 3.0,
    "schedule.node.beta_end": 12.0,
    "schedule.node.beta0": 1.0,
    "schedule.node.mu0": "uniform",
    "schedule.edge.beta_start": 3.0,
    "schedule.edge.beta_end": 12.0,
    "schedule.edge.beta0": 1.0,
    "schedule.edge.mu0": "uniform",
    "model.hidden": 32,
    "model.layers": 3,
    "model.n_freqs": 8,
    "model.freq_min": 1.0,
    "model.freq_max": 1000.0,
    "model.seed": 0,
    "sampler.scheme": "ou",
    "sampler.steps": 100,
    "sampler.gamma": 5.0,
    "sampler.rho": 1.0,
    "training.lr": 0.02,
    "training.steps": 8000,
    "training.batch": 32,
    "training.seed": 0,
    "training.clip": 1.0,
    "training.momentum": 0.9,
    "training.node_weight": 1.0,
    "training.edge_weight": 1.0,
    "dataset.family": "AllTreesN",
    "dataset.n": 4,
    "dataset.count": 64,
    "dataset.n_lo": 4,
    "dataset.n_hi": 8,
    "dataset.p_cycle": 0.5,
    "dataset.p_in": 0.7,
    "dataset.p_out": 0.1,
    "dataset.seed": 0,
    "paths.out_dir": ".",
}


def _coerce(key, raw):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


class RunConfig(dict):
    """Validated configuration mapping with typed accessors."""

    @classmethod
    def parse(cls, text, source="<config>"):
        cfg = cls(DEFAULTS)
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
            if key not in DEFAULTS:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            cfg[key] = _coerce(key, value)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.parse(text, str(path))

    def section(self, prefix):
        return {k[len(prefix) + 1:]: v for k, v in self.items() if k.startswith(prefix + ".")}

    def validate(self):
        """Build every component once so precondition errors surface before any work."""
        try:
            Family(self["dataset.family"])
            for ch in ("node", "edge"):
                if self[f"schedule.{ch}.mu0"] not in ("uniform", "marginals"):
                    raise ConfigError(f"schedule.{ch}.mu0 must be 'uniform' or 'marginals'")
                self.schedule(ch, 2)
            self.sampler()
            self.training()
            if self["model.hidden"] < 1 or self["model.layers"] < 0 or self["model.n_freqs"] < 1:
                raise ConfigError("model sizes must be positive")
            if not 0 < self["model.freq_min"] < self["model.freq_max"]:
                raise ConfigError("need 0 < model.freq_min < model.freq_max")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def schedule(self, channel, n_classes, class_probs=None):
        p = self.section(f"schedule.{channel}")
        if p["mu0"] == "marginals" and class_probs is not None:
            return PrecisionSchedule.from_marginals(p["beta_start"], p["beta_end"], class_probs,
                                                    p["beta0"])
        return PrecisionSchedule(p["beta_start"], p["beta_end"], p["beta0"], np.zeros(n_classes))

    def sampler(self):
        p = self.section("sampler")
        return SamplerConfig(Scheme(p["scheme"]), p["steps"], p["gamma"], p["rho"])

    def training(self):
        p = self.section("training")
        return TrainConfig(lr=p["lr"], batch=p["batch"], steps=p["steps"], seed=p["seed"],
                           clip=p["clip"], momentum=p["momentum"],
                           node_weight=p["node_weight"], edge_weight=p["edge_weight"])

    def dataset_params(self):
        return self.section("dataset")

    def dumps(self):
        return "".join(f"{k} = {v}\n" for k, v in self.items())
