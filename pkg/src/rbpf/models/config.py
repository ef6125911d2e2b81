"""Model configuration files.

Models are described by JSON documents tagged ``"schema": "rbpf.model/1"``::

    {"schema": "rbpf.model/1", "kind": "grid",
     "width": 8, "height": 1, "n_colors": 2,
     "sensor_flip": 0.1, "p_slip": 0.2, "p_change": 0.0,
     "neighborhood": "single",            # or "3x3"
     "actions": "EEEEEEEEWWWWWWWW",       # N S E W, X = stay
     "init_location": 0,                  # cell index or list of probabilities
     "true_map": "01001101"}              # one digit per cell, or null

    {"schema": "rbpf.model/1", "kind": "jmls",
     "regime_transition": [[0.9, 0.1], [0.2, 0.8]],
     "init_regime": [0.5, 0.5],
     "init_mean": [0.0], "init_cov": [[1.0]],
     "regimes": [{"A": [[0.9]], "C": [[1.0]], "Q": [[0.05]], "R": [[0.5]]}, ...]}

Packaged scenarios live next to this module and are loaded by name.
"""

import json
from importlib import resources
from pathlib import Path

import numpy as np

from rbpf.errors import ConfigError
from rbpf.kalman import GaussianBelief, RegimeParams
from rbpf.models.grid import GridWorldModel
from rbpf.models.jmls import JmlsModel

MODEL_SCHEMA = "rbpf.model/1"


def scenario_names():
    files = resources.files("rbpf.models").joinpath("scenarios").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".json"))


def load_scenario_dict(name):
    path = resources.files("rbpf.models").joinpath("scenarios", f"{name}.json")
    if not path.is_file():
        raise ConfigError(f"unknown scenario {name!r}; known: {', '.join(scenario_names())}")
    return json.loads(path.read_text())


def load_scenario(name, **overrides):
    return model_from_dict({**load_scenario_dict(name), **overrides})


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from exc
    return model_from_dict(doc)


def _parse_map(text):
    if text is None:
        return None
    if isinstance(text, str):
        if not text.isdigit():
            raise ConfigError("true_map must be a string of colour digits")
        return tuple(int(c) for c in text)
    return tuple(int(c) for c in text)


def model_from_dict(doc):
    doc = dict(doc)
    schema = doc.pop("schema", MODEL_SCHEMA)
    if schema != MODEL_SCHEMA:
        raise ConfigError(f"unsupported model schema {schema!r}")
    kind = doc.pop("kind", None)
    doc.pop("description", None)
    try:
        if kind == "grid":
            init = doc.pop("init_location", 0)
            init = (init,) if isinstance(init, int) else tuple(init)
            return GridWorldModel(
                init_location=init, true_map=_parse_map(doc.pop("true_map", None)), **doc
            )
        if kind == "jmls":
            regimes = tuple(
                RegimeParams(r["A"], r["C"], r["Q"], r["R"]) for r in doc.pop("regimes")
            )
            belief = GaussianBelief(doc.pop("init_mean"), doc.pop("init_cov"))
            return JmlsModel(
                regimes=regimes,
                regime_transition=np.asarray(doc.pop("regime_transition")),
                init_regime=np.asarray(doc.pop("init_regime")),
                init_belief=belief,
                **doc,
            )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid {kind} model: {exc}") from exc
    raise ConfigError(f"unknown model kind {kind!r}")


def model_to_dict(model):
    if isinstance(model, GridWorldModel):
        init = np.asarray(model.init_location)
        point = np.flatnonzero(init == 1.0)
        return {
            "schema": MODEL_SCHEMA,
            "kind": "grid",
            "width": model.width,
            "height": model.height,
            "n_colors": model.n_colors,
            "sensor_flip": model.sensor_flip,
            "p_slip": model.p_slip,
            "p_change": model.p_change,
            "neighborhood": model.neighborhood,
            "actions": model.actions,
            "init_location": int(point[0]) if point.size == 1 else [float(v) for v in init],
            "true_map": None if model.true_map is None else "".join(map(str, model.true_map)),
        }
    if isinstance(model, JmlsModel):
        return {
            "schema": MODEL_SCHEMA,
            "kind": "jmls",
            "regime_transition": model.regime_transition.tolist(),
            "init_regime": model.init_regime.tolist(),
            "init_mean": model.init_belief.mean.tolist(),
            "init_cov": model.init_belief.cov.tolist(),
            "regimes": [
                {k: getattr(r, k).tolist() for k in "ACQR"} for r in model.regimes
            ],
        }
    raise TypeError(f"cannot serialise {type(model).__name__}")
