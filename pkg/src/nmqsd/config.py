"""Strict JSON run configuration.

The schema is fixed and unknown keys are rejected with their full dotted
path, so a typo fails loudly instead of silently running defaults.  The
parsed config keeps the normalized dict form (round-trips losslessly) and
knows how to build the model, correlation function, grid, and initial
state it describes.

Complex entries in explicit vectors/matrices are written as [re, im] pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .correlations import DiscreteModes, OrnsteinUhlenbeck, TimeGrid
from .errors import ConfigError
from .models import (
    ModelSpec,
    build_angular_model,
    build_ncavity_model,
    build_nqubit_model,
)
from .observables import werner_state

_TOP_KEYS = {"model", "bath", "sim", "initial", "output", "oracle"}
_MODEL_KEYS = {"family", "params"}
_SIM_KEYS = {"dt", "T", "n_traj", "seed", "mode", "K_trunc"}
_BATH_KEYS = {"kind", "gamma", "g", "omega"}
_INITIAL_KEYS = {"state", "vector", "matrix", "werner"}
_OUTPUT_KEYS = {"directory", "observables", "dumps"}
_ORACLE_KEYS = {"kind", "tolerance", "n_ph_max", "substeps"}
_PARAM_KEYS = {
    "nqubit": {"n", "omega"},
    "angular": {"l", "omega"},
    "ncavity": {"n", "omegas", "lambdas", "n_max", "topology"},
}


def _reject_unknown(section: dict, allowed: set, path: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected an object")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")


def _require(section: dict, key: str, path: str):
    if key not in section:
        raise ConfigError(f"{path}.{key}: missing required key")
    return section[key]


def _number(value, path: str, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number")
    if integer and int(value) != value:
        raise ConfigError(f"{path}: expected an integer")
    if positive and value <= 0:
        raise ConfigError(f"{path}: must be positive")
    return int(value) if integer else float(value)


def _complex_array(value, path: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected nested [re, im] number pairs")
    if arr.ndim < 1 or arr.shape[-1] != 2:
        raise ConfigError(f"{path}: innermost entries must be [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


@dataclass
class RunConfig:
    """Validated run description; `raw` is the normalized dict form."""

    raw: dict

    @property
    def model(self) -> dict:
        return self.raw["model"]

    @property
    def sim(self) -> dict:
        return self.raw["sim"]

    @property
    def bath(self) -> dict:
        return self.raw["bath"]

    @property
    def initial(self) -> dict:
        return self.raw["initial"]

    @property
    def output(self) -> dict:
        return self.raw.get("output", {})

    @property
    def oracle(self) -> dict:
        return self.raw.get("oracle", {})

    def build_model(self) -> ModelSpec:
        family = self.model["family"]
        p = self.model["params"]
        if family == "nqubit":
            return build_nqubit_model(p["n"], p["omega"])
        if family == "angular":
            return build_angular_model(p["l"], p["omega"])
        return build_ncavity_model(
            p["n"],
            p["omegas"],
            p["lambdas"],
            n_max=p.get("n_max", 2),
            topology=p.get("topology", "ring"),
        )

    def build_corr(self):
        bath = self.bath
        if bath["kind"] == "ou":
            return OrnsteinUhlenbeck(bath["gamma"])
        return DiscreteModes(tuple(bath["g"]), tuple(bath["omega"]))

    def build_grid(self) -> TimeGrid:
        dt = self.sim["dt"]
        n_steps = int(round(self.sim["T"] / dt))
        if abs(n_steps * dt - self.sim["T"]) > 1e-9 * max(self.sim["T"], 1.0):
            raise ConfigError("sim.T: must be an integer multiple of sim.dt")
        return TimeGrid(dt, n_steps)

    def initial_state(self, model: ModelSpec):
        """Returns (psi0, rho0); exactly one is non-None."""
        return initial_to_state(self.initial, model)


def initial_to_state(init: dict, model: ModelSpec):
    """Resolve an initial-state object to (psi0, rho0).

    Named states: 'uniform' is the equal superposition of all levels;
    'excited' and 'ground' are the extremes of the excitation ladder (for
    qubits the all-up/all-down product states, for angular momentum the
    top/bottom level; cavities have no canonical single excited state, use
    an explicit vector).
    """
    _reject_unknown(init, _INITIAL_KEYS, "initial")
    given = [k for k in _INITIAL_KEYS if k in init]
    if len(given) != 1:
        raise ConfigError(
            "initial: provide exactly one of state/vector/matrix/werner"
        )
    dim = model.dim
    if "state" in init:
        name = init["state"]
        if name == "uniform":
            return np.full(dim, 1.0 / np.sqrt(dim), dtype=complex), None
        if name in ("excited", "ground"):
            if model.family == "nqubit":
                idx = dim - 1 if name == "excited" else 0
            elif model.family == "angular":
                idx = 0 if name == "excited" else dim - 1
            elif name == "ground":
                idx = 0
            else:
                raise ConfigError(
                    "initial.state: 'excited' undefined for cavities, "
                    "use an explicit vector"
                )
            vec = np.zeros(dim, dtype=complex)
            vec[idx] = 1.0
            return vec, None
        raise ConfigError(f"initial.state: unknown named state {name!r}")
    if "vector" in init:
        vec = _complex_array(init["vector"], "initial.vector")
        if vec.shape != (dim,):
            raise ConfigError(f"initial.vector: expected length {dim}")
        return vec, None
    if "matrix" in init:
        mat = _complex_array(init["matrix"], "initial.matrix")
        if mat.shape != (dim, dim):
            raise ConfigError(f"initial.matrix: expected {dim}x{dim}")
        return None, mat
    if dim != 8:
        raise ConfigError("initial.werner: needs a three-qubit model")
    f = init["werner"]
    if not isinstance(f, (int, float)) or isinstance(f, bool) or not 0 <= f <= 1:
        raise ConfigError("initial.werner: F must lie in [0, 1]")
    return None, werner_state(float(f))


def validate_config(data: dict) -> RunConfig:
    _reject_unknown(data, _TOP_KEYS, "config")
    model = _require(data, "model", "config")
    _reject_unknown(model, _MODEL_KEYS, "model")
    family = _require(model, "family", "model")
    if family not in _PARAM_KEYS:
        raise ConfigError(f"model.family: unknown family {family!r}")
    params = _require(model, "params", "model")
    _reject_unknown(params, _PARAM_KEYS[family], "model.params")
    if family == "nqubit":
        _number(_require(params, "n", "model.params"), "model.params.n",
                positive=True, integer=True)
        _number(_require(params, "omega", "model.params"), "model.params.omega")
    elif family == "angular":
        _number(_require(params, "l", "model.params"), "model.params.l",
                positive=True)
        _number(_require(params, "omega", "model.params"), "model.params.omega")
    else:
        _number(_require(params, "n", "model.params"), "model.params.n",
                positive=True, integer=True)
        for key in ("omegas", "lambdas"):
            seq = _require(params, key, "model.params")
            if not isinstance(seq, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in seq
            ):
                raise ConfigError(f"model.params.{key}: expected a number list")
        if "n_max" in params:
            _number(params["n_max"], "model.params.n_max", positive=True,
                    integer=True)
        if params.get("topology", "ring") not in ("ring", "chain"):
            raise ConfigError("model.params.topology: expected 'ring' or 'chain'")

    bath = _require(data, "bath", "config")
    _reject_unknown(bath, _BATH_KEYS, "bath")
    kind = _require(bath, "kind", "bath")
    if kind == "ou":
        _number(_require(bath, "gamma", "bath"), "bath.gamma", positive=True)
        if "g" in bath or "omega" in bath:
            raise ConfigError("bath: 'g'/'omega' only apply to discrete_modes")
    elif kind == "discrete_modes":
        for key in ("g", "omega"):
            seq = _require(bath, key, "bath")
            if not isinstance(seq, list) or not seq or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in seq
            ):
                raise ConfigError(f"bath.{key}: expected a nonempty number list")
        if len(bath["g"]) != len(bath["omega"]):
            raise ConfigError("bath: 'g' and 'omega' must have equal length")
        if "gamma" in bath:
            raise ConfigError("bath.gamma: only applies to kind 'ou'")
    else:
        raise ConfigError(f"bath.kind: unknown kind {kind!r}")

    sim = _require(data, "sim", "config")
    _reject_unknown(sim, _SIM_KEYS, "sim")
    _number(_require(sim, "dt", "sim"), "sim.dt", positive=True)
    _number(_require(sim, "T", "sim"), "sim.T", positive=True)
    _number(_require(sim, "n_traj", "sim"), "sim.n_traj", positive=True,
            integer=True)
    _number(_require(sim, "seed", "sim"), "sim.seed", integer=True)
    if sim.get("mode", "nonlinear") not in ("linear", "nonlinear"):
        raise ConfigError("sim.mode: expected 'linear' or 'nonlinear'")
    if "K_trunc" in sim and sim["K_trunc"] is not None:
        k = _number(sim["K_trunc"], "sim.K_trunc", integer=True)
        if k < 0:
            raise ConfigError("sim.K_trunc: must be >= 0")

    initial = _require(data, "initial", "config")
    _reject_unknown(initial, _INITIAL_KEYS, "initial")
    given = [k for k in _INITIAL_KEYS if k in initial]
    if len(given) != 1:
        raise ConfigError(
            "initial: provide exactly one of state/vector/matrix/werner"
        )
    if "werner" in initial:
        f = _number(initial["werner"], "initial.werner")
        if not 0.0 <= f <= 1.0:
            raise ConfigError("initial.werner: F must lie in [0, 1]")

    if "output" in data:
        out = data["output"]
        _reject_unknown(out, _OUTPUT_KEYS, "output")
        if "observables" in out:
            if not isinstance(out["observables"], list):
                raise ConfigError("output.observables: expected a list")
            for name in out["observables"]:
                parse_observable_name(name)
        if "dumps" in out:
            if not isinstance(out["dumps"], list):
                raise ConfigError("output.dumps: expected a list")
            for name in out["dumps"]:
                if name not in ("density", "stderr", "noise", "kernels", "basis"):
                    raise ConfigError(f"output.dumps: unknown dump {name!r}")

    if "oracle" in data:
        oracle = data["oracle"]
        _reject_unknown(oracle, _ORACLE_KEYS, "oracle")
        _number(_require(oracle, "tolerance", "oracle"), "oracle.tolerance",
                positive=True)
        if "kind" in oracle and oracle["kind"] not in (
            "pseudomode", "discrete_modes", "lindblad",
        ):
            raise ConfigError(f"oracle.kind: unknown kind {oracle['kind']!r}")
        for key in ("n_ph_max", "substeps"):
            if key in oracle:
                _number(oracle[key], f"oracle.{key}", positive=True, integer=True)

    return RunConfig(raw=data)


def parse_observable_name(name: str):
    """'coh_23' -> ('coh', 2, 3); 'pop_4' -> ('pop', 4); 'fidelity' -> ('fidelity',)."""
    if not isinstance(name, str):
        raise ConfigError(f"observable name {name!r}: expected a string")
    if name == "fidelity":
        return ("fidelity",)
    head, _, tail = name.partition("_")
    if head == "coh" and len(tail) == 2 and tail.isdigit():
        return ("coh", int(tail[0]), int(tail[1]))
    if head == "pop" and tail.isdigit():
        return ("pop", int(tail))
    raise ConfigError(
        f"observable {name!r}: expected coh_IJ, pop_I, or fidelity"
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")
    return validate_config(data)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.raw, indent=2, sort_keys=True)
