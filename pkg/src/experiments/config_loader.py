"""Experiment configuration: INI files with flat sections, defaults from src.config."""
import configparser
import io
import logging
import os
from dataclasses import dataclass, field

from src import config as defaults
from src.errors import ConfigError
from src.utils import atomic_write_text

logger = logging.getLogger(__name__)

PROBLEMS = ("eit", "qpact")
METHODS = ("admm", "monolithic")
STUDY_KINDS = ("single", "norm", "inexact", "scaling_mesh", "scaling_q", "qpact")


def _tuple_text(values):
    return ", ".join(str(v) for v in values)


def _default_table(problem):
    eit = problem == "eit"
    extinction = {f"extinction_{w}": _tuple_text(v) for w, v in defaults.EXTINCTION_TABLE.items()}
    return {
        "run": {"problem": problem, "method": "admm", "name": "run", "seed": defaults.DEFAULT_SEED,
                "output_dir": defaults.OUTPUTS_DIR, "workers": 0},
        "mesh": {"level": defaults.EIT_MESH_LEVEL, "file": "", "divisions": defaults.QPACT_SQUARE_DIVISIONS},
        "eit": {"q": defaults.DEFAULT_Q, "gamma": defaults.EIT_GAMMA, "beta": defaults.EIT_BETA,
                "noise_level": defaults.NOISE_LEVEL, "m0": 0.0},
        "qpact": {"wavelengths": _tuple_text(sorted(defaults.EXTINCTION_TABLE)),
                  "noise_level": defaults.NOISE_LEVEL, "illumination": defaults.ILLUMINATION,
                  "s0": 0.6, "cthb0": 1.0, "mus0": 1.0, **extinction},
        "regularization": {"alpha_tv": defaults.ALPHA_TV, "alpha_tk": defaults.ALPHA_TK,
                           "eps": defaults.TV_EPS, "m_ref": defaults.M_REF,
                           "gamma_s": defaults.QPACT_GAMMA_S, "delta_s": defaults.QPACT_DELTA_S,
                           "gamma_cthb": defaults.QPACT_GAMMA_CTHB, "delta_cthb": defaults.QPACT_DELTA_CTHB,
                           "gamma_mus": defaults.QPACT_GAMMA_MUS, "delta_mus": defaults.QPACT_DELTA_MUS,
                           "qpact_eps": defaults.QPACT_EPS},
        "admm": {"rho0_h1": defaults.RHO0_H1 if eit else 1.0, "rho0_l2": defaults.RHO0_L2 if eit else 1.0,
                 "mu": defaults.ADMM_MU if eit else defaults.QPACT_ADMM_MU,
                 "tau": defaults.ADMM_TAU if eit else defaults.QPACT_ADMM_TAU,
                 "eps_abs": defaults.ADMM_EPS_ABS if eit else defaults.QPACT_ADMM_EPS_ABS,
                 "eps_rel": defaults.ADMM_EPS_REL if eit else defaults.QPACT_ADMM_EPS_REL,
                 "max_global_iter": defaults.ADMM_MAX_GLOBAL_ITER, "consensus_norm": defaults.CONSENSUS_NORM,
                 "z_update": defaults.Z_UPDATE_MODE},
        "incg": {"max_iter": defaults.INCG_MAX_ITER, "grad_abs_tol": defaults.INCG_GRAD_ABS_TOL,
                 "grad_rel_tol": defaults.INCG_GRAD_REL_TOL, "max_cg_iter": defaults.INCG_MAX_CG_ITER,
                 "c_armijo": defaults.INCG_C_ARMIJO, "max_backtrack": defaults.INCG_MAX_BACKTRACK,
                 "hessian_mode": defaults.HESSIAN_MODE if eit else "gauss_newton",
                 "forcing_cap": defaults.INCG_FORCING_CAP, "gdm_tol": defaults.INCG_GDM_TOL},
        "zsolver": {"grad_abs_tol": defaults.Z_GRAD_ABS_TOL, "grad_rel_tol": defaults.Z_GRAD_REL_TOL,
                    "max_iter": defaults.Z_MAX_ITER},
        "study": {"kind": "single" if eit else "qpact",
                  "q_values": _tuple_text(defaults.SCALING_Q_VALUES),
                  "mesh_levels": _tuple_text(defaults.SCALING_MESH_LEVELS),
                  "inexact_iter": defaults.INEXACT_SUBPROBLEM_ITER, "exact_iter": defaults.EXACT_SUBPROBLEM_ITER,
                  "monolithic_max_iter": defaults.MONOLITHIC_MAX_ITER,
                  "monolithic_grad_abs_tol": defaults.MONOLITHIC_GRAD_ABS_TOL,
                  "monolithic_grad_rel_tol": defaults.MONOLITHIC_GRAD_REL_TOL,
                  "report": True},
    }


def _convert(raw, default, where):
    try:
        if isinstance(default, bool):
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_number_list(text, kind=float, where="value"):
    try:
        return tuple(kind(item) for item in text.replace(";", ",").split(",") if item.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse number list {text!r}") from exc


@dataclass
class ExperimentConfig:
    """Typed view of the effective configuration (defaults + file + overrides)"""
    values: dict
    source: str = None
    overrides: list = field(default_factory=list)

    def get(self, section, key):
        try:
            return self.values[section][key]
        except KeyError as exc:
            raise ConfigError(f"unknown config key {section}.{key}") from exc

    @property
    def problem(self):
        return self.get("run", "problem")

    @property
    def method(self):
        return self.get("run", "method")

    @property
    def seed(self):
        return self.get("run", "seed")

    @property
    def output_dir(self):
        return self.get("run", "output_dir")

    @property
    def mesh_file(self):
        return self.get("mesh", "file") or None

    def number_list(self, section, key, kind=float):
        return parse_number_list(self.get(section, key), kind, f"{section}.{key}")

    def extinction_table(self):
        table = {}
        for wavelength in self.number_list("qpact", "wavelengths", int):
            key = f"extinction_{wavelength}"
            if key not in self.values["qpact"]:
                raise ConfigError(f"qpact.{key} is missing for wavelength {wavelength}")
            pair = self.number_list("qpact", key)
            if len(pair) != 2:
                raise ConfigError(f"qpact.{key} must hold two numbers (Hb, HbO2)")
            table[wavelength] = pair
        return table

    def with_overrides(self, overrides):
        values = {section: dict(items) for section, items in self.values.items()}
        applied = list(self.overrides)
        for item in overrides:
            section, key, raw = _split_override(item)
            if not _accepts(values, section, key):
                raise ConfigError(f"unknown config key {section}.{key}")
            values[section][key] = _convert(raw, values[section][key], f"{section}.{key}")
            applied.append(item)
        config = ExperimentConfig(values, self.source, applied)
        config.validate()
        return config

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"run.problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.method not in METHODS:
            raise ConfigError(f"run.method must be one of {METHODS}, got {self.method!r}")
        if self.get("study", "kind") not in STUDY_KINDS:
            raise ConfigError(f"study.kind must be one of {STUDY_KINDS}")
        if self.get("eit", "q") < 1:
            raise ConfigError("eit.q must be at least 1")
        if self.get("eit", "noise_level") < 0 or self.get("qpact", "noise_level") < 0:
            raise ConfigError("noise levels must be nonnegative")
        if self.mesh_file and not os.path.exists(self.mesh_file):
            raise ConfigError(f"mesh file not found: {self.mesh_file}")
        level = self.get("mesh", "level")
        if not 0 <= level <= defaults.MAX_REFINEMENT_LEVEL:
            raise ConfigError(f"mesh.level must lie in 0..{defaults.MAX_REFINEMENT_LEVEL}")

    def to_ini(self):
        parser = configparser.ConfigParser()
        for section, items in self.values.items():
            parser[section] = {key: str(value) for key, value in items.items()}
        buffer = io.StringIO()
        if self.overrides:
            buffer.write("# overrides: " + " ".join(self.overrides) + "\n")
        parser.write(buffer)
        return buffer.getvalue()

    def save_snapshot(self, path):
        return atomic_write_text(path, self.to_ini())


def _accepts(values, section, key):
    if section not in values:
        return False
    if key in values[section]:
        return True
    if section == "qpact" and key.startswith("extinction_"):
        values[section][key] = ""
        return True
    return False


def _split_override(item):
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    name, raw = item.split("=", 1)
    section, key = name.strip().split(".", 1)
    return section.strip(), key.strip(), raw


def load_config(path=None, overrides=(), problem=None):
    """Read an INI file (or only defaults when ``path`` is None) and apply overrides"""
    parser = configparser.ConfigParser()
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc

    chosen = problem or parser.get("run", "problem", fallback="eit").strip()
    for item in overrides:
        section, key, raw = _split_override(item)
        if (section, key) == ("run", "problem"):
            chosen = raw.strip()
    if chosen not in PROBLEMS:
        raise ConfigError(f"run.problem must be one of {PROBLEMS}, got {chosen!r}")

    values = _default_table(chosen)
    for section in parser.sections():
        if section not in values:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if not _accepts(values, section, key):
                raise ConfigError(f"unknown config key {section}.{key}")
            values[section][key] = _convert(raw, values[section][key], f"{section}.{key}")
    values["run"]["problem"] = chosen
    config = ExperimentConfig(values, path)
    config.validate()
    return config.with_overrides(overrides)
