"""Scenario files: YAML with nested sections and unit-suffixed keys (SI).

Unknown keys are rejected with their location, e.g. ``modes[1].mass``.
Serialization writes the normalized input back out, so parse -> serialize ->
parse reproduces the same parameters exactly.
"""

from __future__ import annotations

import copy
import hashlib
import math
import re
from pathlib import Path

import numpy as np
import yaml

from .constants import C_LIGHT, TWO_PI
from .params import (
    DEVICE_ETA,
    DEVICE_WAVELENGTH,
    CavityParams,
    DampingModel,
    MechanicalMode,
    SystemParams,
    photon_number_from_power,
)
from .spectra import FrequencyGrid


class ScenarioError(ValueError):
    pass


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads YAML 1.2 floats such as ``7.8e6``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                  |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                  |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                  |[-+]?\.(?:inf|Inf|INF)
                  |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


NUM = (int, float)
RANGE = {"start": NUM, "stop": NUM, "points": int}

SCHEMA = {
    "name": str,
    "temperature_k": NUM,
    "probe_index": int,
    "modes": [{
        "frequency_hz": NUM,
        "q": NUM,
        "mass_kg": NUM,
        "g0_hz": NUM,
        "coupling_hz_per_m": NUM,
        "damping": str,
    }],
    "cavity": {
        "linewidth_hz": NUM,
        "detuning_nu": NUM,
        "wavelength_m": NUM,
        "eta": NUM,
    },
    "laser": {
        "power_w": NUM,
        "n_cav": NUM,
    },
    "grid": {
        "f_start_hz": NUM,
        "f_stop_hz": NUM,
        "df_hz": NUM,
        "bin_average": bool,
    },
    "tin": {
        "s_rin_tin_per_hz": NUM,
        "reference_temperature_k": NUM,
        "band_hz": [NUM],
        "nu_sweep": RANGE,
    },
    "oracle": {
        "fs_hz": NUM,
        "duration_s": NUM,
        "segment_s": NUM,
        "overlap": NUM,
        "adiabatic_cavity": bool,
        "radiation_pressure": bool,
        "backaction_modes": [int],
        "qba_force": bool,
        "shot_noise": bool,
        "imprecision_m2_per_hz": NUM,
        "imprecision_scale": NUM,
        "lock_bandwidth_hz": NUM,
        "record": [str],
        "max_samples": int,
        "tone": {"mode_index": int, "amplitude_n": NUM, "frequency_hz": NUM},
        "tinba_band_hz": [NUM],
        "imprecision_band_hz": [NUM],
        "n_cav_sweep": [NUM],
        "csv_max_samples": int,
    },
    "budget": {
        "imprecision_scale": NUM,
        "laser_frequency_noise_rad2_per_s": NUM,
        "classical_rin_per_hz": NUM,
        "approximate_y": bool,
        "bands_hz": [[NUM]],
    },
    "feedback": [{
        "modes": [int],
        "gain_kg_per_s": NUM,
        "center_hz": NUM,
        "width_hz": NUM,
    }],
    "landscape": {
        "linewidth_hz": RANGE,
        "power_w": RANGE,
        "nu": NUM,
        "temperatures_k": [NUM],
    },
    "calibrate": {
        "t_eff_k": NUM,
        "psd_file": str,
        "displacement_psd_file": str,
        "tone": {"beta_rad": NUM, "frequency_hz": NUM},
        "spring_shifts_hz": [[NUM]],
        "peaks": [{"frequency_hz": NUM, "q": NUM, "mass_kg": NUM, "damping": str}],
        "mask_bins": int,
        "power_sweep": {"power_w": [NUM], "n_c": [NUM]},
        "synthetic": {"g0_hz": NUM, "n_c": NUM, "n_avg": int, "df_hz": NUM,
                      "spring_noise": NUM, "eta": NUM},
    },
}

REQUIRED = {"modes", "cavity"}


def _type_name(spec):
    if spec is NUM:
        return "number"
    if isinstance(spec, type):
        return spec.__name__
    if isinstance(spec, list):
        return "list"
    return "section"


def _validate(obj, spec, where):
    if isinstance(spec, dict):
        if not isinstance(obj, dict):
            raise ScenarioError(f"{where or 'scenario'}: expected a section, got {type(obj).__name__}")
        for key, val in obj.items():
            loc = f"{where}.{key}" if where else str(key)
            if key not in spec:
                raise ScenarioError(f"unknown key '{key}' at {loc}")
            _validate(val, spec[key], loc)
    elif isinstance(spec, list):
        if not isinstance(obj, list):
            raise ScenarioError(f"{where}: expected a list")
        for i, item in enumerate(obj):
            _validate(item, spec[0], f"{where}[{i}]")
    elif spec is NUM:
        if isinstance(obj, bool) or not isinstance(obj, NUM):
            raise ScenarioError(f"{where}: expected a number, got {obj!r}")
        if not math.isfinite(obj):
            raise ScenarioError(f"{where}: must be finite")
    elif spec is int:
        if isinstance(obj, bool) or not isinstance(obj, int):
            raise ScenarioError(f"{where}: expected an integer, got {obj!r}")
    elif not isinstance(obj, spec):
        raise ScenarioError(f"{where}: expected {_type_name(spec)}, got {obj!r}")


def _range(d):
    if d["points"] < 1:
        raise ScenarioError("range needs at least one point")
    return d["start"], d["stop"], d["points"]


class Scenario:
    """Validated scenario plus builders for the engine's parameter types."""

    def __init__(self, data, source=None):
        data = copy.deepcopy(data) if data is not None else {}
        _validate(data, SCHEMA, "")
        missing = REQUIRED - set(data)
        if missing:
            raise ScenarioError(f"missing required section(s): {', '.join(sorted(missing))}")
        if not data["modes"]:
            raise ScenarioError("modes: at least one mode is required")
        for i, m in enumerate(data["modes"]):
            for key in ("frequency_hz", "q", "mass_kg"):
                if key not in m:
                    raise ScenarioError(f"modes[{i}]: missing '{key}'")
            if "g0_hz" in m and "coupling_hz_per_m" in m:
                raise ScenarioError(f"modes[{i}]: give g0_hz or coupling_hz_per_m, not both")
            if m.get("damping", "viscous") not in {d.value for d in DampingModel}:
                raise ScenarioError(f"modes[{i}].damping: expected viscous or structural")
        if "linewidth_hz" not in data["cavity"]:
            raise ScenarioError("cavity: missing 'linewidth_hz'")
        laser = data.get("laser", {})
        if "power_w" in laser and "n_cav" in laser:
            raise ScenarioError("laser: give power_w or n_cav, not both")
        self.data = data
        self.source = source
        self.system()  # surface parameter errors at parse time

    # -- construction -----------------------------------------------------------------

    @classmethod
    def from_yaml(cls, text, source=None):
        try:
            data = yaml.load(text, Loader=_Loader)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"{source or 'scenario'}: invalid YAML: {exc}") from exc
        return cls(data, source)

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ScenarioError(f"scenario file not found: {path}")
        return cls.from_yaml(path.read_text(), str(path))

    def to_yaml(self):
        return yaml.safe_dump(self.data, sort_keys=False, default_flow_style=None)

    def digest(self):
        return hashlib.sha256(self.to_yaml().encode()).hexdigest()[:12]

    def with_changes(self, **sections):
        data = copy.deepcopy(self.data)
        for k, v in sections.items():
            if isinstance(v, dict) and isinstance(data.get(k), dict):
                data[k].update(v)
            else:
                data[k] = v
        return Scenario(data, self.source)

    # -- parameter builders ---------------------------------------------------------

    @property
    def name(self):
        return self.data.get("name", Path(self.source).stem if self.source else "scenario")

    @property
    def temperature(self):
        return float(self.data.get("temperature_k", 298.0))

    def cavity(self, n_cav=None):
        c = self.data["cavity"]
        kappa = TWO_PI * c["linewidth_hz"]
        wl = c.get("wavelength_m", DEVICE_WAVELENGTH)
        cav = CavityParams(kappa, float(c.get("detuning_nu", 0.0)), 0.0,
                           TWO_PI * C_LIGHT / wl, float(c.get("eta", DEVICE_ETA)))
        if n_cav is None:
            laser = self.data.get("laser", {})
            if "n_cav" in laser:
                n_cav = float(laser["n_cav"])
            elif "power_w" in laser:
                n_cav = photon_number_from_power(float(laser["power_w"]), cav)
            else:
                n_cav = 0.0
        return cav.replace(n_cav=n_cav)

    def modes(self):
        out = []
        for i, m in enumerate(self.data["modes"]):
            damping = DampingModel(m.get("damping", "viscous"))
            try:
                if "g0_hz" in m:
                    mode = MechanicalMode.from_g0(m["mass_kg"], m["frequency_hz"], m["q"],
                                                  TWO_PI * m["g0_hz"], self.temperature, damping)
                else:
                    mode = MechanicalMode.from_hz(m["mass_kg"], m["frequency_hz"], m["q"],
                                                  TWO_PI * m.get("coupling_hz_per_m", 0.0),
                                                  self.temperature, damping)
            except ValueError as exc:
                raise ScenarioError(f"modes[{i}]: {exc}") from exc
            out.append(mode)
        return out

    def system(self, n_cav=None):
        try:
            return SystemParams(self.modes(), self.cavity(n_cav), self.data.get("probe_index", 0))
        except ScenarioError:
            raise
        except (ValueError, IndexError) as exc:
            raise ScenarioError(str(exc)) from exc

    def grid(self):
        g = self.data.get("grid", {})
        f_max = max(m["frequency_hz"] for m in self.data["modes"])
        stop = g.get("f_stop_hz", 4 * f_max)
        df = g.get("df_hz", stop / 20000)
        return FrequencyGrid.spanning(float(g.get("f_start_hz", 0.0)), float(stop), float(df))

    @property
    def bin_average(self):
        return bool(self.data.get("grid", {}).get("bin_average", True))

    @property
    def tin_settings(self):
        return dict(self.data.get("tin", {}))

    def nu_sweep(self):
        r = self.tin_settings.get("nu_sweep", {"start": -1.5, "stop": 1.5, "points": 61})
        return np.linspace(*_range(r))

    def sim_config(self, seed=0, n_cav=None):
        from .oracle import FeedbackConfig, ForceTone, SimConfig
        o = self.data.get("oracle", {})
        system = self.system(n_cav)
        f_max = max(m.f_m for m in system.modes)
        fs = float(o.get("fs_hz", 40 * f_max))
        tone = None
        if "tone" in o:
            t = o["tone"]
            tone = ForceTone(t["mode_index"], float(t["amplitude_n"]), TWO_PI * t["frequency_hz"])
        fbs = tuple(FeedbackConfig(tuple(fb["modes"]), float(fb["gain_kg_per_s"]),
                                   TWO_PI * fb["center_hz"], TWO_PI * fb["width_hz"])
                    for fb in self.data.get("feedback", []))
        kw = dict(
            system=system, fs=fs, duration=float(o.get("duration_s", 10.0)), seed=int(seed),
            adiabatic_cavity=bool(o.get("adiabatic_cavity", True)), feedback=fbs,
            radiation_pressure=bool(o.get("radiation_pressure", True)),
            backaction_modes=tuple(o["backaction_modes"]) if "backaction_modes" in o else None,
            qba_force=bool(o.get("qba_force", False)), shot_noise=bool(o.get("shot_noise", True)),
            imprecision_psd=o.get("imprecision_m2_per_hz"),
            imprecision_scale=float(o.get("imprecision_scale", 1.0)),
            lock_bandwidth=o.get("lock_bandwidth_hz"), tone=tone,
        )
        if "record" in o:
            kw["record"] = tuple(o["record"])
        if "max_samples" in o:
            kw["max_samples"] = int(o["max_samples"])
        try:
            return SimConfig(**kw)
        except ValueError as exc:
            raise ScenarioError(f"oracle: {exc}") from exc

    def segment_length(self, fs):
        o = self.data.get("oracle", {})
        return int(round(fs * float(o.get("segment_s", 1.0))))

    def landscape_ranges(self):
        ls = self.data.get("landscape", {})
        k0 = self.data["cavity"]["linewidth_hz"]
        kr = ls.get("linewidth_hz", {"start": k0 / 10, "stop": k0 * 1000, "points": 100})
        pr = ls.get("power_w", {"start": 1e-6, "stop": 10.0, "points": 100})
        kappas = TWO_PI * np.logspace(math.log10(kr["start"]), math.log10(kr["stop"]), kr["points"])
        powers = np.logspace(math.log10(pr["start"]), math.log10(pr["stop"]), pr["points"])
        temps = [float(t) for t in ls.get("temperatures_k", [self.temperature])]
        return kappas, powers, float(ls.get("nu", 0.0)), temps

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.data == other.data


def builtin_scenarios():
    root = Path(__file__).with_name("scenarios")
    return {p.stem: p for p in sorted(root.glob("*.yaml"))}
