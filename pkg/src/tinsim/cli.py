"""Command-line front end.

    tinsim <command> --scenario <file> --out <dir> [--seed N] [--threads N]

Each invocation writes ``<out>/<command>-<scenario>-seed<N>/`` holding an
echo of the normalized scenario, the command's CSVs and a manifest. Outputs
depend only on the scenario and seed.
Exit codes: 0 success, 1 verification failure, 2 input error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import backaction as ba
from . import calibration as cal
from . import io
from .constants import TWO_PI
from .oracle import SimulationError
from .params import (
    DampingModel,
    photon_number_from_power,
    vacuum_coupling_rate,
)
from .scenario import Scenario, ScenarioError, builtin_scenarios
from .spectra import (
    FrequencyGrid,
    SpectrumError,
    Units,
    multimode_frequency_noise,
    self_convolve,
    welch_psd,
)
from .transduction import MAGIC_NU, tin_prefactor, tin_rin

THREADS_ENV = "TINSIM_THREADS"
EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class Run:
    """Output directory of one command invocation."""

    def __init__(self, command, scenario, out, seed, threads):
        self.command = command
        self.scenario = scenario
        self.seed = seed
        self.threads = threads
        name = scenario.name if scenario is not None else "acceptance"
        self.dir = Path(out) / f"{command}-{name}-seed{seed}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []
        if scenario is not None:
            self.add("scenario.yaml").write_text(scenario.to_yaml())

    def add(self, name):
        self.files.append(name)
        return self.dir / name

    def finish(self, extra=None):
        entries = {"command": self.command, "tinsim_version": __version__, "seed": self.seed}
        if self.scenario is not None:
            entries["scenario_name"] = self.scenario.name
            entries["scenario_digest"] = self.scenario.digest()
        if extra:
            entries.update(extra)
        entries["files"] = ",".join(sorted(self.files))
        io.write_report(self.dir / "manifest.txt", entries)
        return self.dir


# --- budget ------------------------------------------------------------------------

def tin_level_settings(scenario):
    """(measured level or None, reference temperature) from the tin section."""
    tin = scenario.tin_settings
    level = tin.get("s_rin_tin_per_hz")
    t_ref = tin.get("reference_temperature_k", scenario.temperature if level is not None else None)
    return level, t_ref


def cmd_budget(scenario, run):
    system = scenario.system()
    grid = scenario.grid()
    b = scenario.data.get("budget", {})
    level, t_ref = tin_level_settings(scenario)
    bands = [tuple(x) for x in b.get("bands_hz", [])]
    for band in bands:
        if len(band) != 2 or not band[0] < band[1]:
            raise ScenarioError(f"budget.bands_hz: bad band {list(band)}")
    report = cal.model_budgets(
        system, grid, s_rin_tin=level, tin_reference_temperature=t_ref,
        imprecision_scale=float(b.get("imprecision_scale", 1.0)),
        s_f=b.get("laser_frequency_noise_rad2_per_s"),
        s_rin_classical=b.get("classical_rin_per_hz"),
        bin_average=scenario.bin_average, approximate_y=bool(b.get("approximate_y", False)),
        bands=bands)
    io.write_budget_csv(run.add("budget_s_y.csv"), report.s_y)
    io.write_budget_csv(run.add("budget_s_rin.csv"), report.s_rin)
    summary = {"rin_components": ",".join(report.s_rin.components),
               "y_components": ",".join(report.s_y.components)}
    for lo, hi in bands:
        key = f"band_{lo:g}_{hi:g}_hz"
        for label, budget in (("s_y", report.s_y), ("s_rin", report.s_rin)):
            _, _, dom, powers = budget.dominance([(lo, hi)])[0]
            summary[f"{key}.{label}.dominant"] = dom
            for name in powers:
                summary[f"{key}.{label}.mean.{name}"] = budget[name].band_mean(lo, hi)
        summary[f"{key}.tin_over_thermal_db_min"] = report.tin_over_thermal_db[(lo, hi)]
        summary[f"{key}.tin_dominated"] = report.tin_dominated((lo, hi))
    io.write_report(run.add("budget_summary.txt"), summary)
    return EXIT_OK


# --- tin ------------------------------------------------------------------------

def analytic_tin_chain(scenario):
    """(S_nu, S_nu^2, S_RIN^TIN) for the scenario's modes on its grid."""
    system = scenario.system()
    g = scenario.grid()
    structural = any(m.damping_model is DampingModel.STRUCTURAL for m in system.modes)
    base = FrequencyGrid.spanning(g.df if structural else 0.0, g.f_stop, g.df)
    s_nu = multimode_frequency_noise(system, base, bin_average=scenario.bin_average)
    s_nu2 = self_convolve(s_nu)
    return s_nu, s_nu2, tin_rin(s_nu2, system.cavity.detuning_nu)


def cmd_tin(scenario, run):
    s_nu, s_nu2, rin = analytic_tin_chain(scenario)
    io.write_psd_csv(run.add("s_nu.csv"), s_nu)
    io.write_psd_csv(run.add("s_nu2.csv"), s_nu2)
    io.write_psd_csv(run.add("tin_rin.csv"), rin)
    band = scenario.tin_settings.get("band_hz", [s_nu.grid.df, s_nu.grid.f_stop])
    if len(band) != 2 or not band[0] < band[1]:
        raise ScenarioError("tin.band_hz must be [f_lo, f_hi] with f_lo < f_hi")
    nus = np.unique(np.concatenate([scenario.nu_sweep(), [-MAGIC_NU, 0.0, MAGIC_NU]]))
    base_power = s_nu2.band_power(*band)
    io.write_columns_csv(run.add("tin_nu_sweep.csv"), {
        "nu": nus,
        "prefactor": np.asarray(tin_prefactor(nus), dtype=float),
        "band_power": np.asarray(tin_prefactor(nus), dtype=float) * base_power,
    }, f"band-integrated TIN RIN over {band[0]:g}-{band[1]:g} Hz")
    summary = {"band_hz": f"{band[0]:g},{band[1]:g}",
               "band_mean_rin": rin.band_mean(*band),
               "band_power_nu0": base_power,
               "band_power_magic": float(tin_prefactor(MAGIC_NU)) * base_power}
    io.write_report(run.add("tin_summary.txt"), summary)
    return EXIT_OK


# --- landscape ------------------------------------------------------------------

def tin_reference(scenario):
    """TIN reference for landscape extrapolation: measured level if given,
    otherwise the analytic band mean."""
    system = scenario.system()
    level, t_ref = tin_level_settings(scenario)
    if level is None:
        _, s_nu2, _ = analytic_tin_chain(scenario)
        g = scenario.grid()
        band = scenario.tin_settings.get("band_hz", [g.df, g.f_stop])
        level = float(tin_rin(s_nu2, 0.0).band_mean(*band))
        t_ref = system.temperature
    if not level > 0:
        raise ScenarioError("landscape needs a positive TIN level; set tin.s_rin_tin_per_hz")
    return ba.TinReference(level, system.cavity.kappa, t_ref, system.probe.coupling_G)


def cmd_landscape(scenario, run):
    system = scenario.system()
    kappas, powers, nu, temps = scenario.landscape_ranges()
    ref = tin_reference(scenario)
    points = ba.cq_landscape(system, kappas, powers, nu, temps, ref, threads=run.threads)
    io.write_landscape_csv(run.add("landscape.csv"), points)
    rows = {k: [] for k in ("kappa_rad_s", "temperature_k", "n_c_closed_form", "n_c_numeric",
                            "p_in_optimal_w", "cq_max", "cq_bound", "p_threshold_w")}
    for t in temps:
        for k in kappas:
            o = ba.optimum_for_kappa(system, k, nu, t, ref)
            vals = (k, t, o.n_c_closed_form, o.n_c_numeric, o.p_in_optimal, o.cq_max_numeric,
                    o.cq_bound, ba.threshold_power(system, k, nu, t))
            for key, v in zip(rows, vals):
                rows[key].append(v)
    io.write_columns_csv(run.add("landscape_optimum.csv"), {k: np.array(v) for k, v in rows.items()},
                         "per-kappa optimum of C_q over input power")
    io.write_report(run.add("landscape_summary.txt"), {
        "tin_reference_rin": ref.s_rin_tin, "tin_reference_temperature_k": ref.temperature,
        "kappa_points": len(kappas), "power_points": len(powers), "nu": nu,
        "max_cq": max(p.cq for p in points)})
    return EXIT_OK


# --- simulate -------------------------------------------------------------------

def _band(o, key):
    b = o.get(key)
    if b is None:
        return None
    if len(b) != 2 or not b[0] < b[1]:
        raise ScenarioError(f"oracle.{key} must be [f_lo, f_hi]")
    return tuple(b)


def cmd_simulate(scenario, run):
    from .oracle import band_power_series, measure_coherence, measure_tin, simulate
    o = scenario.data.get("oracle", {})
    config = scenario.sim_config(seed=run.seed)
    seg = scenario.segment_length(config.fs)
    overlap = float(o.get("overlap", 0.5))
    if not 16 <= seg <= config.n_samples:
        raise ScenarioError(f"oracle.segment_s gives {seg} samples; need 16..{config.n_samples}")
    record = simulate(config)
    io.save_record(run.add("record.bin"), record)
    if record.n_samples <= int(o.get("csv_max_samples", 200_000)):
        io.export_record_csv(run.add("record.csv"), record)
    summary = {"n_samples": record.n_samples, "fs_hz": record.fs, "segment_samples": seg,
               "shot_rin_level": config.shot_rin_level,
               "imprecision_level": config.imprecision_level}
    if record.phase is not None:
        s_y = welch_psd(record.phase, record.fs, seg, overlap)
        io.write_psd_csv(run.add("s_y.csv"), s_y)
    if record.detuning is not None:
        io.write_psd_csv(run.add("s_nu.csv"), welch_psd(record.detuning, record.fs, seg, overlap,
                                                       units=Units.PER_HZ))
    if record.intensity is not None:
        io.write_psd_csv(run.add("s_rin.csv"), welch_psd(record.intensity, record.fs, seg, overlap,
                                                        units=Units.PER_HZ))
        tin = measure_tin(record, seg, overlap)
        io.write_psd_csv(run.add("tin_measured.csv"), tin)
        band = _band(o, "tinba_band_hz")
        if band:
            summary["tin_band_mean"] = tin.band_mean(*band)
    if record.phase is not None and record.intensity is not None:
        try:
            cm = measure_coherence(record, seg, overlap)
        except ValueError as exc:
            summary["coherence"] = f"skipped ({exc})"
        else:
            io.write_columns_csv(run.add("coherence.csv"), {
                "frequency_hz": cm.frequencies, "coherence": cm.coherence.values,
                "phase_rad": cm.phase, "predicted": cm.predicted.values})
            summary["coherence_bias"] = cm.bias
    sweep = o.get("n_cav_sweep")
    if sweep:
        band = _band(o, "tinba_band_hz")
        if band is None:
            raise ScenarioError("oracle.n_cav_sweep needs oracle.tinba_band_hz")
        records = [simulate(config.replace(system=config.system.replace(
            cavity=config.system.cavity.replace(n_cav=float(n))))) for n in sweep]
        cols = {"n_cav": np.array(sweep, dtype=float),
                "tinba_band_power": band_power_series(records, band, seg, overlap=overlap)}
        ib = _band(o, "imprecision_band_hz")
        if ib:
            cols["imprecision_band_power"] = band_power_series(records, ib, seg,
                                                               subtract_readout=False,
                                                               overlap=overlap)
        io.write_columns_csv(run.add("tinba_scaling.csv"), cols)
        logn = np.log10(cols["n_cav"])
        for key in ("tinba_band_power", "imprecision_band_power"):
            if key in cols and len(sweep) >= 2 and np.all(cols[key] > 0):
                summary[f"slope.{key}"] = float(np.polyfit(logn, np.log10(cols[key]), 1)[0])
    io.write_report(run.add("simulate_summary.txt"), summary)
    return EXIT_OK


# --- calibrate ------------------------------------------------------------------

def _resolve(scenario, name):
    p = Path(name)
    if not p.is_absolute() and scenario.source:
        p = Path(scenario.source).parent / p
    if not p.is_file():
        raise ScenarioError(f"calibrate: file not found: {p}")
    return p


def cmd_calibrate(scenario, run):
    c = scenario.data.get("calibrate", {})
    syn = c.get("synthetic", {})
    rng = np.random.default_rng(run.seed)
    system = scenario.system()
    mode = system.probe
    cavity = system.cavity
    t_eff = float(c.get("t_eff_k", cal.DEFAULT_T_EFF))
    n_avg = int(syn.get("n_avg", 1000))
    report = {"t_eff_k": t_eff}

    g0_true = TWO_PI * syn["g0_hz"] if "g0_hz" in syn else vacuum_coupling_rate(mode)
    if "tone" in c:
        tone = cal.CalibrationTone(float(c["tone"]["beta_rad"]), TWO_PI * c["tone"]["frequency_hz"])
        if "psd_file" in c:
            spec = io.read_psd_csv(_resolve(scenario, c["psd_file"]), units=Units.RAD2_PER_HZ.value)
            report["g0.source"] = "file"
        else:
            df = float(syn.get("df_hz", 0.5))
            grid = FrequencyGrid.spanning(0.0, 1.2 * max(tone.omega_mod / TWO_PI, mode.f_m), df)
            spec = cal.synthetic_tone_spectrum(mode, g0_true, tone, grid, t_eff, n_avg=n_avg, rng=rng,
                                               bin_average=scenario.bin_average)
            io.write_psd_csv(run.add("synthetic_tone_spectrum.csv"), spec)
            report["g0.source"] = "synthetic"
            report["g0.truth_hz"] = g0_true / TWO_PI
            report["g0.tolerance"] = 0.02
        g0 = cal.g0_from_tone(spec, tone, mode, t_eff)
        report["g0.fit_hz"] = g0 / TWO_PI
        if report["g0.source"] == "synthetic":
            report["g0.rel_error"] = g0 / g0_true - 1

    n_true = float(syn.get("n_c", cavity.n_cav_resonant if cavity.n_cav > 0 else 1e6))
    if "spring_shifts_hz" in c:
        shifts = [(nu, TWO_PI * dw) for nu, dw in c["spring_shifts_hz"]]
        report["n_c.source"] = "scenario"
    else:
        shifts = cal.synthetic_spring_shifts(mode, cavity, n_true, np.linspace(-1.5, 1.5, 9),
                                             float(syn.get("spring_noise", 0.0)), rng)
        report["n_c.source"] = "synthetic"
        report["n_c.truth"] = n_true
        report["n_c.tolerance"] = 0.01
    io.write_columns_csv(run.add("spring_shifts.csv"), {
        "nu": np.array([s[0] for s in shifts]),
        "shift_hz": np.array([s[1] / TWO_PI for s in shifts])})
    fit = cal.nc_from_spring_fit(shifts, mode, cavity)
    report["n_c.fit"] = fit.n_c
    report["n_c.rms_residual_hz"] = fit.rms_residual / TWO_PI
    if report["n_c.source"] == "synthetic":
        report["n_c.rel_error"] = fit.n_c / n_true - 1

    if "power_sweep" in c:
        p = np.asarray(c["power_sweep"]["power_w"], dtype=float)
        n = np.asarray(c["power_sweep"]["n_c"], dtype=float)
        if p.shape != n.shape:
            raise ScenarioError("calibrate.power_sweep: power_w and n_c differ in length")
        report["eta.source"] = "scenario"
    else:
        eta_true = float(syn.get("eta", cavity.eta))
        p = np.linspace(0.05e-3, 1e-3, 8)
        n = cal.synthetic_power_sweep(photon_number_from_power(1.0, cavity.replace(
            eta=eta_true, detuning_nu=0.0)), p)
        report["eta.source"] = "synthetic"
        report["eta.truth"] = eta_true
    ef = cal.eta_from_power_sweep(p, n, cavity)
    report["eta.fit"] = ef.eta
    report["eta.slope_per_w"] = ef.slope

    peaks = c.get("peaks")
    guesses = ([cal.PeakGuess(pk["frequency_hz"], pk["q"], pk["mass_kg"],
                              DampingModel(pk.get("damping", "viscous"))) for pk in peaks]
               if peaks else [cal.PeakGuess(m.f_m, m.q_factor, m.mass, m.damping_model)
                              for m in system.modes])
    if "displacement_psd_file" in c:
        spec = io.read_psd_csv(_resolve(scenario, c["displacement_psd_file"]),
                               units=Units.M2_PER_HZ.value)
        report["peaks.source"] = "file"
    else:
        f_top = max(m.f_m for m in system.modes)
        df = float(syn.get("df_hz", 0.5))
        grid = FrequencyGrid.spanning(df, 1.2 * f_top, df)
        spec = cal.synthetic_thermal_spectrum(system.modes, grid, n_avg=n_avg, rng=rng,
                                              bin_average=scenario.bin_average)
        io.write_psd_csv(run.add("synthetic_thermal_spectrum.csv"), spec)
        report["peaks.source"] = "synthetic"
    fits = cal.fit_thermal_peaks(spec, guesses, scenario.temperature,
                                 int(c.get("mask_bins", cal.DEFAULT_MASK_BINS)))
    cols = {"f_m_hz": [], "linewidth_hz": [], "q": [], "mass_kg": [], "area_m2": []}
    for i, f in enumerate(fits):
        report[f"peak{i}.f_m_hz"] = f.f_m
        report[f"peak{i}.linewidth_hz"] = f.linewidth / TWO_PI
        report[f"peak{i}.mass_kg"] = f.mass_eff
        report[f"peak{i}.resolved"] = bool(f.linewidth / TWO_PI >= 2 * spec.grid.df)
        if report["peaks.source"] == "synthetic":
            m = system.modes[i]
            report[f"peak{i}.linewidth_rel_error"] = f.linewidth / m.gamma_m - 1
            report[f"peak{i}.mass_rel_error"] = f.mass_eff / m.mass - 1
        for key, v in zip(cols, (f.f_m, f.linewidth / TWO_PI, f.q_factor, f.mass_eff, f.area)):
            cols[key].append(v)
    io.write_columns_csv(run.add("peak_fits.csv"), {k: np.array(v) for k, v in cols.items()})
    io.write_report(run.add("calibration_report.txt"), report)
    return EXIT_OK


# --- verify -----------------------------------------------------------------------

def cmd_verify(run, selected=None):
    from .verify import run_all
    results = run_all(selected, threads=run.threads)
    lines = [r.report() for r in results]
    text = "\n".join(lines)
    print(text)
    run.add("verify.txt").write_text(text + "\n")
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failing: {', '.join(map(str, failed))}" if failed else ""))
    return EXIT_FAIL if failed else EXIT_OK


COMMANDS = {
    "budget": cmd_budget,
    "tin": cmd_tin,
    "landscape": cmd_landscape,
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
}


def _default_threads():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ScenarioError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return n


def build_parser():
    p = argparse.ArgumentParser(prog="tinsim", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=sorted([*COMMANDS, "verify"]))
    p.add_argument("--scenario", help="scenario YAML file or built-in name "
                   f"({', '.join(builtin_scenarios()) or 'none'})")
    p.add_argument("--out", default="tinsim-out", help="output root directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or 1)")
    p.add_argument("--criteria", default=None,
                   help="verify only: comma-separated criterion numbers")
    return p


def load_scenario(arg):
    if arg is None:
        raise ScenarioError("--scenario is required for this command")
    path = Path(arg)
    if not path.is_file():
        builtin = builtin_scenarios()
        if arg in builtin:
            path = builtin[arg]
    return Scenario.load(path)


def main(argv=None):
    parser = build_parser()
    parser.exit = _exit_input(parser.exit)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        threads = args.threads if args.threads is not None else _default_threads()
        if threads < 1:
            raise ScenarioError("--threads must be >= 1")
        if args.command == "verify":
            selected = None
            if args.criteria:
                try:
                    selected = {int(x) for x in args.criteria.split(",")}
                except ValueError:
                    raise ScenarioError(f"bad --criteria {args.criteria!r}") from None
            run = Run("verify", None, args.out, args.seed, threads)
            code = cmd_verify(run, selected)
            run.finish({"exit_code": code})
            return code
        scenario = load_scenario(args.scenario)
        run = Run(args.command, scenario, args.out, args.seed, threads)
        code = COMMANDS[args.command](scenario, run)
        out = run.finish()
        print(out)
        return code
    except (ScenarioError, SpectrumError, cal.CalibrationError, SimulationError,
            OSError) as exc:
        print(f"tinsim: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"tinsim: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


def _exit_input(orig):
    def exit_(status=0, message=None):
        if message:
            sys.stderr.write(message)
        raise SystemExit(EXIT_INPUT if status else EXIT_OK)
    return exit_


if __name__ == "__main__":
    sys.exit(main())
