"""
Command line front end.

    rothe run         --config FILE --out DIR [--dt X] [--stride N]
    rothe audit       RUN_DIR [--eta-file FILE]
    rothe feasibility --config FILE --out DIR [--dt X] [--raster WxH] [--eta-file FILE]
    rothe converge    --config FILE --out DIR [--halvings N] [--dt X]

Exit codes: 0 success, 1 a check failed, 2 budget or floor stop, 3 solver
failure, 4 no certified cell, 5 an assumption fails, 7 inconclusive study,
64 bad usage or config, 66 missing input.
"""

import argparse
import copy
import os
import sys
import time

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from . import convergence as conv
from . import estimates as est
from . import feasibility as fz
from . import io
from .config import ConfigError, from_dict, load
from .model import ModelError
from .stepper import (BUDGET_H1, BUDGET_L2, PHI_FLOOR, REACHED_TMAX, SOLVER_FAILURE,
                      monitor_claim, run)

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_STOP = 2
EXIT_SOLVER = 3
EXIT_EMPTY = 4
EXIT_ASSUMPTION = 5
EXIT_INCONCLUSIVE = 7
EXIT_USAGE = 64
EXIT_NOINPUT = 66

STOP_CODES = {REACHED_TMAX: EXIT_OK, BUDGET_L2: EXIT_STOP, BUDGET_H1: EXIT_STOP,
              PHI_FLOOR: EXIT_STOP, SOLVER_FAILURE: EXIT_SOLVER}


class UsageError(Exception):
    pass


class InputMissing(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _say(msg):
    print(msg, file=sys.stderr)


def _raster(text):
    try:
        w, h = text.lower().split("x")
        w, h = int(w), int(h)
    except ValueError:
        raise UsageError("--raster expects WxH, got %r" % text)
    if w < 1 or h < 1:
        raise UsageError("--raster cells must be positive")
    return w, h


def _read_eta_file(path):
    if not os.path.exists(path):
        raise InputMissing("eta file %s not found" % path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("%s: %s" % (path, exc))
    data = data.get("estimates", data)
    data = data.get("eta", data)
    for k, v in data.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError("%s: eta %s must be a positive number" % (path, k))
    return dict(data)


def _load_config(args):
    """Config with command line overrides folded into the raw table."""
    path = args.config
    if path is None:
        raise UsageError("--config is required")
    if not os.path.exists(path) and path not in ("stationary", "smooth", "decoupled",
                                                  "phifloor", "budget", "broken_A"):
        raise InputMissing("config %s not found" % path)
    cfg = load(path)
    raw = copy.deepcopy(cfg.raw)
    changed = False
    if getattr(args, "dt", None) is not None:
        if not args.dt > 0:
            raise ConfigError("--dt: must be positive, got %r" % args.dt)
        raw.setdefault("run", {})["dt"] = args.dt
        raw.setdefault("feasibility", {})["dt"] = args.dt
        changed = True
    if getattr(args, "stride", None) is not None:
        if args.stride < 1:
            raise ConfigError("--stride: must be at least 1")
        raw.setdefault("run", {})["stride"] = args.stride
        changed = True
    if getattr(args, "eta_file", None):
        raw.setdefault("estimates", {}).setdefault("eta", {}).update(_read_eta_file(args.eta_file))
        changed = True
    if changed:
        cfg = from_dict(raw, cfg.base_dir, cfg.source)
    return cfg


def _out_dir(args):
    if not args.out:
        raise UsageError("--out is required")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _ledger(cfg, horizon, V, dt, grid=True):
    spec, r = cfg.spec, cfg.run
    eta = est.EtaConfig(spec.gamma, cfg.eta)
    if cfg.tune:
        eta, _ = est.tune_eta(spec, eta, horizon, V, r.phi_min, dt=dt)
    return est.build_ledger(spec, eta, horizon, V, r.phi_min, dt=dt,
                            grid=r.grid if grid else None)


def _manifest(cfg, command, **extra):
    out = {"command": command, "version": __version__, "config": cfg.raw,
           "config_source": cfg.source, "base_dir": cfg.base_dir,
           "t0": cfg.run.t0, "dt": cfg.run.dt, "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    out.update(extra)
    return out


# ---------------------------------------------------------------- commands

def cmd_run(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    try:
        traj = run(cfg.spec, cfg.run)
    except ModelError as exc:
        raise ConfigError(str(exc))
    snaps = io.write_snapshots(traj, out, cfg.run.grid.z, cfg.stride)
    claim = monitor_claim(traj, cfg.run)
    io.write_csv(os.path.join(out, "claim.csv"),
                 ["k", "t", "sum_l2", "sum_h1", "margin_l2", "margin_h1", "phi_lo", "phi_hi",
                  "margin_floor", "margin_ceiling", "ok"], claim.rows)
    figs = []
    try:
        from . import plotting
        figs = plotting.run_figures(traj, cfg, out)
    except Exception as exc:  # figures are a convenience, never fatal
        _say("warning: figures not written: %s" % exc)
    paths = ["claim.csv", "snapshots/index.csv"] + ["snapshots/" + s for s in snaps]
    io.write_json(os.path.join(out, "manifest.json"), _manifest(
        cfg, "run", stop_reason=traj.stop_reason, message=traj.message, T_dt=traj.T_dt,
        sum_l2=traj.sum_l2[-1], sum_h1=traj.sum_h1[-1], n_slices=len(traj.slices),
        stride=cfg.stride, flags=traj.flags, claim_passed=claim.passed,
        outputs=paths + [os.path.basename(f) for f in figs]))
    print("stop_reason=%s T=%.17g slices=%d sum_l2=%.6g sum_h1=%.6g V^2=%.6g"
          % (traj.stop_reason, traj.T_dt, len(traj.slices), traj.sum_l2[-1],
             traj.sum_h1[-1], cfg.run.V**2))
    if traj.message:
        _say(traj.message)
    return STOP_CODES.get(traj.stop_reason, EXIT_CHECK)


def cmd_audit(args):
    run_dir = args.run_dir or args.out
    if not run_dir:
        raise UsageError("audit needs a run directory")
    mpath = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(mpath):
        raise InputMissing("no manifest.json in %s" % run_dir)
    man = io.read_json(mpath)
    try:
        traj = io.trajectory_from_snapshots(run_dir, man)
    except io.SnapshotError as exc:
        raise InputMissing(str(exc))
    raw = copy.deepcopy(man["config"])
    if args.eta_file:
        raw.setdefault("estimates", {}).setdefault("eta", {}).update(_read_eta_file(args.eta_file))
    cfg = from_dict(raw, man.get("base_dir"), man.get("config_source", ""))
    if len(traj.slices) < 2:
        raise InputMissing("audit needs at least two slices, found %d" % len(traj.slices))
    r = cfg.run
    led = _ledger(cfg, r.t_max - r.t0, r.V, r.dt)
    energy = est.audit_energy(traj, led)
    rows = list(energy.rows)
    cols = ["k", "t", "id", "lhs", "rhs", "margin", "allow", "ok"]
    io.write_csv(os.path.join(run_dir, "audit_margins.csv"), cols, rows)
    certified = True
    try:
        dom = est.check_dominance(traj, led)
        io.write_csv(os.path.join(run_dir, "audit_dominance.csv"), cols, dom.rows)
        th = est.audit_solvability(traj, led, r.V, r.phi_min)
        io.write_csv(os.path.join(run_dir, "audit_solvability.csv"), ["id", "ratio", "bound", "ok"],
                     th.rows)
    except est.EstimateError as exc:
        certified = False
        dom = None
        _say("a-priori bounds unavailable: %s" % exc)
    io.write_json(os.path.join(run_dir, "ledger.json"), led.summary())
    try:
        from . import plotting
        plotting.audit_figure(energy, run_dir)
        if dom is not None:
            plotting.audit_figure(dom, run_dir, "dominance.png")
    except Exception as exc:
        _say("warning: figures not written: %s" % exc)
    bad = energy.failures + (dom.failures if dom is not None else [])
    print("audit: %d energy rows, %d failing; dominance %s"
          % (len(energy.rows), len(energy.failures),
             "n/a" if dom is None else "%d rows, %d failing" % (len(dom.rows), len(dom.failures))))
    for b in bad[:10]:
        _say("  fail k=%s %s lhs=%.6g rhs=%.6g" % (b["k"], b["id"], b["lhs"], b["rhs"]))
    return EXIT_OK if not bad and certified else EXIT_CHECK


def cmd_feasibility(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    f = dict(cfg.feasibility)
    if args.raster:
        f["raster"] = _raster(args.raster)
    r = cfg.run
    dt = f["dt"]
    rep, led = fz.assess(cfg.spec, _eta_for(cfg, dt), r.t_max - r.t0, r.V, r.phi_min, dt, r.grid)
    with open(os.path.join(out, "assumptions.txt"), "w") as fh:
        fh.write(str(rep) + "\n")
    io.write_json(os.path.join(out, "assumptions.json"),
                  {"records": rep.records, "values": rep.values})
    result = {"passed": rep.passed, "failures": rep.failures(), "dt": dt}
    code = EXIT_OK
    if not rep.passed:
        _say("assumption(s) failing: %s" % ", ".join(rep.failures()))
        code = EXIT_ASSUMPTION
    else:
        sample = fz.region_scan(led, dt, f["x_max"], f["y_max"], f["raster"])
        io.write_csv(os.path.join(out, "region.csv"), ["x", "y", "P_max", "Q", "inS", "inR"],
                     sample.rows())
        w = fz.find_witness(sample)
        result.update(cells_S=int(sample.in_S.sum()), cells_R=int(sample.in_R.sum()),
                      cells_both=int(sample.in_both.sum()), witness=w.__dict__)
        if w.found:
            chk = fz.recheck(led, w.x, w.y, dt)
            result["recheck"] = chk
            print("witness T-t0=%.17g V=%.17g (margins S %.3g, R %.3g)"
                  % (w.x, w.y, w.s_margin, w.r_margin))
            if not (chk["box_ok"] and chk["budget_ok"]):
                _say("witness failed the pointwise recheck")
                code = EXIT_EMPTY
        else:
            _say("no certified cell; nearest miss at T-t0=%.6g V=%.6g (margins S %.3g, R %.3g)"
                 % (w.x, w.y, w.s_margin, w.r_margin))
            code = EXIT_EMPTY
        try:
            from . import plotting
            plotting.region_figure(sample, w, out)
        except Exception as exc:
            _say("warning: figures not written: %s" % exc)
    io.write_json(os.path.join(out, "feasibility.json"), result)
    io.write_json(os.path.join(out, "manifest.json"), _manifest(cfg, "feasibility", exit=code))
    print("assumptions %s" % ("pass" if rep.passed else "FAIL: " + ", ".join(rep.failures())))
    return code


def _eta_for(cfg, dt):
    eta = est.EtaConfig(cfg.spec.gamma, cfg.eta)
    if cfg.tune:
        r = cfg.run
        eta, _ = est.tune_eta(cfg.spec, eta, r.t_max - r.t0, r.V, r.phi_min, dt=dt)
    return eta


def cmd_converge(args):
    cfg = _load_config(args)
    out = _out_dir(args)
    cv = cfg.converge
    halvings = args.halvings if args.halvings is not None else cv["halvings"]
    if halvings < 1:
        raise ConfigError("--halvings: must be at least 1")
    table = conv.cauchy_study(cfg, halvings, cv["ratio_band"])
    names = list(table.errors)
    cols = ["i", "dt", "dt_next"] + ["e_" + n for n in names] + ["ratio_" + n for n in names]
    io.write_csv(os.path.join(out, "rates.csv"), cols, table.rows())
    rc, rf, decay, reasons = conv.residual_decay(cfg, cv["n_test"])
    rows = []
    for lab, rep in (("coarse", rc), ("fine", rf)):
        for r in rep.rows():
            rows.append(dict(r, level=lab))
    io.write_csv(os.path.join(out, "residuals.csv"), ["level", "family", "kind", "max_abs"], rows)
    try:
        from . import plotting
        plotting.rates_figure(table, out)
    except Exception as exc:
        _say("warning: figures not written: %s" % exc)

    conclusive = table.conclusive and len(set(reasons)) == 1
    zero = rc.max == 0 and rf.max == 0
    decay_ok = zero or (decay == decay and decay >= cv["residual_decay"])
    io.write_json(os.path.join(out, "manifest.json"), _manifest(
        cfg, "converge", dts=table.dts, stop_reasons=table.stop_reasons, window=table.window,
        ends=table.ends, errors=table.errors, ratios=table.ratios, residual_decay=decay,
        residual_stop_reasons=list(reasons), conclusive=conclusive))
    print("errors %s" % ", ".join("%.3e" % e for e in table.errors["total"]))
    print("ratios %s" % ", ".join("%.4f" % x for x in table.ratios["total"]))
    print("residual max %.3e -> %.3e (decay %.3f)" % (rc.max, rf.max, decay))
    if not conclusive:
        _say("inconclusive: stop reasons %s, end times %s"
             % (table.stop_reasons + list(reasons), ", ".join("%.6g" % t for t in table.ends)))
        return EXIT_INCONCLUSIVE
    return EXIT_OK if table.passed and decay_ok else EXIT_CHECK


# ---------------------------------------------------------------- entry point

def build_parser():
    p = _Parser(prog="rothe", description="Rothe stepping, audits, feasibility scans "
                "and convergence studies for the mixture model.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command")

    def common(sp, dt=True):
        sp.add_argument("--config", help="TOML file or preset name")
        sp.add_argument("--out", help="output directory")
        if dt:
            sp.add_argument("--dt", type=float, help="override the time step")
        sp.add_argument("--eta-file", dest="eta_file", help="TOML table of weight overrides")

    sp = sub.add_parser("run", help="time-step a configuration")
    common(sp)
    sp.add_argument("--stride", type=int, help="keep every N-th slice")
    sp = sub.add_parser("audit", help="audit the energy inequalities of a run")
    sp.add_argument("run_dir", nargs="?")
    sp.add_argument("--out", help="run directory (alternative to the positional)")
    sp.add_argument("--eta-file", dest="eta_file")
    sp = sub.add_parser("feasibility", help="check assumptions and scan (T - t0, V)")
    common(sp)
    sp.add_argument("--raster", help="cells as WxH")
    sp = sub.add_parser("converge", help="step-halving study and weak residuals")
    common(sp)
    sp.add_argument("--halvings", type=int)
    return p


COMMANDS = {"run": cmd_run, "audit": cmd_audit, "feasibility": cmd_feasibility,
            "converge": cmd_converge}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a command is required (%s)" % " | ".join(COMMANDS))
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _say("usage error: %s" % exc)
        return EXIT_USAGE
    except ConfigError as exc:
        _say("config error: %s" % exc)
        return EXIT_USAGE
    except InputMissing as exc:
        _say("missing input: %s" % exc)
        return EXIT_NOINPUT
    except est.EstimateError as exc:
        _say("estimate error: %s" % exc)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
