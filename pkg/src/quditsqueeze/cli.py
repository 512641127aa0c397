"""Command-line front end tying the modules into reproducible runs.

Every command reads one INI config (defaults if omitted), writes its
outputs under --out, and appends each emitted file with a sha256 digest to
manifest.json there.  Outputs carry no timestamps, so identical configs
produce identical digests.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import metrology as mt
from .config import RunConfig, config_hash, load_config, serialize_config
from .debaseline import DeConfig, optimize_rx_schedule
from .env import ACTION_TABLE, EnvConfig, action_label
from .hyperfine import AtomParams, fit_at_field
from .metrics import to_db
from .ppo import (PpoConfig, evaluate_greedy, load_checkpoint, save_checkpoint,
                  train)
from .protocol import (align_to_y, fidelity_study, oat_benchmark,
                       scripted_protocol, tact_benchmark)
from .spin import build_spin_ops, css_x, parse_spin
from .wigner import wigner_map


class CliError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class OutputBundle:
    def __init__(self, out_dir: str, run_id: str, cfg_hash: str):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "run_id": run_id,
            "config_hash": cfg_hash,
            "build_stamp": "quditsqueeze-0.1.0",
            "files": {},
        }

    def write_text(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.write_text(text)
        self.manifest["files"][name] = _sha256(path)
        return path

    def write_json(self, name: str, payload) -> Path:
        return self.write_text(name, json.dumps(payload, indent=2, sort_keys=True))

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        buf = []
        buf.append(",".join(header))
        for row in rows:
            buf.append(",".join(repr(v) if isinstance(v, float) else str(v)
                               for v in row))
        return self.write_text(name, "\n".join(buf) + "\n")

    def finalize(self) -> Path:
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(self.manifest, indent=2, sort_keys=True))
        return path


def _load(args) -> RunConfig:
    if args.config:
        try:
            cfg = load_config(args.config)
        except FileNotFoundError:
            raise CliError("CONFIG_MISSING", f"config file not found: {args.config}")
        except (KeyError, ValueError) as exc:
            raise CliError("CONFIG_INVALID", str(exc))
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _bundle(cfg: RunConfig, command: str) -> OutputBundle:
    chash = config_hash(cfg)
    return OutputBundle(cfg.out_dir, run_id=f"{command}-{chash}-s{cfg.seed}",
                        cfg_hash=chash)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_benchmark(args) -> int:
    cfg = _load(args)
    ops = build_spin_ops(cfg.environment.f)
    chi = cfg.metrology.chi_rad_per_s
    oat = oat_benchmark(ops, chi=chi)
    tact = tact_benchmark(ops, chi=chi)
    bundle = _bundle(cfg, "benchmark")
    payload = {
        "f": ops.f,
        "oat": {"t_min_s": oat.t_min, "chi_t_min": chi * oat.t_min,
                "xi2_min": oat.xi2_min, "xi2_min_db": oat.xi2_db},
        "tact": {"t_min_s": tact.t_min, "chi_t_min": chi * tact.t_min,
                 "xi2_min": tact.xi2_min, "xi2_min_db": tact.xi2_db},
    }
    bundle.write_json("benchmark.json", payload)
    bundle.finalize()
    print(f"OAT  min xi^2 = {oat.xi2_db:+.4f} dB at chi*t = {chi * oat.t_min:.6f}")
    print(f"TACT min xi^2 = {tact.xi2_db:+.4f} dB at chi*t = {chi * tact.t_min:.6f}")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    bundle = _bundle(cfg, "train")
    log_path = bundle.dir / "training_log.jsonl"
    nets, rows = train(cfg.environment, cfg.ppo, cfg.seed, log_path=log_path)
    bundle.manifest["files"]["training_log.jsonl"] = _sha256(log_path)
    ckpt = bundle.dir / "checkpoint.json"
    save_checkpoint(ckpt, nets, cfg.environment, cfg.ppo, cfg.seed)
    bundle.manifest["files"]["checkpoint.json"] = _sha256(ckpt)
    bundle.finalize()
    last = rows[-1] if rows else {}
    print(f"trained {last.get('env_steps', 0)} env steps; "
          f"checkpoint at {ckpt}")
    return 0


def _episode_from_checkpoint(args, cfg: RunConfig):
    if not args.checkpoint:
        raise CliError("CHECKPOINT_REQUIRED",
                       "this command needs --checkpoint PATH (produce one with `train`)")
    try:
        nets, env_cfg, payload = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise CliError("CHECKPOINT_MISSING",
                       f"checkpoint not found: {args.checkpoint} (produce one with `train`)")
    if args.transfer_f is not None:
        env_cfg.f = parse_spin(args.transfer_f)
        env_cfg.xi2_ref_db = "auto"
    elif env_cfg.f != cfg.environment.f:
        raise CliError(
            "SPIN_MISMATCH",
            f"checkpoint was trained at f={env_cfg.f}, config wants f={cfg.environment.f}; "
            "pass --transfer-f to run it anyway (observations are dimension-normalized)")
    return evaluate_greedy(nets, env_cfg), env_cfg


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    record, env_cfg = _episode_from_checkpoint(args, cfg)
    bundle = _bundle(cfg, "evaluate")
    rows = []
    for k in range(env_cfg.n_steps):
        rows.append((k + 1, (k + 1) * env_cfg.chi_dt, record.actions[k],
                     action_label(record.actions[k]),
                     to_db(record.xi2[k]) if np.isfinite(record.xi2[k]) else "inf",
                     to_db(record.xi2_y[k]) if np.isfinite(record.xi2_y[k]) else "inf"))
    bundle.write_csv("episode.csv",
                     ["step", "chi_t", "action", "label", "xi2_db", "xi2_y_db"], rows)
    post = record.post_hit_xi2_y()
    summary = {
        "f": env_cfg.f,
        "k_star": record.k_star,
        "min_xi2_db": to_db(record.min_xi2),
        "post_kstar_mean_xi2_y_db": to_db(float(post.mean())) if post.size else None,
        "actions": record.actions,
    }
    bundle.write_json("episode_summary.json", summary)
    if args.wigner_steps:
        ops = build_spin_ops(env_cfg.f)
        for step in args.wigner_steps:
            if not 1 <= step <= env_cfg.n_steps:
                raise CliError("BAD_STEP", f"wigner step {step} outside 1..{env_cfg.n_steps}")
            wmap = wigner_map(record.states[step - 1], ops)
            bundle.write_csv(f"wigner_step{step}.csv", ["theta", "phi", "w"],
                             wmap.to_rows())
    bundle.finalize()
    print(f"k_star={record.k_star} min xi^2 = {to_db(record.min_xi2):+.3f} dB; "
          f"post-hit mean xi_y^2 = "
          f"{to_db(float(post.mean())) if post.size else float('nan'):+.3f} dB")
    return 0


def _scripted_put(cfg: RunConfig, ops):
    chi = cfg.metrology.chi_rad_per_s
    sp = scripted_protocol(ops, chi_dt=cfg.environment.chi_dt,
                           n_steps=cfg.environment.n_steps)
    dt = cfg.environment.chi_dt / chi
    return mt.ProtocolUnderTest(tag="rl-stabilized", probe=sp.probe_state,
                                t_p=sp.prep_steps * dt), sp


def cmd_metrology(args) -> int:
    cfg = _load(args)
    ops = build_spin_ops(cfg.environment.f)
    field = mt.FieldParams(gamma=cfg.metrology.gamma_rad_per_s_per_t,
                           b0=cfg.metrology.b0_tesla,
                           chi=cfg.metrology.chi_rad_per_s)
    dt = cfg.environment.chi_dt / field.chi

    if args.scripted or not args.checkpoint:
        if not args.scripted:
            raise CliError("CHECKPOINT_REQUIRED",
                           "metrology needs --checkpoint PATH (from `train`) "
                           "or --scripted for the reference protocol")
        put_rl, _ = _scripted_put(cfg, ops)
    else:
        record, env_cfg = _episode_from_checkpoint(args, cfg)
        put_rl = mt.protocol_from_episode(record.actions, record.states,
                                          record.k_star, ops, dt)
    if cfg.metrology.encode_parity == "auto":
        put_rl.parity = mt.select_parity(put_rl.probe, field, ops, dt)
    else:
        put_rl.parity = int(cfg.metrology.encode_parity)

    tact = tact_benchmark(ops, chi=field.chi)
    _, aligned = align_to_y(tact.state, ops)
    put_free = mt.ProtocolUnderTest(tag="free-qze", probe=aligned, t_p=tact.t_min)

    n_dd = max(8, int(np.ceil(0.12 / cfg.environment.chi_dt)))
    de_cfg = DeConfig(population=cfg.de.population, mutation=cfg.de.mutation,
                      crossover=cfg.de.crossover, generations=cfg.de.generations,
                      seed=cfg.seed)
    schedule, _ = optimize_rx_schedule(aligned, ops, field.chi, dt, n_dd, de_cfg)
    put_dd = mt.ProtocolUnderTest(tag="rx-dd", probe=aligned, t_p=tact.t_min,
                                  rx_schedule=schedule)

    n_max = int(np.floor(cfg.metrology.t_tot_max_s / dt))
    bundle = _bundle(cfg, "metrology")

    gain_rows = {}
    curves = {}
    for put in (put_rl, put_free, put_dd):
        # the DD baseline is only defined over its optimized horizon
        n_hi = min(n_max, n_dd) if put.tag == "rx-dd" else n_max
        n_gain = min(n_hi, int(0.35 / cfg.environment.chi_dt))
        gain_rows[put.tag] = mt.phase_gain_curve(put, field, ops, dt,
                                                 range(1, n_gain + 1))
        curves.update(mt.sensitivity_sweep([put], field, ops, dt,
                                           range(1, n_hi + 1)))

    plot_rows = []
    for tag, rows in gain_rows.items():
        for chi_te, gain in rows:
            plot_rows.append((chi_te, gain, f"phase-gain:{tag}"))
    for tag, curve in curves.items():
        for t_tot, dphi, db, ratio_db in curve.rows:
            plot_rows.append((t_tot, ratio_db, f"field-ratio-db:{tag}"))
    bundle.write_csv("plot_data.csv", ["x", "y", "series"], plot_rows)

    for tag, curve in curves.items():
        bundle.write_csv(
            f"sensitivity_{tag}.csv",
            ["t_tot_s", "delta_phi_rad", "delta_b_t_per_sqrt_hz", "sql_ratio_db"],
            curve.rows)
    summary = {
        tag: {
            "t_p_s": curve.t_p,
            "sql_crossing_s": curve.sql_crossing,
            "delta_b_at_30ms": _delta_b_at(curve, 0.030),
        } for tag, curve in curves.items()
    }
    bundle.write_json("metrology_summary.json", summary)
    bundle.finalize()
    rl = curves["rl-stabilized"]
    cross = rl.sql_crossing
    print(f"rl-stabilized SQL crossing at T_tot = "
          f"{cross * 1e3 if cross else float('nan'):.2f} ms; "
          f"deltaB(30 ms) = {(_delta_b_at(rl, 0.030) or float('nan')) * 1e12:.2f} pT/sqrt(Hz)")
    return 0


def _delta_b_at(curve: mt.SensitivityCurve, t_tot: float):
    arr = curve.as_arrays()
    if arr.shape[1] == 0:
        return None
    idx = int(np.argmin(np.abs(arr[0] - t_tot)))
    return float(arr[2][idx])


def cmd_hyperfine(args) -> int:
    cfg = _load(args)
    hf = cfg.hyperfine
    params = AtomParams(i=hf.nuclear_spin, j=hf.electronic_j, a_hz=hf.a_hz,
                        b_hz=hf.b_hz, g_j=hf.g_j, g_i=hf.g_i)
    rows = []
    fields = [hf.b_field_tesla * s for s in (0.2, 0.5, 1.0, 1.5, 2.0)]
    for b in fields:
        fit, _ = fit_at_field(params, b)
        rows.append((b, fit.omega_l, fit.chi, fit.residual_rms_hz))
    bundle = _bundle(cfg, "hyperfine")
    bundle.write_csv("hyperfine.csv",
                     ["b_tesla", "omega_l_rad_per_s", "chi_rad_per_s",
                      "fit_residual_rms_hz"], rows)
    bundle.finalize()
    fit, _ = fit_at_field(params, hf.b_field_tesla)
    print(f"B = {hf.b_field_tesla * 1e6:.1f} uT: Omega_L/2pi = "
          f"{fit.omega_l / 2 / np.pi / 1e3:.2f} kHz, chi/2pi = "
          f"{fit.chi / 2 / np.pi:.4f} Hz, gamma/2pi = "
          f"{fit.gamma(hf.b_field_tesla) / 2 / np.pi / 1e9:.3f} GHz/T")
    return 0


def cmd_de_optimize(args) -> int:
    cfg = _load(args)
    ops = build_spin_ops(cfg.environment.f)
    chi = cfg.metrology.chi_rad_per_s
    dt = cfg.environment.chi_dt / chi
    tact = tact_benchmark(ops, chi=chi)
    _, aligned = align_to_y(tact.state, ops)
    de_cfg = DeConfig(population=cfg.de.population, mutation=cfg.de.mutation,
                      crossover=cfg.de.crossover, generations=cfg.de.generations,
                      seed=cfg.seed)
    schedule, history = optimize_rx_schedule(aligned, ops, chi, dt, args.steps, de_cfg)
    bundle = _bundle(cfg, "de")
    bundle.write_json("rx_schedule.json", schedule.to_json())
    bundle.write_csv("de_convergence.csv", ["generation", "best_cost"],
                     list(enumerate(history)))
    bundle.finalize()
    print(f"DE best mean xi_y^2 = {history[-1]:.6f} over {args.steps} steps")
    return 0


def cmd_fidelity_study(args) -> int:
    cfg = _load(args)
    ops = build_spin_ops(cfg.environment.f)
    chi = cfg.metrology.chi_rad_per_s
    oat = oat_benchmark(ops, chi=chi)
    tact = tact_benchmark(ops, chi=chi)
    sp = scripted_protocol(ops, chi_dt=cfg.environment.chi_dt,
                           n_steps=cfg.environment.n_steps)
    refs = {
        "css_x": css_x(ops),
        "protocol_t3": sp.trajectory.states[sp.k_star],
        "oat_aligned": align_to_y(oat.state, ops)[1],
        "tact_aligned": align_to_y(tact.state, ops)[1],
    }
    times = np.linspace(0.0, 0.1 / chi, 201)
    bundle = _bundle(cfg, "fidelity")
    rows = []
    for gen in ("fy2", "fz2"):
        curves = fidelity_study(refs, gen, ops, chi, times)
        for name, vals in curves.items():
            for t, fv in zip(times, vals):
                rows.append((chi * t, fv, f"{name}:{gen}"))
    bundle.write_csv("fidelity_curves.csv", ["chi_t", "fidelity", "series"], rows)
    bundle.finalize()
    print(f"fidelity curves for {len(refs)} references under fy2/fz2 written")
    return 0


def cmd_wigner(args) -> int:
    """Wigner snapshots along an episode (checkpoint) or free QZE evolution."""
    cfg = _load(args)
    ops = build_spin_ops(cfg.environment.f)
    if args.checkpoint:
        record, env_cfg = _episode_from_checkpoint(args, cfg)
        states = record.states
        n_steps = env_cfg.n_steps
        default_steps = [n_steps // 2, n_steps]
    else:
        from .protocol import Schedule, run_schedule

        sched = Schedule([None] * cfg.environment.n_steps, chi=1.0,
                         dt=cfg.environment.chi_dt)
        states = run_schedule(css_x(ops), sched, ops).states
        n_steps = cfg.environment.n_steps
        default_steps = [max(1, n_steps // 2), n_steps]
    steps = args.wigner_steps or default_steps
    bundle = _bundle(cfg, "wigner")
    for step in steps:
        if not 1 <= step <= n_steps:
            raise CliError("BAD_STEP", f"step {step} outside 1..{n_steps}")
        wmap = wigner_map(states[step - 1], ops)
        bundle.write_csv(f"wigner_step{step}.csv", ["theta", "phi", "w"],
                         wmap.to_rows())
    bundle.finalize()
    print(f"wigner maps written for steps {list(steps)}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quditsqueeze",
        description="spin-squeezing control of a single atomic qudit under "
                    "always-on quadratic Zeeman dynamics")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")

    for name, fn in (("benchmark", cmd_benchmark), ("train", cmd_train),
                     ("hyperfine", cmd_hyperfine),
                     ("fidelity-study", cmd_fidelity_study)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("evaluate")
    common(p)
    p.add_argument("--checkpoint", required=False)
    p.add_argument("--transfer-f", default=None,
                   help="run the checkpoint at a different spin, e.g. 25/2")
    p.add_argument("--wigner-steps", type=int, nargs="*", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("metrology")
    common(p)
    p.add_argument("--checkpoint", required=False)
    p.add_argument("--transfer-f", default=None)
    p.add_argument("--scripted", action="store_true",
                   help="use the scripted reference protocol instead of a checkpoint")
    p.set_defaults(fn=cmd_metrology)

    p = sub.add_parser("de-optimize")
    common(p)
    p.add_argument("--steps", type=int, default=28,
                   help="encoding steps the R_x schedule covers")
    p.set_defaults(fn=cmd_de_optimize)

    p = sub.add_parser("wigner")
    common(p)
    p.add_argument("--checkpoint", required=False)
    p.add_argument("--transfer-f", default=None)
    p.add_argument("--wigner-steps", type=int, nargs="*", default=None)
    p.set_defaults(fn=cmd_wigner)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"ERROR:{exc.code}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
