"""Command line entry point: ``dcacsi <command> ...``.

Exit status: 0 success, 1 a check did not pass, 2 configuration error,
3 I/O or file-format error, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import channel_gen as cg
from . import evaluate as ev
from . import pipeline
from . import preprocess as pp
from .config import ConfigError, RunConfig, load_config, parse_config
from .nn_core import NonFiniteError
from .scenet import SCEnet, model_grad_check
from .training import Checkpoint, CheckpointError, derive_seed

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3, 4
GRADCHECK_TOL = 1e-3

log = logging.getLogger("dcacsi")


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value
    return out


def _config(args, **flags) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    values = {k: str(v) for k, v in flags.items() if v is not None}
    values.update(_overrides(args.set))
    return cfg.with_overrides(values).validate()


def _write_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(text)
    os.replace(tmp, path)


def _csv(cfg_hash: str, header: str, rows) -> str:
    lines = [f"# config_hash={cfg_hash}", header]
    lines += [",".join(str(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _config(args, scenario=args.scenario, count=args.count, seed=args.seed)
    ds = pipeline.generate(cfg)
    if args.domain == "delay":
        ds = pipeline.to_delay_dataset(ds, cfg)
    cg.save_dataset(ds, args.out)
    print(f"wrote {ds.count} x {ds.n_antennas} x {ds.width} {ds.domain}-domain samples "
          f"({ds.n_train}/{ds.n_val}/{ds.n_test}) to {args.out} config_hash={cfg.config_hash()}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = cg.load_dataset(args.data)
    out = Path(args.out)
    resume = None
    previous = []
    if args.resume:
        resume = Checkpoint.load(out / "last.ckpt")
        if resume.config.arch_hash() != cfg.model.arch_hash():
            raise ConfigError("checkpoint in --out was written for a different architecture")
        report_path = out / "report.csv"
        if report_path.exists():
            # keep rows up to the resumed epoch; header and hash lines come first
            lines = report_path.read_text().splitlines()[2:]
            previous = [ln for ln in lines if int(ln.split(",", 1)[0]) <= resume.epoch]
    run = pipeline.run_training(cfg, ds, out_dir=out, resume=resume)
    body = run.report.to_csv(cfg.s).splitlines()
    text = "\n".join([f"# config_hash={cfg.config_hash()}", body[0]] + previous + body[1:]) + "\n"
    _write_atomic(out / "report.csv", text)
    last = run.report.rows[-1] if run.report.rows else None
    if last is not None:
        nmse = " ".join(f"CR{2 ** i}={v:.2f}dB" for i, v in enumerate(last[3], start=1))
        print(f"epoch {last[0]} loss {last[1]:.4e} {nmse} best_epoch={run.report.best_epoch}")
    print(f"outputs in {out} config_hash={cfg.config_hash()}")
    return EXIT_OK


def _checkpoint_config(ckpt: Checkpoint) -> RunConfig:
    return parse_config(ckpt.meta["config"]) if "config" in ckpt.meta else RunConfig()


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.model)
    cfg = _checkpoint_config(ckpt)
    if args.config or args.set:
        cfg = _config(args)
        if cfg.model.arch_hash() != ckpt.config.arch_hash():
            raise ConfigError("checkpoint architecture does not match the configuration")
    if "norm_scale" not in ckpt.meta:
        raise ConfigError("checkpoint carries no normalization scale")
    ds = cg.load_dataset(args.data)
    if ds.domain != "frequency" or ds.width != cfg.n_f:
        raise ConfigError("eval needs a full-band frequency-domain dataset")
    samples = ds.split(args.split) if ds.n_train + ds.n_val + ds.n_test else ds.samples
    if len(samples) == 0:
        raise ConfigError(f"split {args.split!r} is empty")
    model = ckpt.model()
    scale = pp.NormScale(ckpt.meta["norm_scale"])
    counts = [int(x) for x in args.antennas.split(",")] if args.antennas else [cfg.n_a]
    h = pipeline.pilot_channels(samples, cfg)
    try:
        results = ev.scalability_eval(model, h, scale, counts, cfg.scenario)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = []
    for n_a, res in results.items():
        for cr, lin, db in zip(res.compression_ratios, res.linear, res.db):
            rows.append((n_a, cr, f"{lin:.6e}", f"{db:.4f}"))
            print(f"N_a={n_a} CR={cr} NMSE={db:.2f} dB")
    _write_atomic(args.out, _csv(cfg.config_hash(), "n_a,cr,nmse_linear,nmse_db", rows))
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _config(args)
    ds = cg.load_dataset(args.data)
    h = pipeline.delay_channels(ds, cfg, ds.n_antennas)
    geom = cfg.geometry
    if geom.n_antennas != ds.n_antennas:
        geom = cg.ArrayGeometry(ds.n_antennas, 1, cfg.spacing)
    try:
        report = ev.correlation_report(h, geom)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = [("beam_corr", m, n, f"{v:.6f}") for (m, n), v in np.ndenumerate(report.beam_corr)]
    rows += [("delay_corr", a, lag, f"{v:.6f}")
             for (a, lag), v in np.ndenumerate(report.delay_curves)]
    _write_atomic(args.out, _csv(cfg.config_hash(), "kind,row,col,value", rows))
    print(f"mean off-diagonal beam correlation {report.mean_off_diagonal:.4f}")
    print(f"min pairwise delay-curve similarity {report.min_similarity:.4f}")
    return EXIT_OK


def cmd_count(args) -> int:
    cfg = _config(args)
    model = SCEnet(cfg.model)
    print("part,params,flops")
    for part, (params, flops) in model.complexity().items():
        print(f"{part},{params},{flops}")
    print(f"# config_hash={cfg.config_hash()}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    model = SCEnet(cfg.model, seed=derive_seed(cfg.seed, "init"), dtype=np.float64)
    rng = np.random.default_rng(derive_seed(cfg.seed, "gradcheck"))
    x = rng.standard_normal((args.batch, cfg.k, cfg.n_t))
    err = model_grad_check(model, x, np.asarray(cfg.rate_weights), eps=args.eps)
    ok = err <= args.tol
    print(f"max relative error {err:.3e} ({'pass' if ok else 'FAIL'} at {args.tol:g}) "
          f"config_hash={cfg.config_hash()}")
    return EXIT_OK if ok else EXIT_FAILED


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcacsi", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, config_help="run configuration file (key = value lines)"):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help=config_help)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.set_defaults(func=func)
        return p

    p = add("gen", cmd_gen, "generate a synthetic channel dataset")
    p.add_argument("--scenario", choices=("indoor", "outdoor"))
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--domain", choices=("frequency", "delay"), default="frequency",
                   help="store full-band CSI or truncated delay-domain CSI")
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train a model; writes best.ckpt, last.ckpt and report.csv "
            "(columns epoch,loss,nmse_cr2,...; NMSE in dB on the validation split)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", action="store_true", help="continue from OUT/last.ckpt")

    p = add("eval", cmd_eval, "score a checkpoint; CSV columns n_a,cr,nmse_linear,nmse_db",
            config_help="optional; must describe the checkpoint's architecture")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="full-band dataset file")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--antennas", help="comma-separated antenna counts, e.g. 8,16,32")

    p = add("analyze", cmd_analyze, "beam and delay correlation report; CSV columns "
            "kind,row,col,value with kind beam_corr (row, col = beams) or delay_corr "
            "(row = antenna, col = tap lag)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    add("count", cmd_count, "print parameter and FLOP counts per network part")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of the full network")
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, cg.DatasetFormatError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
