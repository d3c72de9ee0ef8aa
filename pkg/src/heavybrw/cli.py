"""Command line entry point: ``heavybrw <command> --config PATH [--seed S] [--threads N] [--out DIR]``.

Exit codes: 0 success, 2 invalid configuration or model, 3 too many replicas
hit the population cap (partial artifacts are kept), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from heavybrw import experiments as ex
from heavybrw.branching import ModelError, validate_model
from heavybrw.config import ConfigError, ExperimentConfig, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAP = 3
EXIT_IO = 4

log = logging.getLogger("heavybrw")


class CapAbort(RuntimeError):
    pass


def write_csv(path: Path, rows: list[dict], cfg: ExperimentConfig, columns: list[str] | None = None):
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_sha256: {cfg.hash}\n# seed: {cfg.seed}\n")
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_json(path: Path, payload, cfg: ExperimentConfig):
    doc = {"provenance": cfg.provenance(), "data": payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_validate(cfg, args):
    report = validate_model(cfg.bmodel)
    write_json(cfg.output / "validate.json", report, cfg)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK if report["ok"] else EXIT_CONFIG


def _check_cap(cfg, aborted: int, total: int):
    if total and aborted / total > cfg.run.cap_tolerance:
        raise CapAbort(f"{aborted} of {total} replicas exceeded the population cap "
                       f"(tolerance {cfg.run.cap_tolerance})")


def cmd_simulate(cfg, args):
    batch = ex.simulate(cfg, args.threads)
    write_csv(cfg.output / "replicas.csv", batch.rows, cfg)
    write_json(cfg.output / "summary.json", ex.simulate_summary(cfg, batch), cfg)
    _check_cap(cfg, batch.aborted, len(batch.rows))
    return EXIT_OK


def cmd_limit(cfg, args):
    rows, summary, points = ex.limit_study(cfg)
    write_csv(cfg.output / "limit_cdf.csv", rows, cfg)
    write_json(cfg.output / "limit_summary.json", summary, cfg)
    write_json(cfg.output / "limit_points.json", points, cfg)
    return EXIT_OK


def cmd_maxdist(cfg, args):
    rows, summary = ex.maxdist(cfg, args.threads)
    write_csv(cfg.output / "maxdist.csv", rows, cfg)
    write_json(cfg.output / "maxdist.json", summary, cfg)
    print(f"KS={summary['ks']:.4f} threshold={summary['threshold']} "
          f"{'pass' if summary['pass'] else 'fail'}")
    _check_cap(cfg, summary["aborted"], summary["aborted"] + summary["replicas"])
    return EXIT_OK


def cmd_onejump(cfg, args):
    rows, summary = ex.onejump(cfg, args.threads)
    write_csv(cfg.output / "onejump.csv", rows, cfg)
    write_json(cfg.output / "onejump.json", summary, cfg)
    _check_cap(cfg, summary["aborted"], cfg.run.replicas * len(cfg.run.n_grid))
    return EXIT_OK


def cmd_convergence(cfg, args):
    rows, summary = ex.convergence(cfg, args.threads)
    write_csv(cfg.output / "convergence.csv", rows, cfg,
              ["n", "K", "B", "f_id", "mean_abs_gap", "stderr"])
    write_json(cfg.output / "convergence.json", summary, cfg)
    return EXIT_OK


def cmd_superpose(cfg, args):
    rows, summary = ex.superpose(cfg)
    write_csv(cfg.output / "superpose.csv", rows, cfg)
    write_json(cfg.output / "superpose.json", summary, cfg)
    print(f"KS={summary['ks']:.4f} threshold={summary['threshold']} "
          f"{'pass' if summary['pass'] else 'fail'}")
    return EXIT_OK


COMMANDS = {
    "validate": (cmd_validate, "check the branching assumptions"),
    "simulate": (cmd_simulate, "grow replicas and write per-replica rows"),
    "limit": (cmd_limit, "sample the limit process; kappa and the limit CDF of the maximum"),
    "maxdist": (cmd_maxdist, "scaled maximum against its limit law (KS)"),
    "onejump": (cmd_onejump, "one-large-jump diagnostics over the n grid"),
    "convergence": (cmd_convergence, "cut and prune gap study on explicit trees"),
    "superpose": (cmd_superpose, "superposition stability of the limit process"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heavybrw", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML or JSON experiment file")
        p.add_argument("--seed", type=int, default=None, help="64-bit seed (overrides the file)")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("--out", default=None, help="output directory (else $HEAVYBRW_OUT, the file, or ./out)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg.output.mkdir(parents=True, exist_ok=True)
        log.info("config %s seed %d -> %s", cfg.hash[:12], cfg.seed, cfg.output)
        return COMMANDS[args.command][0](cfg, args)
    except CapAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except ValueError as exc:  # parameters that only fail once a study starts
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
