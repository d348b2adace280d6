"""Command-line entry point: ``isacsim {run,eval,baseline,plotdata,inspect}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Set ISACSIM_LOG (DEBUG, INFO, WARNING, ...) to change verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, load_config

VERBS = ("run", "eval", "baseline", "plotdata", "inspect")

log = logging.getLogger("isacsim")


class UsageError(Exception):
    pass


@dataclass
class Command:
    verb: str
    config: Optional[str] = None
    overrides: list = field(default_factory=list)
    seed: Optional[int] = None
    out: Optional[str] = None
    results: Optional[str] = None
    figure: Optional[str] = None
    checkpoint: Optional[str] = None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="isacsim", description="ISAC-assisted mixed-traffic simulator")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb, help_ in (("run", "train agents, then evaluate"),
                        ("eval", "evaluate a checkpoint on the evaluation worlds"),
                        ("baseline", "conjugate-beamforming reference run")):
        s = sub.add_parser(verb, help=help_)
        s.add_argument("--config", help="scenario JSON file (defaults apply when omitted)")
        s.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted config override, repeatable")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", default="results", help="output directory")
        if verb == "eval":
            s.add_argument("checkpoint", help="checkpoint file written by `run`")
    s = sub.add_parser("plotdata", help="emit plot series from finished runs")
    s.add_argument("--results", required=True, help="run directory, or a directory of runs for sweeps")
    s.add_argument("--figure", required=True, help="figure key")
    s.add_argument("--out", help="output CSV (default: RESULTS/plotdata/KEY.csv)")
    s = sub.add_parser("inspect", help="summarize a checkpoint")
    s.add_argument("checkpoint")
    return p


def parse_args(argv: Sequence[str]) -> Command:
    ns = build_parser().parse_args(list(argv))
    cmd = Command(verb=ns.verb)
    for name in ("config", "overrides", "seed", "out", "results", "figure", "checkpoint"):
        if hasattr(ns, name) and getattr(ns, name) is not None:
            setattr(cmd, name, getattr(ns, name))
    if cmd.config is not None and not Path(cmd.config).is_file():
        raise UsageError(f"config file {cmd.config} not found")
    return cmd


def _config(cmd: Command):
    return load_config(cmd.config, cmd.overrides, cmd.seed)


def execute(cmd: Command) -> int:
    from . import io as sio
    from .plotdata import PlotDataError, write_plotdata
    from .simulator import (IsacEnv, baseline_beamforming_run, evaluate, make_agents,
                            run_experiment, schedule_for, _write_outputs)

    if cmd.verb == "inspect":
        for line in sio.summarize_checkpoint(cmd.checkpoint):
            print(line)
        return 0
    if cmd.verb == "plotdata":
        try:
            path = write_plotdata(cmd.results, cmd.figure, cmd.out)
        except PlotDataError as exc:
            if "unknown figure key" in str(exc):
                raise UsageError(str(exc)) from exc
            raise
        print(path)
        return 0
    cfg = _config(cmd)
    out = Path(cmd.out)
    if cmd.verb == "run":
        res = run_experiment(cfg, out)
    elif cmd.verb == "baseline":
        res = baseline_beamforming_run(cfg, out)
    else:
        env = IsacEnv(cfg)
        agents = make_agents(env, cfg.seed)
        header, nets = sio.load_checkpoint(cmd.checkpoint)
        sio.restore_agents(agents, nets)
        env.restore_selection(header["extra"].get("selection", {}))
        recs = evaluate(env, agents, schedule_for(cfg), cfg.timing.eval_episodes)
        _write_outputs(out, env, [], recs, [])
        res = None
    (out / "run.json").write_text(json.dumps({"kind": cmd.verb, "seed": cfg.seed}) + "\n")
    recs = res.evaluation if res is not None else recs
    for r in recs:
        print(f"eval episode {r.episode}: mean TTC {r.mean_ttc:.3f} s, CR ratio {r.cr_ratio:.3f}, "
              f"CRB(theta) {r.mean_crb_theta:.3e}, CRB(d) {r.mean_crb_d:.3e}")
    print(f"outputs in {out}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("ISACSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    argv = sys.argv[1:] if argv is None else argv
    try:
        cmd = parse_args(argv)
        return execute(cmd)
    except (UsageError, ConfigError) as exc:
        print(f"isacsim: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report, don't dump a traceback
        log.debug("failure", exc_info=True)
        print(f"isacsim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
