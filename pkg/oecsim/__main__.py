#!/usr/bin/env python3
"""Command-line interface of the simulator.

Exit codes: 0 on success, 1 on a configuration or input error, 2 on an I/O error.

Author, Copyright, and License
------------------------------
Copyright (c) 2024 Hauke Daempfling (haukex@zero-g.net)
at the Leibniz Institute of Freshwater Ecology and Inland Fisheries (IGB),
Berlin, Germany, https://www.igb-berlin.de/

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License
along with this program. If not, see https://www.gnu.org/licenses/
"""
import sys
import json
import argparse
from collections.abc import Sequence
from typing import Optional
from .config import ConfigError, load_config, load_json, config_from_dict
from .broker import DeploymentKind
from .kernel import SingularMatrixError, TripletFormatError, MAX_CALIBRATION_N, read_triplets, calibrate_service_time
from .harness import run_scenario, emit_csv, compare_deployments, COMPARISON_CSV

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='oecsim', description='Opportunistic Edge Computing Simulator')
    parser.add_argument('-q', '--quiet', help="less output", action="store_true")
    subparsers = parser.add_subparsers(dest='cmd', required=True)

    parser_run = subparsers.add_parser('run', help='run a scenario')
    parser_run.add_argument('-c', '--config', help="scenario file (JSON)", required=True)
    parser_run.add_argument('-s', '--seed', help="override the master seed", type=int)
    parser_run.add_argument('-r', '--runs', help="override the number of runs", type=int)
    parser_run.add_argument('-t', '--threads', help="number of worker processes", type=int)
    parser_run.add_argument('-o', '--out', help="output directory", required=True)

    parser_cmp = subparsers.add_parser('compare', help='compare deployments')
    parser_cmp.add_argument('-c', '--config', help="scenario file (JSON)", required=True)
    parser_cmp.add_argument('-d', '--deployments', help="comma-separated deployments", default="cloud,fog,oec")
    parser_cmp.add_argument('-s', '--seed', help="override the master seed", type=int)
    parser_cmp.add_argument('-r', '--runs', help="override the number of runs", type=int)
    parser_cmp.add_argument('-t', '--threads', help="number of worker processes", type=int)
    parser_cmp.add_argument('-o', '--out', help="output directory", required=True)

    parser_cal = subparsers.add_parser('calibrate', help='measure the service times of the solver kernel')
    parser_cal.add_argument('-n', '--n', help="matrix size", type=int, default=147)
    parser_cal.add_argument('-r', '--reps', help="repetitions", type=int, default=20)
    parser_cal.add_argument('-m', '--matrix', help="use this matrix (coordinate triplets) instead of a random one")
    parser_cal.add_argument('-c', '--config', help="write the result into this scenario file")

    parser_val = subparsers.add_parser('validate', help='check a scenario file')
    parser_val.add_argument('-c', '--config', help="scenario file (JSON)", required=True)
    return parser

def _load(args :argparse.Namespace):
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None: overrides['master_seed'] = args.seed
    if args.runs is not None: overrides['runs'] = args.runs
    return cfg.with_overrides(**overrides) if overrides else cfg

def _calibrate(args :argparse.Namespace):
    if args.matrix is None and not 1 <= args.n <= MAX_CALIBRATION_N:
        raise ConfigError('--n', f"must be between 1 and {MAX_CALIBRATION_N}")
    if args.reps < 5:
        raise ConfigError('--reps', "need at least 5 repetitions")
    matrix = None if args.matrix is None else read_triplets(args.matrix)
    prof = calibrate_service_time(args.n, args.reps, matrix=matrix)
    service = { 'solve_time_ms': prof.solve_time_ms, 'factorization_time_ms': prof.factorization_time_ms }
    if args.config is None:
        print(json.dumps({ 'service': service }, indent=2))
        return
    data = load_json(args.config)
    if not isinstance(data, dict):
        raise ConfigError('(top level)', "must be an object")
    data['service'] = service
    config_from_dict(data)
    with open(args.config, 'w', encoding='UTF-8', newline='\n') as fh:
        json.dump(data, fh, indent=2)
        print(file=fh)
    if not args.quiet:
        print(f"Wrote solve_time_ms={prof.solve_time_ms:.4f} factorization_time_ms={prof.factorization_time_ms:.4f} "
              f"to {args.config}", file=sys.stderr)

def main(argv :Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == 'run':
            cfg = _load(args)
            report = run_scenario(cfg, threads=args.threads, progress=not args.quiet)
            paths = emit_csv(report, args.out)
            if not args.quiet:
                s = report.summary
                print(f"Done, {s.runs} runs with {s.requests} requests, wrote {len(paths)} files to {args.out}", file=sys.stderr)
        elif args.cmd == 'compare':
            cfg = _load(args)
            try:
                kinds = [ DeploymentKind.from_string(k) for k in args.deployments.split(',') ]
            except ValueError as ex:
                raise ConfigError('--deployments', str(ex)) from ex
            table = compare_deployments(cfg, kinds, out_dir=args.out, threads=args.threads, progress=not args.quiet)
            if not args.quiet:
                print(table.to_string(), file=sys.stderr)
                print(f"Done, wrote {COMPARISON_CSV} to {args.out}", file=sys.stderr)
        elif args.cmd == 'calibrate':
            _calibrate(args)
        elif args.cmd == 'validate':
            cfg = load_config(args.config)
            if not args.quiet: print(f"{args.config}: OK ({cfg.deployment.value}, {cfg.runs} runs)", file=sys.stderr)
        else:  # pragma: no cover
            raise RuntimeError(repr(args.cmd))
    except (ConfigError, TripletFormatError, SingularMatrixError) as ex:
        print(f"Error: {ex}", file=sys.stderr)
        return 1
    except OSError as ex:
        print(f"I/O Error: {ex}", file=sys.stderr)
        return 2
    return 0

if __name__ == '__main__':  # pragma: no cover
    sys.exit(main())
