#!/usr/bin/env python3
"""Repeated seeded runs of a scenario, metrics aggregation, and CSV output.

Every run of a scenario is independent, so runs may be executed in parallel in
worker processes; the environment variable ``OECSIM_THREADS`` caps the number of
workers (all CPUs if it is unset). Results are always ordered by run index, so
the output files don't depend on the execution order.

Means and variances are over the individual upload and processing times of a
run; variances are population variances. The aggregates in ``summary.csv`` are
pooled over all runs: the mean is the mean of the per-run means weighted by
their sample counts, the variance is the pooled population variance
``Σ nᵢ·(varᵢ + (meanᵢ − mean)²) / Σ nᵢ``. A mean or variance without any samples
is written as an empty cell.

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
import io
import os
import math
import hashlib
from pathlib import Path
from itertools import repeat
from functools import cached_property
from dataclasses import dataclass
from collections.abc import Sequence, Iterable
from concurrent.futures import ProcessPoolExecutor
from typing import NamedTuple, Optional
import numpy as np
import pandas
from tqdm import tqdm
from more_itertools import unique_everseen
from igbpyutils.file import Filename
from .broker import DeploymentKind
from .config import ScenarioConfig, ConfigError
from .simulation import RunResult, run_once

THREADS_ENV = 'OECSIM_THREADS'

RUNS_CSV = 'runs.csv'
REQUESTS_CSV = 'requests.csv'
SUMMARY_CSV = 'summary.csv'
REWARDS_CSV = 'rewards.csv'
LEDGER_CSV = 'ledger.csv'
META_TXT = 'meta.txt'
CHECKSUMS = 'checksums.sha512'
COMPARISON_CSV = 'comparison.csv'

class RunMetrics(NamedTuple):
    """One row of ``runs.csv``."""
    run_index :int
    deployment :str
    seed :int
    requests :int
    mean_upload_ms :float
    var_upload_ms :float
    mean_processing_ms :float
    var_processing_ms :float
    retries :int
    disconnects :int
    broken_leases :int
    credited_currency :float

class SummaryRow(NamedTuple):
    """One row of ``summary.csv``."""
    deployment :str
    runs :int
    requests :int
    uploads :int
    mean_upload_ms :float
    var_upload_ms :float
    mean_processing_ms :float
    var_processing_ms :float
    retries :int
    disconnects :int
    runs_with_disconnects :int
    broken_leases :int
    credited_currency :float

REQUEST_COLUMNS = ('run_index', 'request_id', 'device_id', 'created_at_us', 'completed_at_us', 'processing_ms',
                   'served_by', 'tier', 'retries')
REWARD_COLUMNS = ('run_index', 'deployment', 'time_s', 'zone_id', 'supply_rps', 'demand_rps', 'reward_rate',
                  'spot_floor', 'spot_accepted', 'spot_revenue')
LEDGER_COLUMNS = ('run_index', 'deployment', 'node_id', 'balance')

def _mean_var(values_ms :np.ndarray) -> tuple[float, float]:
    if not len(values_ms):
        return math.nan, math.nan
    return float(np.mean(values_ms)), float(np.var(values_ms))

def pooled(counts :Sequence[int], means :Sequence[float], variances :Sequence[float]) -> tuple[float, float]:
    """Pool per-group means and population variances; groups with a count of zero are ignored."""
    groups = [ (n, m, v) for n, m, v in zip(counts, means, variances, strict=True) if n ]
    total = sum( n for n, _, _ in groups )
    if not total:
        return math.nan, math.nan
    mean = math.fsum( n*m for n, m, _ in groups ) / total
    var = math.fsum( n*(v + (m-mean)**2) for n, m, v in groups ) / total
    return mean, var

def run_metrics(result :RunResult) -> RunMetrics:
    uploads = np.array(list(result.upload_times_us.values()), dtype=float) / 1000
    processing = np.array([ o.processing_time_us for o in result.outcomes ], dtype=float) / 1000
    mean_up, var_up = _mean_var(uploads)
    mean_proc, var_proc = _mean_var(processing)
    return RunMetrics(
        run_index = result.run_index,
        deployment = result.deployment.value,
        seed = result.seed,
        requests = len(result.outcomes),
        mean_upload_ms = mean_up,
        var_upload_ms = var_up,
        mean_processing_ms = mean_proc,
        var_processing_ms = var_proc,
        retries = result.retries,
        disconnects = len(result.disconnects),
        broken_leases = result.broken_leases,
        credited_currency = result.credited_currency )

@dataclass(kw_only=True)
class MetricsReport:
    """The results of all runs of one scenario, ordered by run index."""
    cfg :ScenarioConfig
    results :list[RunResult]

    @property
    def deployment(self) -> DeploymentKind:
        return self.cfg.deployment

    @property
    def uploads_per_run(self) -> int:
        return self.cfg.zones * self.cfg.devices_per_zone

    @cached_property
    def runs(self) -> list[RunMetrics]:
        return [ run_metrics(r) for r in self.results ]

    @cached_property
    def summary(self) -> SummaryRow:
        runs = self.runs
        up_n = [ self.uploads_per_run ] * len(runs)
        mean_up, var_up = pooled(up_n, [ r.mean_upload_ms for r in runs ], [ r.var_upload_ms for r in runs ])
        mean_proc, var_proc = pooled([ r.requests for r in runs ], [ r.mean_processing_ms for r in runs ],
                                     [ r.var_processing_ms for r in runs ])
        return SummaryRow(
            deployment = self.deployment.value,
            runs = len(runs),
            requests = sum( r.requests for r in runs ),
            uploads = sum(up_n),
            mean_upload_ms = mean_up,
            var_upload_ms = var_up,
            mean_processing_ms = mean_proc,
            var_processing_ms = var_proc,
            retries = sum( r.retries for r in runs ),
            disconnects = sum( r.disconnects for r in runs ),
            runs_with_disconnects = sum( 1 for r in runs if r.disconnects ),
            broken_leases = sum( r.broken_leases for r in runs ),
            credited_currency = math.fsum( r.credited_currency for r in runs ) )

    def runs_frame(self) -> pandas.DataFrame:
        return pandas.DataFrame(self.runs, columns=RunMetrics._fields)

    def summary_frame(self) -> pandas.DataFrame:
        return pandas.DataFrame([self.summary], columns=SummaryRow._fields)

    def requests_frame(self) -> pandas.DataFrame:
        return pandas.DataFrame(
            [ ( r.run_index, o.request_id, o.device_id, o.created_at, o.completed_at, o.processing_time_ms,
                o.served_by, o.tier.label, o.retries ) for r in self.results for o in r.outcomes ],
            columns=REQUEST_COLUMNS )

    def rewards_frame(self) -> pandas.DataFrame:
        return pandas.DataFrame(
            [ ( r.run_index, r.deployment.value, p.at / 1_000_000, p.zone_id, p.supply_rps, p.demand_rps, p.reward_rate,
                p.spot_floor, p.spot_accepted, p.spot_revenue ) for r in self.results for p in r.reward_series ],
            columns=REWARD_COLUMNS )

    def ledger_frame(self) -> pandas.DataFrame:
        return pandas.DataFrame(
            [ ( r.run_index, r.deployment.value, node, bal ) for r in self.results
              for node, bal in sorted(r.ledger.balances.items()) ],
            columns=LEDGER_COLUMNS )

def thread_count(runs :int, threads :Optional[int] = None) -> int:
    """The number of worker processes: ``threads`` if given, else ``$OECSIM_THREADS``, else all CPUs; at most ``runs``."""
    if threads is None:
        env = os.environ.get(THREADS_ENV, '').strip()
        if env:
            try:
                threads = int(env)
            except ValueError as ex:
                raise ConfigError(THREADS_ENV, f"not an integer: {env!r}") from ex
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise ConfigError(THREADS_ENV, "must be >= 1")
    return max(1, min(threads, runs))

def run_scenario(cfg :ScenarioConfig, *, threads :Optional[int] = None, progress :bool = False) -> MetricsReport:
    """Execute ``cfg.runs`` independent runs and collect their results."""
    cfg.validate()
    workers = thread_count(cfg.runs, threads)
    desc = f"Running {cfg.deployment.value}..."
    if workers == 1:
        results = [ run_once(cfg, i) for i in tqdm(range(cfg.runs), desc=desc, unit=" runs", disable=not progress) ]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(tqdm( ex.map(run_once, repeat(cfg), range(cfg.runs)),
                                 total=cfg.runs, desc=desc, unit=" runs", disable=not progress ))
    return MetricsReport(cfg=cfg, results=results)

def _write_csv(df :pandas.DataFrame, path :Path, **kwargs):
    df.to_csv(path, lineterminator='\n', na_rep='', **kwargs)

def sha512_file(file :Filename) -> str:
    h = hashlib.sha512()
    with open(file, 'rb') as fh:
        while chunk := fh.read(io.DEFAULT_BUFFER_SIZE):
            h.update(chunk)
    return h.hexdigest()

def write_checksums(out_dir :Path, names :Iterable[str]) -> Path:
    """Write a ``sha512sum``-compatible manifest of the given files."""
    path = out_dir/CHECKSUMS
    with open(path, 'w', encoding='UTF-8', newline='\n') as fh:
        for name in names:
            print(f"{sha512_file(out_dir/name)} *{name}", file=fh)
    return path

def meta_lines(cfg :ScenarioConfig) -> list[str]:
    """The resolved configuration, plus the fixed modeling choices, as ``key = value`` lines."""
    lines = [ f"{k} = {v}" for k, v in cfg.flatten() ]
    lines += [
        "rng.generator = numpy PCG64",
        "rng.stream_seed = SeedSequence(entropy=master_seed, spawn_key=sha256(label) as 8 little-endian 32-bit words)",
        "rng.run_seed = first 64-bit word of the stream run<i>",
        "routing = requests are placed by the broker, the random attachment only builds the tree",
        "time.resolution = 1us, durations rounded half up",
        "variance = population",
        f"summary.uploads_per_run = {cfg.zones * cfg.devices_per_zone}",
    ]
    return lines

def emit_csv(report :MetricsReport, out_dir :Filename) -> list[Path]:
    """Write the report's CSV files, ``meta.txt``, and ``checksums.sha512`` into ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    path = out
    try:
        out.mkdir(parents=True, exist_ok=True)
        csvs = { RUNS_CSV: report.runs_frame(), REQUESTS_CSV: report.requests_frame(), SUMMARY_CSV: report.summary_frame(),
                 REWARDS_CSV: report.rewards_frame(), LEDGER_CSV: report.ledger_frame() }
        paths :list[Path] = []
        for name, df in csvs.items():
            path = out/name
            _write_csv(df, path, index=False)
            paths.append(path)
        path = out/META_TXT
        with open(path, 'w', encoding='UTF-8', newline='\n') as fh:
            for line in meta_lines(report.cfg):
                print(line, file=fh)
        paths.append(path)
        path = out/CHECKSUMS
        paths.append(write_checksums(out, csvs))
    except OSError as ex:
        raise OSError(ex.errno, ex.strerror or str(ex), str(path)) from ex
    return paths

COMPARISON_ROWS = ('runs', 'requests', 'mean_upload_ms', 'var_upload_ms', 'mean_processing_ms', 'var_processing_ms',
                   'retries', 'disconnects', 'runs_with_disconnects', 'broken_leases', 'credited_currency')

def compare_deployments(base_cfg :ScenarioConfig, kinds :Sequence[DeploymentKind], *, out_dir :Optional[Filename] = None,
                        threads :Optional[int] = None, progress :bool = False) -> pandas.DataFrame:
    """Run the scenario once per deployment kind, with the same master seed, and tabulate the aggregates.

    The table has one row per metric and one column per entry in ``kinds``, in
    order. If ``out_dir`` is given, each deployment's output goes into
    ``<out_dir>/<position>-<kind>/`` and the table into ``comparison.csv``."""
    if not kinds:
        raise ValueError("need at least one deployment kind")
    reports = { k: run_scenario(base_cfg.with_overrides(deployment=k), threads=threads, progress=progress)
                for k in unique_everseen(kinds) }
    table = pandas.DataFrame(
        [ [ getattr(reports[k].summary, m) for k in kinds ] for m in COMPARISON_ROWS ],
        index=pandas.Index(COMPARISON_ROWS, name='metric'), columns=[ k.value for k in kinds ] )
    if out_dir is not None:
        out = Path(out_dir)
        for pos, k in enumerate(kinds, start=1):
            emit_csv(reports[k], out/f"{pos}-{k.value}")
        path = out/COMPARISON_CSV
        try:
            _write_csv(table, path)
        except OSError as ex:
            raise OSError(ex.errno, ex.strerror or str(ex), str(path)) from ex
    return table
