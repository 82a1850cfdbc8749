#!/usr/bin/env python3
"""Scenario configuration: JSON files validated against ``scenario.schema.json``.

Every field is optional. Fields ending in ``_s`` or ``_ms`` are durations and
accept either a number in that unit or a duration string such as ``"1m 30s"``
(see :func:`oecsim.durations.parse_duration`). Unknown fields are an error.

Author, Copyright, and License
------------------------------
Copyright (c) 2023-2024 Hauke Daempfling (haukex@zero-g.net)
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
import json
import typing
import pkgutil
import warnings
from warnings import catch_warnings, simplefilter
from dataclasses import dataclass, field, fields, is_dataclass, replace
from collections.abc import Mapping, Callable, Generator
from functools import singledispatch
from typing import Any, Optional
import sys
if sys.version_info >= (3, 11):
    from typing import Self
else:  # pragma: no cover
    from typing_extensions import Self
import jschon
from igbpyutils.file import Filename
from .durations import parse_duration
from .engine import MAX_SEED
from .network import LatencyModel, TierParams
from .nodes import ChurnProcess, ServiceProfile
from .workload import TaskSpec
from .broker import DeploymentKind, SchedulingPolicy

class ConfigError(ValueError):
    """A scenario configuration problem; ``field`` is the dotted path of the offending field."""
    def __init__(self, field_path :str, msg :str):
        super().__init__(f"{field_path}: {msg}")
        self.field = field_path

@dataclass(kw_only=True, frozen=True)
class ChurnConfig:
    enabled :bool = True
    mean_uptime_s :float = 60.0
    mean_downtime_s :float = 10.0
    @property
    def process(self) -> ChurnProcess:
        return ChurnProcess(mean_uptime_s=self.mean_uptime_s, mean_downtime_s=self.mean_downtime_s)

@dataclass(kw_only=True, frozen=True)
class BrokerConfig:
    policy :SchedulingPolicy = SchedulingPolicy.NEAREST_TIER_FIRST
    monitor_interval_s :float = 1.0
    max_queue_length :int = 0

@dataclass(kw_only=True, frozen=True)
class LeaseConfig:
    duration_s :float = 30.0

@dataclass(kw_only=True, frozen=True)
class EconomicsConfig:
    base_rate :float = 1.0  # currency per minute
    base_floor :float = 1.0
    alpha :float = 0.5
    gates_supply :bool = False
    reserve_rate :float = 1.0
    spot_bidders :int = 5
    clamp_min :float = 0.1
    clamp_max :float = 10.0
    @property
    def clamp(self) -> tuple[float, float]:
        return self.clamp_min, self.clamp_max

@dataclass(kw_only=True, frozen=True)
class ScenarioConfig:
    """One experiment definition."""
    deployment :DeploymentKind = DeploymentKind.OEC_CLOUD
    zones :int = 2
    devices_per_zone :int = 10
    fogs_per_zone :int = 1
    oec_participants_per_zone :int = 3
    oec_fogs_compute :bool = False
    latency :LatencyModel = field(default_factory=LatencyModel)
    bandwidth_bytes_per_s :Optional[float] = None
    churn :ChurnConfig = field(default_factory=ChurnConfig)
    arrival_rate_per_s :float = 2.0
    horizon_s :float = 60.0
    runs :int = 100
    master_seed :int = 0
    service :ServiceProfile = field(default_factory=ServiceProfile)
    task :TaskSpec = field(default_factory=TaskSpec)
    broker :BrokerConfig = field(default_factory=BrokerConfig)
    lease :LeaseConfig = field(default_factory=LeaseConfig)
    economics :EconomicsConfig = field(default_factory=EconomicsConfig)

    @property
    def fogs_present_per_zone(self) -> int:
        return 0 if self.deployment == DeploymentKind.CLOUD_ONLY else self.fogs_per_zone
    @property
    def participants_present_per_zone(self) -> int:
        return self.oec_participants_per_zone if self.deployment == DeploymentKind.OEC_CLOUD else 0
    @property
    def churn_active(self) -> bool:
        return self.churn.enabled and self.participants_present_per_zone > 0

    def with_overrides(self, **changes) -> Self:
        return replace(self, **changes).validate()

    def validate(self) -> Self:
        def check(ok :bool, fld :str, msg :str):
            if not ok: raise ConfigError(fld, msg)
        check(self.zones >= 1, 'zones', "must be >= 1")
        for fld in ('devices_per_zone', 'fogs_per_zone', 'oec_participants_per_zone'):
            check(getattr(self, fld) >= 0, fld, "must be >= 0")
        check(self.deployment == DeploymentKind.CLOUD_ONLY or self.fogs_per_zone >= 1, 'fogs_per_zone',
              f"the {self.deployment.value} deployment needs at least one fog per zone for attachment")
        check(self.bandwidth_bytes_per_s is None or self.bandwidth_bytes_per_s > 0, 'bandwidth_bytes_per_s', "must be > 0 or null")
        check(self.arrival_rate_per_s >= 0, 'arrival_rate_per_s', "must be >= 0")
        check(self.horizon_s > 0, 'horizon_s', "must be > 0")
        check(self.runs >= 1, 'runs', "must be >= 1")
        check(0 <= self.master_seed <= MAX_SEED, 'master_seed', "must be a 64-bit unsigned integer")
        check(self.churn.mean_uptime_s > 0, 'churn.mean_uptime_s', "must be > 0")
        check(self.churn.mean_downtime_s > 0, 'churn.mean_downtime_s', "must be > 0")
        check(self.broker.monitor_interval_s > 0, 'broker.monitor_interval_s', "must be > 0")
        check(self.broker.max_queue_length >= 0, 'broker.max_queue_length', "must be >= 0")
        check(self.lease.duration_s > 0, 'lease.duration_s', "must be > 0")
        eco = self.economics
        check(eco.base_rate > 0, 'economics.base_rate', "must be > 0")
        check(eco.base_floor >= 0, 'economics.base_floor', "must be >= 0")
        check(0 < eco.alpha <= 1, 'economics.alpha', "must be in (0, 1]")
        check(eco.reserve_rate >= 0, 'economics.reserve_rate', "must be >= 0")
        check(eco.spot_bidders >= 0, 'economics.spot_bidders', "must be >= 0")
        check(eco.clamp_min > 0, 'economics.clamp_min', "must be > 0")
        check(eco.clamp_max >= eco.clamp_min, 'economics.clamp_max', "must be >= clamp_min")
        for name in ('latency', 'service', 'task'):
            try: getattr(self, name).validate()
            except ValueError as ex: raise ConfigError(name, str(ex)) from ex
        if self.deployment == DeploymentKind.OEC_CLOUD and self.oec_participants_per_zone == 0:
            if self.oec_fogs_compute:
                warnings.warn("OEC deployment without participants, only the fogs will compute")
            else:
                warnings.warn("OEC deployment without participants, all requests will go to the cloud")
        return self

    def flatten(self) -> Generator[tuple[str, str], None, None]:
        """All resolved settings as ``(dotted.name, value)`` pairs, in declaration order."""
        yield from _flatten(self, '')

def _flatten(obj, prefix :str) -> Generator[tuple[str, str], None, None]:
    for f in fields(obj):
        if not f.init: continue
        val = getattr(obj, f.name)
        key = prefix + f.name
        if is_dataclass(val):
            yield from _flatten(val, key + '.')
        elif isinstance(val, TierParams):
            yield key + '.mean_ms', repr(val.mean_ms)
            yield key + '.deviation_ms', repr(val.deviation_ms)
        elif isinstance(val, (DeploymentKind, SchedulingPolicy)):
            yield key, val.value
        elif isinstance(val, str):
            yield key, val
        elif val is None:
            yield key, 'null'
        elif isinstance(val, bool):
            yield key, 'true' if val else 'false'
        else:
            yield key, repr(val)

def _seconds(v, fld :str) -> float:
    if isinstance(v, str):
        try: return parse_duration(v, default_unit='s') / 1_000_000
        except ValueError as ex: raise ConfigError(fld, str(ex)) from ex
    return float(v)

def _millis(v, fld :str) -> float:
    if isinstance(v, str):
        try: return parse_duration(v, default_unit='ms') / 1_000
        except ValueError as ex: raise ConfigError(fld, str(ex)) from ex
    return float(v)

def _enum(cls) -> Callable[[Any, str], Any]:
    def conv(v, fld :str):
        try: return cls(v)
        except ValueError as ex: raise ConfigError(fld, f"invalid value {v!r}") from ex
    return conv

def _tier(v, fld :str) -> TierParams:
    _check_keys(v, fld, ('mean_ms', 'deviation_ms'))
    d = LatencyModel.__dataclass_fields__[fld.rsplit('.', 1)[-1]].default
    return TierParams( mean_ms = _millis(v['mean_ms'], fld+'.mean_ms') if 'mean_ms' in v else d.mean_ms,
                       deviation_ms = _millis(v['deviation_ms'], fld+'.deviation_ms') if 'deviation_ms' in v else d.deviation_ms )

def _keep(v, fld :str): return v

def _section(cls :type, converters :Mapping[str, Callable[[Any, str], Any]]) -> Callable[[Any, str], Any]:
    def conv(v :Mapping, prefix :str):
        _check_keys(v, prefix, tuple(converters))
        return cls(**{ k: converters[k](val, f"{prefix}.{k}" if prefix else k) for k, val in v.items() })
    return conv

def _check_keys(v :Mapping, prefix :str, known :tuple[str, ...]):
    if not isinstance(v, Mapping):
        raise ConfigError(prefix or '(top level)', "must be an object")
    for k in v:
        if k not in known:
            raise ConfigError(f"{prefix}.{k}" if prefix else k, "unknown field")

_from_dict = _section(ScenarioConfig, {
    'deployment': _enum(DeploymentKind),
    'zones': _keep, 'devices_per_zone': _keep, 'fogs_per_zone': _keep, 'oec_participants_per_zone': _keep,
    'oec_fogs_compute': _keep,
    'latency': _section(LatencyModel, { 'intra_zone': _tier, 'inter_zone': _tier, 'device_to_cloud': _tier,
                                        'deviation_meaning': _keep }),
    'bandwidth_bytes_per_s': lambda v, f: None if v is None else float(v),
    'churn': _section(ChurnConfig, { 'enabled': _keep, 'mean_uptime_s': _seconds, 'mean_downtime_s': _seconds }),
    'arrival_rate_per_s': lambda v, f: float(v),
    'horizon_s': _seconds, 'runs': _keep, 'master_seed': _keep,
    'service': _section(ServiceProfile, { 'solve_time_ms': _millis, 'factorization_time_ms': _millis }),
    'task': _section(TaskSpec, { 'n': _keep, 'nnz': _keep, 'payload_A_bytes': _keep, 'payload_b_bytes': _keep,
                                 'payload_x_bytes': _keep }),
    'broker': _section(BrokerConfig, { 'policy': _enum(SchedulingPolicy), 'monitor_interval_s': _seconds,
                                       'max_queue_length': _keep }),
    'lease': _section(LeaseConfig, { 'duration_s': _seconds }),
    'economics': _section(EconomicsConfig, { k: _keep for k in ('base_rate', 'base_floor', 'alpha', 'gates_supply',
                                             'reserve_rate', 'spot_bidders', 'clamp_min', 'clamp_max') }),
})

@singledispatch
def load_json(file :Filename|io.IOBase|typing.IO|bytes|bytearray):
    """Load JSON from a filename, file object, or ``bytes`` object."""
    raise TypeError(f"file must be a filename, file object, or bytes, not {file!r}")
@load_json.register(str)
@load_json.register(os.PathLike)
def _(file :Filename):
    with open(file, 'rb') as fh: return json.load(fh)
@load_json.register(io.IOBase)
@load_json.register(typing.IO)
def _(file :io.IOBase|typing.IO):
    return json.load(file)
@load_json.register(bytes)
@load_json.register(bytearray)
def _(file :bytes|bytearray):
    return json.load(io.BytesIO(file))

with catch_warnings():
    simplefilter('ignore', category=EncodingWarning)
    _catalog = jschon.create_catalog('2020-12')

def load_json_schema(file) -> jschon.JSONSchema:
    """Load a JSON Schema and check that the schema itself is valid."""
    schema = jschon.JSONSchema(load_json(file), catalog=_catalog)
    if not schema.validate().valid:
        raise RuntimeError(f"Schema {file!r} is invalid")
    return schema

_scenario_schema = load_json_schema( pkgutil.get_data('oecsim', 'scenario.schema.json') )

def schema_error_path(schema :jschon.JSONSchema, data) -> Optional[str]:
    """Validate ``data`` against ``schema``; returns ``None`` if valid, otherwise the dotted path of the deepest failure."""
    result = schema.evaluate(jschon.JSON(data))
    if result.valid: return None
    errors = result.output('basic').get('errors', [])
    locs = [ e.get('instanceLocation', '') for e in errors ]
    deepest = max(locs, key=lambda loc: loc.count('/'), default='')
    return '.'.join( p for p in deepest.split('/') if p ) or '(top level)'

def config_from_dict(d :Mapping) -> ScenarioConfig:
    """Check a JSON data structure against the schema and convert it into a validated :class:`ScenarioConfig`."""
    _from_dict_keys_only(d)
    if (path := schema_error_path(_scenario_schema, d)) is not None:
        raise ConfigError(path, "does not match the scenario schema")
    return _from_dict(d, '').validate()

def _from_dict_keys_only(d :Mapping):
    # report unknown fields by name before the schema reports them by their parent object
    _check_keys(d, '', tuple( f.name for f in fields(ScenarioConfig) ))
    for sect, cls in (('churn', ChurnConfig), ('broker', BrokerConfig), ('lease', LeaseConfig),
                      ('economics', EconomicsConfig), ('service', ServiceProfile), ('task', TaskSpec)):
        if isinstance(d.get(sect), Mapping):
            _check_keys(d[sect], sect, tuple( f.name for f in fields(cls) if f.name != 'servers' ))
    if isinstance(d.get('latency'), Mapping):
        _check_keys(d['latency'], 'latency', tuple( f.name for f in fields(LatencyModel) ))
        for tier, v in d['latency'].items():
            if isinstance(v, Mapping):
                _check_keys(v, f"latency.{tier}", ('mean_ms', 'deviation_ms'))

def load_config(file) -> ScenarioConfig:
    """Load a scenario from a JSON file (filename, file object, or ``bytes``)."""
    try:
        js = load_json(file)
    except json.JSONDecodeError as ex:
        raise ConfigError('(file)', f"invalid JSON in {file!r}: {ex}") from ex
    return config_from_dict(js)
