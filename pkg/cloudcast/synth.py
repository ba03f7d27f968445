"""
Synthetic workload traces.

A trace is a daily sinusoid on top of a base level plus AR(1) noise,
clipped at zero.  With two resources the noise innovations are drawn
with a given correlation, so that bivariate models have something to
share between the two series.
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from scipy.signal import lfilter

from .errors import ConfigError
from .ingest import WINDOW_SECONDS, TraceSeries
from .utils import read_json

POINTS_PER_DAY = 288  # five-minute windows in a day

__all__ = ['SynthSpec', 'generate_trace', 'generate_innovations',
           'load_synth_spec']


@dataclass
class SynthSpec:
    """Parameters of a synthetic trace."""

    length: int = 8352
    resources: int = 1
    daily_amplitude: float = 0.3
    ar_coefficient: float = 0.8
    noise_std: float = 0.05
    base_level: float = 1.0
    cross_correlation: float = 0.0
    seed: int = 0
    cluster_id: str = 'synth'
    resource_names: Optional[Sequence[str]] = None
    start_time: int = 0
    window_seconds: int = WINDOW_SECONDS
    period: int = field(default=POINTS_PER_DAY)

    def validate(self):
        """Raise a ConfigError unless the parameters are usable."""
        if self.length < 1:
            raise ConfigError('length must be at least 1, got %d' % (
                self.length,))
        if self.resources not in (1, 2):
            raise ConfigError('resources must be 1 or 2, got %s' % (
                self.resources,))
        if not -1 < self.ar_coefficient < 1:
            raise ConfigError(
                'AR coefficient must lie in (-1, 1), got %s' % (
                    self.ar_coefficient,))
        if self.noise_std < 0:
            raise ConfigError('noise_std must not be negative')
        if self.base_level <= 0:
            raise ConfigError('base_level must be positive')
        if not -1 <= self.cross_correlation <= 1:
            raise ConfigError('cross_correlation must lie in [-1, 1]')
        if len(self.names) != self.resources:
            raise ConfigError('need %d resource names, got %s' % (
                self.resources, ', '.join(self.names)))
        return self

    @property
    def names(self):
        if self.resource_names:
            return tuple(self.resource_names)
        return ('cpu', 'memory')[:self.resources]

    def to_dict(self):
        d = asdict(self)
        if d['resource_names'] is not None:
            d['resource_names'] = list(d['resource_names'])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError('unknown synth parameters: %s' % (
                ', '.join(unknown),))
        return cls(**d)


def generate_innovations(spec):
    """Draw the AR innovations of a trace as a length x resources matrix.

    Columns have standard deviation noise_std and, for two resources,
    the requested correlation.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    z = rng.standard_normal((spec.length, spec.resources))
    if spec.resources == 2:
        rho = spec.cross_correlation
        z[:, 1] = rho * z[:, 0] + np.sqrt(1 - rho * rho) * z[:, 1]
    return spec.noise_std * z


def generate_trace(spec):
    """Generate a synthetic trace, deterministic for a given seed."""
    innovations = generate_innovations(spec)
    noise = lfilter([1.0], [1.0, -spec.ar_coefficient], innovations, axis=0)
    t = np.arange(spec.length)
    season = spec.daily_amplitude * np.sin(2 * np.pi * t / spec.period)
    values = np.clip(spec.base_level + season[:, None] + noise, 0, None)
    timestamps = spec.start_time + t * spec.window_seconds
    return TraceSeries(spec.cluster_id, spec.names, spec.window_seconds,
                       timestamps, values)


def load_synth_spec(path, **overrides):
    """Read a SynthSpec from a JSON document."""
    d = read_json(path)
    d.update((k, v) for k, v in overrides.items() if v is not None)
    return SynthSpec.from_dict(d).validate()
