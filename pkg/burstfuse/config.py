"""
Configuration - key-value config files, environment and CLI overrides
Precedence: defaults < $BURSTFUSE_CONFIG < --config file < command-line flags
"""
import os
import logging
import typing
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Optional

from burstfuse.errors import UsageError, InputError

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = 'BURSTFUSE_CONFIG'
CACHE_ENV_VAR = 'BURSTFUSE_CACHE_DIR'

# Tuning fields that, when set, override the SNR-driven values
TUNING_KEYS = (
    'tile_size', 'k_detail', 'k_denoise', 'd_th', 'd_tr',
    'k_stretch', 'k_shrink', 't', 's1', 's2', 'm_th',
)

_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


@dataclass(frozen=True)
class Config:
    """Every tunable of the pipeline; None tuning fields defer to tuning_for_snr"""
    # TuningParams overrides
    tile_size: Optional[int] = None
    k_detail: Optional[float] = None
    k_denoise: Optional[float] = None
    d_th: Optional[float] = None
    d_tr: Optional[float] = None
    k_stretch: Optional[float] = None
    k_shrink: Optional[float] = None
    t: Optional[float] = None
    s1: Optional[float] = None
    s2: Optional[float] = None
    m_th: Optional[float] = None

    # Alignment defaults
    pyramid_levels: int = 4
    search_radius: int = 4
    lk_iterations: int = 3

    # Merge
    zoom: float = 1.0
    alignment: str = 'auto'
    frame_cap: int = 15
    kernel: str = 'aniso'
    finish: bool = False
    hf_loss_threshold: float = 0.5

    # Feature switches
    robustness: bool = True
    noise_model: bool = True
    motion_prior: bool = True
    hf_reject: bool = True

    # Noise calibration
    noise_bins: int = 64
    noise_samples: int = 100_000
    noise_seed: int = 0
    cache_dir: Optional[str] = None

    # Execution
    threads: int = 0
    debug_robustness: Optional[str] = None
    debug_kernels: Optional[str] = None

    def tuning_overrides(self) -> Dict[str, Any]:
        """Return only the tuning fields that were explicitly set"""
        return {key: getattr(self, key) for key in TUNING_KEYS if getattr(self, key) is not None}

    def worker_threads(self) -> int:
        """Resolved thread count (0 means available parallelism)"""
        if self.threads and self.threads > 0:
            return self.threads
        return os.cpu_count() or 1

    def resolved_cache_dir(self) -> str:
        if self.cache_dir:
            return self.cache_dir
        return os.getenv(CACHE_ENV_VAR) or os.path.join(os.path.expanduser('~'), '.cache', 'burstfuse')


def _field_types() -> Dict[str, Any]:
    hints = typing.get_type_hints(Config)
    return {f.name: hints[f.name] for f in fields(Config)}


def _coerce(key: str, raw: Any, target: Any) -> Any:
    """Coerce a raw value (usually a string) to the declared field type"""
    optional = False
    if typing.get_origin(target) is typing.Union:
        args = [a for a in typing.get_args(target) if a is not type(None)]
        optional = True
        target = args[0]

    if raw is None:
        if optional:
            return None
        raise UsageError(f"config key '{key}' may not be empty")

    if isinstance(raw, str):
        text = raw.strip()
        if optional and text.lower() in ('', 'none', 'auto'):
            return None
        if target is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise UsageError(f"config key '{key}' expects a boolean, got '{raw}'")
        try:
            return target(text)
        except ValueError:
            raise UsageError(f"config key '{key}' expects {target.__name__}, got '{raw}'")

    if target is float and isinstance(raw, int) and not isinstance(raw, bool):
        return float(raw)
    if not isinstance(raw, target) or (target is int and isinstance(raw, bool)):
        raise UsageError(f"config key '{key}' expects {target.__name__}, got {type(raw).__name__}")
    return raw


def parse_config_text(text: str, source: str = '<string>') -> Dict[str, Any]:
    """
    Parse key=value lines into typed overrides

    Args:
        text: file contents; blank lines and '#' comments are ignored
        source: name used in error messages

    Returns:
        Dict of field name -> typed value
    """
    types = _field_types()
    values: Dict[str, Any] = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise UsageError(f"{source}:{line_no}: expected key=value, got '{line}'")
        key, raw = (part.strip() for part in line.split('=', 1))
        key = key.replace('-', '_')
        if key not in types:
            raise UsageError(f"{source}:{line_no}: unknown config key '{key}'")
        values[key] = _coerce(key, raw, types[key])
    return values


def read_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            text = handle.read()
    except OSError as e:
        raise InputError(f"cannot read config file {path}: {e}")
    return parse_config_text(text, source=path)


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> Config:
    """
    Build the effective Config

    Args:
        path: --config file (applied after $BURSTFUSE_CONFIG)
        overrides: command-line values; None entries mean "flag not given"

    Returns:
        Frozen Config
    """
    config = Config()

    env_path = os.getenv(CONFIG_ENV_VAR)
    if env_path:
        logger.debug(f"Loading config from ${CONFIG_ENV_VAR}={env_path}")
        config = replace(config, **read_config_file(env_path))

    if path:
        logger.debug(f"Loading config from {path}")
        config = replace(config, **read_config_file(path))

    if overrides:
        types = _field_types()
        typed = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in types:
                raise UsageError(f"unknown config key '{key}'")
            typed[key] = _coerce(key, value, types[key])
        config = replace(config, **typed)

    validate_config(config)
    return config


def validate_config(config: Config):
    """Range checks that a type check cannot express"""
    if config.alignment not in ('auto', 'oracle', 'csv'):
        raise UsageError(f"alignment must be auto, oracle or csv (got '{config.alignment}')")
    if config.kernel not in ('aniso', 'iso'):
        raise UsageError(f"kernel must be aniso or iso (got '{config.kernel}')")
    if config.zoom < 1.0:
        raise UsageError(f"zoom must be >= 1 (got {config.zoom})")
    if config.frame_cap < 1:
        raise UsageError("frame_cap must be >= 1")
    if config.pyramid_levels < 1:
        raise UsageError("pyramid_levels must be >= 1")
    if config.search_radius < 0 or config.lk_iterations < 0:
        raise UsageError("search_radius and lk_iterations must be >= 0")
    if config.noise_bins < 16:
        raise UsageError("noise_bins must be >= 16")
    if config.noise_samples < 10_000:
        raise UsageError("noise_samples must be >= 10000")
    for key, value in config.tuning_overrides().items():
        if value <= 0:
            raise UsageError(f"tuning value '{key}' must be positive (got {value})")
