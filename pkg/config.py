#!/usr/bin/env python3
"""
Run Configuration
Environment defaults, logging setup and the validated JSON run configuration
"""

import logging
import math
import os
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError

# Process-level defaults
OUTPUT_DIR = os.environ.get('SCREEN_BEM_OUTPUT_DIR', 'results')
LOG_LEVEL = os.environ.get('SCREEN_BEM_LOG_LEVEL', 'INFO')
THREADS = int(os.environ.get('SCREEN_BEM_THREADS', '1'))
DENSE_CAP = int(os.environ.get('SCREEN_BEM_DENSE_CAP', '6000'))
CACHE_DIR = os.environ.get('SCREEN_BEM_CACHE_DIR') or None

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

FACE_NAMES = ('+x', '-x', '+y', '-y', '+z', '-z')

logger = logging.getLogger(__name__)


def setup_logging(level=None):
    """Configure root logging once, from the process entry point only"""
    level = (level or LOG_LEVEL).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)


def as_complex(pair):
    return complex(pair[0], pair[1])


def as_pair(value):
    value = complex(value)
    return (value.real, value.imag)


class QuadratureSettings(BaseModel):
    model_config = ConfigDict(extra='forbid')

    regular_order: int = Field(4, ge=1)
    singular_order: int = Field(6, ge=1)
    separation_ratio: float = Field(2.0, gt=0)


class GmresSettings(BaseModel):
    model_config = ConfigDict(extra='forbid')

    rel_tol: float = Field(1e-8, gt=0, lt=1)
    restart: int = Field(200, ge=1)
    max_iterations: int = Field(2000, ge=1)


class GridSettings(BaseModel):
    """Cube-face sampling of the field"""
    model_config = ConfigDict(extra='forbid')

    side: float = Field(1.4, gt=0)
    n: int = Field(20, ge=2)
    standoff: float = Field(1e-6, gt=0)
    faces: list[Literal['+x', '-x', '+y', '-y', '+z', '-z']] = Field(default_factory=lambda: list(FACE_NAMES))

    @field_validator('faces')
    @classmethod
    def faces_distinct(cls, faces):
        if not faces:
            raise ValueError('at least one face is required')
        if len(set(faces)) != len(faces):
            raise ValueError('faces must be distinct')
        return faces


class StudySettings(BaseModel):
    """Prefractal-to-reference convergence study"""
    model_config = ConfigDict(extra='forbid')

    j_min: int = Field(1, ge=0)
    j_max: int = Field(3, ge=0)
    j_ref: int = Field(4, ge=1)
    k_list: list[float] = Field(default_factory=lambda: [5.0])
    # impedances scale with k: lambda = factor * k
    lambda_plus_factor: tuple[float, float] = (1.5, 1.5)
    lambda_minus_factor: tuple[float, float] = (1.0, 1.0)

    @field_validator('k_list')
    @classmethod
    def positive_wavenumbers(cls, k_list):
        if not k_list or any(k <= 0 for k in k_list):
            raise ValueError('study wavenumbers must be positive')
        return k_list

    @model_validator(mode='after')
    def reference_above_levels(self):
        if self.j_ref <= self.j_max:
            raise ValueError(f'j_ref ({self.j_ref}) must exceed j_max ({self.j_max})')
        return self

    def levels(self):
        return list(range(min(self.j_min, self.j_max), self.j_max + 1))


class RunConfig(BaseModel):
    """Everything one run of the pipeline needs; complex values are [re, im] pairs"""
    model_config = ConfigDict(extra='forbid')

    family: Literal['koch', 'square'] = 'koch'
    beta: float = Field(math.pi / 6.0, gt=0, lt=math.pi / 2.0)
    level: int = Field(2, ge=0)
    refinement: int = Field(1, ge=1)
    k: float = Field(5.0, ge=0)
    direction: tuple[float, float, float] = (1.0 / math.sqrt(3.0), 1.0 / math.sqrt(3.0), -1.0 / math.sqrt(3.0))
    lambda_plus: tuple[float, float] = (7.5, 7.5)
    lambda_minus: tuple[float, float] = (5.0, 5.0)
    quadrature: QuadratureSettings = Field(default_factory=QuadratureSettings)
    gmres: GmresSettings = Field(default_factory=GmresSettings)
    grid: GridSettings = Field(default_factory=GridSettings)
    study: StudySettings = Field(default_factory=StudySettings)
    output_dir: str = OUTPUT_DIR
    mode: Literal['fast', 'dense'] = 'fast'
    threads: int = Field(THREADS, ge=1)

    @field_validator('direction')
    @classmethod
    def normalise_direction(cls, d):
        norm = math.sqrt(sum(c * c for c in d))
        if norm == 0.0 or not math.isfinite(norm):
            raise ValueError('incident direction must be a finite non-zero vector')
        if abs(norm - 1.0) > 1e-12:
            d = tuple(c / norm for c in d)
        return d

    @field_validator('lambda_plus', 'lambda_minus')
    @classmethod
    def absorbing(cls, pair):
        if pair[1] < 0:
            raise ValueError('impedance must have nonnegative imaginary part')
        return pair

    @model_validator(mode='after')
    def impedance_sum_nonzero(self):
        if abs(as_complex(self.lambda_plus) + as_complex(self.lambda_minus)) == 0.0:
            raise ValueError('lambda_plus + lambda_minus must be non-zero')
        return self

    @property
    def lambda_plus_complex(self):
        return as_complex(self.lambda_plus)

    @property
    def lambda_minus_complex(self):
        return as_complex(self.lambda_minus)

    @property
    def output_path(self):
        return Path(self.output_dir)


def load_config(path=None, **overrides):
    """Read a JSON run configuration; no path means all defaults"""
    try:
        if path is None:
            cfg = RunConfig()
        else:
            cfg = RunConfig.model_validate_json(Path(path).read_text())
        if overrides:
            cfg = RunConfig.model_validate({**cfg.model_dump(), **overrides})
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
    except OSError as e:
        raise ConfigError(f"Cannot read configuration {path}: {str(e)}") from e
    logger.debug(f"Configuration loaded from {path or 'defaults'}")
    return cfg
