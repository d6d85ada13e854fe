"""Experiment configuration: JSON with a versioned schema, unknown keys rejected."""
from __future__ import annotations

import json
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt

SCHEMA = "qpkam/1"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Mode(_Strict):
    k: List[int]
    value: List[List[float]] | float          # 2x2 real matrix, or a scalar


class RandomMap(_Strict):
    N: PositiveInt = 3
    size: float = Field(1e-4, ge=0)
    r: float = Field(0.05, ge=0)
    decay: PositiveFloat = 0.5


class GenericFamily(_Strict):
    kind: Literal["generic"]
    omega: List[float] = [1.0, (5 ** 0.5 - 1) / 2]
    interval: Tuple[float, float] = (0.5, 3.5)
    random: Optional[RandomMap] = RandomMap()
    modes: List[Mode] = []


class SchrodingerFamily(_Strict):
    kind: Literal["schrodinger"]
    omega: List[float] = [1.0, (5 ** 0.5 - 1) / 2]
    interval: Tuple[float, float] = (1.0, 4.0)
    q: List[Mode] = []


class AmoFamily(_Strict):
    kind: Literal["amo"]
    lam: float = 0.3
    alpha: float = (5 ** 0.5 - 1) / 2
    interval: Tuple[float, float] = (0.2, 1.2)
    N_embed: PositiveInt = 16


class ForwardFamily(_Strict):
    """System built from a random Z and a constant B, reducible to B by construction."""
    kind: Literal["forward"]
    omega: List[float] = [1.0, (5 ** 0.5 - 1) / 2]
    Z: RandomMap = RandomMap(N=2, size=1e-2, r=0.0)
    B: List[List[float]] = [[0.1, 0.5], [-0.4, -0.1]]
    N_out: PositiveInt = 24


class ParabolicModel(_Strict):
    """Explicit parabolic normal form xi' = kappa x (no KAM involved)."""
    kind: Literal["parabolic"]
    kappa: float = 1.0


Family = Annotated[Union[GenericFamily, SchrodingerFamily, AmoFamily, ForwardFamily,
                         ParabolicModel], Field(discriminator="kind")]


class Window(_Strict):
    k_max: PositiveInt = 3
    half_width: PositiveFloat = 2e-5
    n: PositiveInt = 41


class Grid(_Strict):
    start: float
    stop: float
    n: PositiveInt = 201
    windows: Optional[Window] = None


class KamSpec(_Strict):
    eps0: Optional[PositiveFloat] = None
    sigma: PositiveFloat = 1.0 / 33.0
    r0: float = Field(0.05, ge=0)
    max_steps: PositiveInt = 20
    stop_tol: PositiveFloat = 1e-12
    N_cap: PositiveInt = 64
    N_table: PositiveInt = 24
    eta: Optional[PositiveFloat] = None


class SweepSpec(_Strict):
    method: Optional[Literal["flow", "kam", "discrete"]] = None
    k_max: PositiveInt = 3
    plateau_tol: PositiveFloat = 1e-6
    T: PositiveFloat = 2000.0
    tol: PositiveFloat = 1e-6
    N: PositiveInt = 100_000
    mono_tol: PositiveFloat = 1e-7


class QuantumSpec(_Strict):
    s: List[float] = [1.0]
    N_trunc: PositiveInt = 512
    dt: Optional[PositiveFloat] = None
    T: PositiveFloat = 20.0
    n_samples: PositiveInt = 201
    initial_mode: Optional[int] = None
    initial_beta: Tuple[float, float] = (0.0, 1.0)


class EmbedSpec(_Strict):
    nu: float = 0.13
    mu: List[float] = [(5 ** 0.5 - 1) / 2]
    G: RandomMap = RandomMap(N=3, size=1e-3, r=0.0)
    h: float = Field(0.0, ge=0)
    tol: PositiveFloat = 1e-10
    N: Optional[PositiveInt] = None
    max_iter: PositiveInt = 30


class ExperimentConfig(_Strict):
    schema_: Literal["qpkam/1"] = Field(SCHEMA, alias="schema")
    seed: int = 0
    jobs: PositiveInt = 1
    family: Optional[Family] = None
    energy: Optional[float] = None
    grid: Optional[Grid] = None
    kam: KamSpec = KamSpec()
    sweep: SweepSpec = SweepSpec()
    quantum: QuantumSpec = QuantumSpec()
    embed: EmbedSpec = EmbedSpec()

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.model_validate(json.load(fh))

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return self.model_copy(update=kw) if kw else self

    def dump(self):
        return self.model_dump(mode="json", by_alias=True)
