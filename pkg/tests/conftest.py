import numpy as np
import pytest

from mixflow import (ElasticMixture, IdealGasMixture, PowerLawMixture,
                     SpeciesSystem, StiffenedTLogT, TLogT)


def species(n, ktheta=1.0):
    masses = {2: [1.0, 2.0], 3: [1.0, 2.0, 1.5], 4: [1.0, 2.0, 1.5, 0.8]}[n]
    return SpeciesSystem(masses=masses, ktheta=ktheta)


def all_models(n):
    """One representative of each free-energy family with N species."""
    sp = species(n)
    return [
        IdealGasMixture(species=sp, n_ref=1.3),
        ElasticMixture(species=sp, compression_modulus=2.0,
                       v_ref=np.linspace(0.8, 1.2, n),
                       volume_fn=StiffenedTLogT(stiffness=1.5)),
        PowerLawMixture(species=sp, moduli=np.linspace(0.5, 1.5, n),
                        exponents=np.linspace(1.0, 3.0, n),
                        v_ref=np.linspace(0.9, 1.1, n)),
    ]


def unit_ideal_gas(n=2):
    """Equal unit masses, n_ref = 1: the hand-computable reference model."""
    return IdealGasMixture(
        species=SpeciesSystem(masses=np.ones(n), ktheta=1.0), n_ref=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def dump_toml(raw):
    """Serialise a plain nested dict of simple values to TOML text."""
    import json

    def fmt(value):
        if isinstance(value, bool):
            return str(value).lower()
        if isinstance(value, str):
            return json.dumps(value)
        if isinstance(value, (list, tuple)):
            return "[" + ", ".join(fmt(v) for v in value) + "]"
        return repr(value)

    lines = []

    def walk(prefix, node):
        scalars = {k: v for k, v in node.items() if not isinstance(v, dict)}
        tables = {k: v for k, v in node.items() if isinstance(v, dict)}
        if scalars or not tables:
            lines.append(f"[{prefix}]")
            for key, value in scalars.items():
                lines.append(f"{key} = {fmt(value)}")
            lines.append("")
        for key, value in tables.items():
            walk(f"{prefix}.{key}", value)

    for key, value in raw.items():
        if isinstance(value, dict):
            walk(key, value)
        else:
            lines.insert(0, f"{key} = {fmt(value)}")
    return "\n".join(lines)
