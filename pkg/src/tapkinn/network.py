"""Micro-kinetic reaction networks with elementary mass-action rate laws.

Concentrations are in nmol/cm^3 and time in seconds throughout the package.
Gas species come first in every species ordering, followed by adspecies; the
free site is an adspecies with no elements.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

GAS = "gas"
SURFACE = "surface"


@dataclass(frozen=True)
class Species:
    name: str
    phase: str
    molar_mass: float | None = None
    elements: Mapping[str, int] = field(default_factory=dict)
    sites: int = 0

    def __post_init__(self):
        if self.phase not in (GAS, SURFACE):
            raise ValueError(f"species {self.name!r}: phase must be 'gas' or 'surface'")
        if self.phase == GAS and (self.molar_mass is None or self.molar_mass <= 0):
            raise ValueError(f"gas species {self.name!r} needs a positive molar mass")
        for el, cnt in self.elements.items():
            if int(cnt) != cnt or cnt < 0:
                raise ValueError(f"species {self.name!r}: bad count {cnt!r} for {el}")


@dataclass(frozen=True)
class ReactionNetwork:
    """Species, stoichiometry and power-law orders of a reaction mechanism.

    Attributes
    ----------
    species : tuple of Species
        Gas species first, then adspecies.
    stoich : ndarray, shape (n_species, n_reactions)
        Stoichiometry matrix; negative entries are reactants.
    exponents : ndarray, shape (n_reactions, n_species)
        Power-law order of every species in every step.
    reaction_names, rate_units : tuple of str
        Labels such as ``"k1"`` and the units of each rate constant.
    """

    species: tuple
    stoich: np.ndarray
    exponents: np.ndarray
    reaction_names: tuple
    rate_units: tuple = ()

    def __post_init__(self):
        stoich = np.array(self.stoich, dtype=float)
        exps = np.array(self.exponents, dtype=float)
        n = len(self.species)
        if stoich.ndim != 2 or stoich.shape[0] != n:
            raise ValueError(f"stoichiometry must have {n} rows")
        if exps.shape != (stoich.shape[1], n):
            raise ValueError(f"exponents must have shape {(stoich.shape[1], n)}")
        if len(self.reaction_names) != stoich.shape[1]:
            raise ValueError("one name per reaction required")
        phases = [s.phase for s in self.species]
        if SURFACE in phases and GAS in phases[phases.index(SURFACE):]:
            raise ValueError("gas species must precede adspecies")
        stoich.setflags(write=False)
        exps.setflags(write=False)
        object.__setattr__(self, "stoich", stoich)
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "reaction_names", tuple(self.reaction_names))
        units = tuple(self.rate_units) or ("",) * stoich.shape[1]
        object.__setattr__(self, "rate_units", units)

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return self.stoich.shape[1]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.species]

    @property
    def gas_index(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.species) if s.phase == GAS], dtype=int)

    @property
    def surface_index(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.species) if s.phase == SURFACE], dtype=int)

    @property
    def n_gas(self) -> int:
        return len(self.gas_index)

    @property
    def elements(self) -> list[str]:
        seen = []
        for s in self.species:
            for el in s.elements:
                if el not in seen:
                    seen.append(el)
        return seen

    @property
    def composition(self) -> np.ndarray:
        """Element composition matrix, shape (n_elements, n_species)."""
        els = self.elements
        E = np.zeros((len(els), self.n_species))
        for j, s in enumerate(self.species):
            for el, cnt in s.elements.items():
                E[els.index(el), j] = cnt
        return E

    @property
    def site_counts(self) -> np.ndarray:
        return np.array([s.sites if s.phase == SURFACE else 0 for s in self.species], dtype=float)

    @property
    def molar_masses(self) -> np.ndarray:
        return np.array([self.species[i].molar_mass for i in self.gas_index], dtype=float)

    def index(self, name: str) -> int:
        return self.names.index(name)


def _check_inputs(c, k, net):
    c = np.asarray(c, dtype=float)
    k = np.asarray(k, dtype=float)
    if c.shape[-1] != net.n_species:
        raise ValueError(f"expected {net.n_species} concentrations, got {c.shape[-1]}")
    if k.shape != (net.n_reactions,):
        raise ValueError(f"expected {net.n_reactions} rate constants, got shape {k.shape}")
    if not np.all(np.isfinite(c)) or np.any(c < 0):
        raise ValueError("concentrations must be finite and nonnegative")
    return c, k


def mass_action_terms(c, net):
    """psi(c): product of reactant concentrations raised to their orders.

    Works on a single state (n,) or a batch (..., n); returns (..., m).
    Negative inputs are not rejected here, callers inside solvers rely on that.
    """
    c = np.asarray(c, dtype=float)
    out = np.ones(c.shape[:-1] + (net.n_reactions,))
    for j in range(net.n_reactions):
        for i in np.flatnonzero(net.exponents[j]):
            out[..., j] *= c[..., i] ** net.exponents[j, i]
    return out


def elementary_rates(c, k, net):
    """Rate of every elementary step, nmol/(cm^3 s)."""
    c, k = _check_inputs(c, k, net)
    return k * mass_action_terms(c, net)


def species_rates(c, k, net):
    """Net production rate of every species, r = M (k * psi(c))."""
    return elementary_rates(c, k, net) @ net.stoich.T


def mass_action_jacobian(c, net):
    """d psi_j / d c_i for a batch of states, shape (..., m, n)."""
    c = np.asarray(c, dtype=float)
    jac = np.zeros(c.shape[:-1] + (net.n_reactions, net.n_species))
    for j in range(net.n_reactions):
        idx = np.flatnonzero(net.exponents[j])
        for i in idx:
            term = net.exponents[j, i] * c[..., i] ** (net.exponents[j, i] - 1)
            for l in idx:
                if l != i:
                    term = term * c[..., l] ** net.exponents[j, l]
            jac[..., j, i] = term
    return jac


def validate_network(net) -> list[str]:
    """Return human-readable violations of mass-action, element and site balance."""
    problems = []
    M, X = net.stoich, net.exponents
    for j, rname in enumerate(net.reaction_names):
        for i, sp in enumerate(net.species):
            want = -M[i, j] if M[i, j] < 0 else 0.0
            if X[j, i] != want:
                problems.append(
                    f"reaction {rname}: order of {sp.name} is {X[j, i]:g}, "
                    f"mass action requires {want:g}"
                )
    E = net.composition
    balance = E @ M
    for e, el in enumerate(net.elements):
        for j in np.flatnonzero(balance[e] != 0):
            problems.append(
                f"reaction {net.reaction_names[j]}: element {el} not conserved "
                f"(net {balance[e, j]:+g})"
            )
    sites = net.site_counts @ M
    for j in np.flatnonzero(sites != 0):
        problems.append(
            f"reaction {net.reaction_names[j]}: surface sites not conserved (net {sites[j]:+g})"
        )
    return problems


def network_from_steps(species: Sequence[Species], steps: Sequence[Mapping]) -> ReactionNetwork:
    """Build a network from step records.

    Each step is a mapping with ``name``, ``reactants`` and ``products``
    (species name -> coefficient) and optional ``units``.
    """
    names = [s.name for s in species]
    M = np.zeros((len(species), len(steps)))
    X = np.zeros((len(steps), len(species)))
    for j, step in enumerate(steps):
        for side, sign in (("reactants", -1.0), ("products", 1.0)):
            for sp, nu in step.get(side, {}).items():
                if sp not in names:
                    raise ValueError(f"step {step.get('name', j)}: unknown species {sp!r}")
                M[names.index(sp), j] += sign * nu
                if sign < 0:
                    X[j, names.index(sp)] += nu
    return ReactionNetwork(
        species=tuple(species),
        stoich=M,
        exponents=X,
        reaction_names=tuple(s.get("name", f"r{j}") for j, s in enumerate(steps)),
        rate_units=tuple(s.get("units", "") for s in steps),
    )


CO_OXIDATION_SPECIES = (
    Species("CO", GAS, 28.01, {"C": 1, "O": 1}),
    Species("O2", GAS, 32.00, {"O": 2}),
    Species("CO2", GAS, 44.01, {"C": 1, "O": 2}),
    Species("CO*", SURFACE, None, {"C": 1, "O": 1}, sites=1),
    Species("O*", SURFACE, None, {"O": 1}, sites=1),
    Species("*", SURFACE, None, {}, sites=1),
)

CO_OXIDATION_STEPS = (
    {"name": "k1", "reactants": {"CO": 1, "*": 1}, "products": {"CO*": 1}, "units": "cm3/(nmol s)"},
    {"name": "k-1", "reactants": {"CO*": 1}, "products": {"CO": 1, "*": 1}, "units": "1/s"},
    {"name": "k2", "reactants": {"O2": 1, "*": 2}, "products": {"O*": 2}, "units": "cm6/(nmol2 s)"},
    {"name": "k3", "reactants": {"CO*": 1, "O*": 1}, "products": {"CO2": 1, "*": 2},
     "units": "cm3/(nmol s)"},
    {"name": "k-3", "reactants": {"CO2": 1, "*": 2}, "products": {"CO*": 1, "O*": 1},
     "units": "cm6/(nmol2 s)"},
    {"name": "k4", "reactants": {"CO": 1, "O*": 1}, "products": {"CO2": 1, "*": 1},
     "units": "cm3/(nmol s)"},
)

# ground-truth constants used to generate the synthetic CO oxidation data
CO_OXIDATION_K = np.array([15.0, 0.70, 0.33, 0.40, 0.02, 15.2])


def co_oxidation() -> ReactionNetwork:
    return network_from_steps(CO_OXIDATION_SPECIES, CO_OXIDATION_STEPS)


def inert_argon() -> ReactionNetwork:
    """Single non-reactive gas at the reference molar mass (transport checks)."""
    return ReactionNetwork((Species("Ar", GAS, 40.0, {"Ar": 1}),), np.zeros((1, 0)),
                           np.zeros((0, 1)), ())


PRESETS = {
    "co-oxidation": (co_oxidation, CO_OXIDATION_K),
    "inert-argon": (inert_argon, np.zeros(0)),
}


def get_preset(name: str):
    """Return ``(network, true_k)`` for a named built-in mechanism."""
    try:
        factory, k = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown network preset {name!r}; known: {sorted(PRESETS)}") from None
    return factory(), k.copy()
