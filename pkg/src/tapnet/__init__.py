"""Learned user-equilibrium traffic assignment with fixed-point refinement."""
from importlib import resources

from .network import (
    CostFamily,
    FingerprintError,
    Link,
    LinkCostParams,
    Network,
    NetworkError,
    NetworkParseError,
    NetworkValidationError,
    NoRouteError,
    Route,
    RouteSet,
    enumerate_routes,
    load_network,
    parse_network,
    route_costs,
)

__version__ = "0.1.0"

FIXTURES = ("pigou", "diamond", "small", "steenbrink", "nguyen-dupuis",
            "sioux-falls", "regular-city-10x10")


def fixture_path(name: str):
    """Path of a bundled network file, by name (see ``FIXTURES``)."""
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    return resources.files(__name__) / "data" / f"{name}.json"


def load_fixture(name: str) -> Network:
    return parse_network(fixture_path(name).read_text())
