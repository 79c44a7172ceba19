"""Subset selectors and their factory."""
from core.selectors.base import (
    FORWARD_COST,
    FullSelector,
    RandomSelector,
    SelectionContext,
    SelectionError,
    SubsetSelection,
    SubsetSelector,
    class_budgets,
    select_random,
)
from core.selectors.entropy import EntropySelector
from core.selectors.facility_location import FacilityLocationSelector
from core.selectors.glister import GlisterConfig, GlisterSelector
from core.selectors.gradmatch import GradMatchSelector

SELECTORS = ("full", "random", "fl", "entropy", "glister", "gradmatch")


def get_selector(name: str, **kwargs) -> SubsetSelector:
    """
    Create a selector by name.

    Args:
        name: One of SELECTORS
        **kwargs: Selector-specific settings (see each selector's constructor)

    Returns:
        SubsetSelector: A fresh selector instance
    """
    name = name.lower()
    if name == "full":
        return FullSelector()
    elif name == "random":
        return RandomSelector()
    elif name == "fl":
        return FacilityLocationSelector(**kwargs)
    elif name == "entropy":
        return EntropySelector(**kwargs)
    elif name == "glister":
        return GlisterSelector(GlisterConfig(**kwargs))
    elif name == "gradmatch":
        return GradMatchSelector(**kwargs)
    else:
        raise SelectionError(f"Unsupported selector: {name}")


__all__ = [
    "FORWARD_COST",
    "SELECTORS",
    "SelectionContext",
    "SelectionError",
    "SubsetSelection",
    "SubsetSelector",
    "class_budgets",
    "get_selector",
    "select_random",
]
