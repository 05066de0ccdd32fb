"""Calibrated BNB order-book coefficients (Feb 6, 2022, 100 ticks, 5 s snapshots).

Values are stored with their calibrated (raw, negative-for-sells) signs.
:func:`scenario_spec` converts them to solver convention.
"""
from __future__ import annotations

from .impact import ImpactForm, ProblemSpec

SIGMA = 0.009388
SPREAD = 0.100069

SCENARIOS = ("under", "average", "over")
SCENARIO_LETTER = {"under": "U", "average": "A", "over": "O"}
FORM_LETTER = {"linear": "L", "power": "P"}

#: ladder maximum rate (shares per tau) behind each scenario
SCENARIO_NU_MAX = {"under": 50.0, "average": 1200.0, "over": 7000.0}

RAW_COEFFICIENTS = {
    "under": {
        "tpi": {
            "linear": ImpactForm("linear", (-0.00079754, -0.00066177)),
            "power": ImpactForm("power", (-2.44114118e-04, 1.29520174, -3.77323856e-03)),
        },
        "ppi": {
            "linear": ImpactForm("linear", (-0.00095264, 0.00229332)),
            "power": ImpactForm("power", (-1.38745021e-04, 1.48472878, -3.01507718e-03)),
        },
    },
    "over": {
        "tpi": {
            "linear": ImpactForm("linear", (-0.00079843, -0.22235319)),
            "power": ImpactForm("power", (-0.00538481, 0.78904313, 0.23917224)),
        },
        "ppi": {
            "linear": ImpactForm("linear", (-0.00079455, -0.2597109)),
            "power": ImpactForm("power", (-0.00947337, 0.72704129, 0.38622943)),
        },
    },
    "average": {
        "tpi": {
            "linear": ImpactForm("linear", (-0.00095984, 0.00209078)),
            "power": ImpactForm("power", (-0.0011318, 0.97757467, 0.01148375)),
        },
        "ppi": {
            "linear": ImpactForm("linear", (-0.0009179, -0.01720435)),
            "power": ImpactForm("power", (-0.00200298, 0.89422254, 0.02904742)),
        },
    },
}


def strategy_label(scenario: str, tpi_kind: str, ppi_kind: str) -> str:
    """Five-letter name, e.g. ``("average", "power", "power") -> "ATPPP"``."""
    return f"{SCENARIO_LETTER[scenario]}T{FORM_LETTER[tpi_kind]}P{FORM_LETTER[ppi_kind]}"


def parse_label(label: str) -> tuple[str, str, str]:
    if len(label) != 5 or label[1] != "T" or label[3] != "P":
        raise ValueError(f"not a strategy label: {label!r}")
    scen = {v: k for k, v in SCENARIO_LETTER.items()}
    forms = {v: k for k, v in FORM_LETTER.items()}
    try:
        return scen[label[0]], forms[label[2]], forms[label[4]]
    except KeyError:
        raise ValueError(f"not a strategy label: {label!r}") from None


def scenario_spec(
    scenario: str,
    tpi_kind: str,
    ppi_kind: str,
    *,
    drop_ppi_intercept: bool = False,
    horizon: float = 1.0,
    upsilon: float = 0.5,
) -> ProblemSpec:
    """Solver-ready spec from the calibrated table.

    ``drop_ppi_intercept`` zeroes the independent term of the permanent impact,
    which the closed-form solutions require.
    """
    if scenario not in RAW_COEFFICIENTS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    table = RAW_COEFFICIENTS[scenario]
    tpi = table["tpi"][tpi_kind].negated()
    ppi = table["ppi"][ppi_kind].negated()
    if drop_ppi_intercept:
        ppi = ImpactForm(ppi.kind, ppi.params[:-1] + (0.0,))
    return ProblemSpec(
        tpi=tpi,
        ppi=ppi,
        sigma=SIGMA,
        delta=SPREAD,
        horizon=horizon,
        upsilon=upsilon,
        label=strategy_label(scenario, tpi_kind, ppi_kind),
    )


def all_labels() -> list[str]:
    return [
        strategy_label(s, t, p)
        for s in SCENARIOS
        for t in ("linear", "power")
        for p in ("linear", "power")
    ]
