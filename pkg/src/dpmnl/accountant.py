"""Privacy budget bookkeeping for zCDP and (epsilon, delta) accounting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence


@dataclass(frozen=True)
class ZcdpBudget:
    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")


@dataclass(frozen=True)
class EpsDeltaBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if self.epsilon < 0 or not 0 <= self.delta < 1:
            raise ValueError(f"invalid (epsilon, delta) = ({self.epsilon}, {self.delta})")


@dataclass(frozen=True)
class BudgetSplit:
    """Split of a total zCDP budget between the MLE and the Gram-matrix tree."""

    rho_total: float
    mle_fraction: float

    def __post_init__(self):
        if not self.rho_total > 0:
            raise ValueError("rho_total must be positive")
        if not 0 < self.mle_fraction < 1:
            raise ValueError("mle_fraction must lie in (0, 1)")

    @property
    def rho1(self) -> float:
        return self.rho_total * self.mle_fraction

    @property
    def rho2(self) -> float:
        return self.rho_total - self.rho1


def compose_zcdp(budgets: Sequence[ZcdpBudget]) -> ZcdpBudget:
    if len(budgets) == 0:
        raise ValueError("cannot compose an empty list of budgets")
    return ZcdpBudget(math.fsum(b.rho for b in budgets))


def zcdp_to_eps_delta(rho: float, delta: float) -> EpsDeltaBudget:
    """(epsilon, delta)-DP implied by rho-zCDP: eps = rho + 2 sqrt(rho ln(1/delta))."""
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return EpsDeltaBudget(rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta)), delta)


def zcdp_to_eps_delta_linear(rho: float, T: int) -> EpsDeltaBudget:
    """Alternative conversion eps = rho + 4 rho ln T, delta = 1/T^2."""
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if T < 2:
        raise ValueError("T must be at least 2")
    return EpsDeltaBudget(rho + 4.0 * rho * math.log(T), 1.0 / T**2)


def gaussian_sigma_for_zcdp(sensitivity: float, rho: float) -> float:
    """Noise scale making the Gaussian mechanism rho-zCDP: sigma = Delta / sqrt(2 rho)."""
    if not sensitivity > 0 or not rho > 0:
        raise ValueError("sensitivity and rho must be positive")
    return sensitivity / math.sqrt(2.0 * rho)


def per_call_mle_budget_epsdelta(eps1: float, delta1: float, d_mle: int) -> EpsDeltaBudget:
    """Per-call budget so that ``d_mle`` calls compose (advanced composition) to (eps1, ~delta1)."""
    if d_mle < 1:
        raise ValueError("D_MLE must be at least 1")
    if not eps1 > 0 or not 0 < delta1 < 1:
        raise ValueError(f"invalid budget ({eps1}, {delta1})")
    eps = eps1 / math.sqrt(8.0 * d_mle * math.log(1.0 / delta1))
    return EpsDeltaBudget(eps, delta1 / (2.0 * d_mle))


def basic_compose_epsdelta(budgets: Sequence[EpsDeltaBudget]) -> EpsDeltaBudget:
    if len(budgets) == 0:
        raise ValueError("cannot compose an empty list of budgets")
    return EpsDeltaBudget(
        math.fsum(b.epsilon for b in budgets), math.fsum(b.delta for b in budgets)
    )


@dataclass(frozen=True)
class LedgerEntry:
    event: str
    mechanism: str
    rho_or_eps: float
    delta: float
    cumulative: float


@dataclass
class PrivacyLedger:
    """Append-only record of budget charges made by one run.

    Charges are summed with plain addition: zCDP composition for ``zcdp``
    ledgers, basic composition of epsilons for ``epsdelta`` ledgers.
    """

    regime: str = "zcdp"
    entries: List[LedgerEntry] = field(default_factory=list)

    def charge(self, event: str, mechanism: str, amount: float, delta: float = 0.0) -> None:
        cumulative = self.total + amount
        self.entries.append(LedgerEntry(event, mechanism, amount, delta, cumulative))

    @property
    def total(self) -> float:
        return self.entries[-1].cumulative if self.entries else 0.0

    @property
    def total_delta(self) -> float:
        return math.fsum(e.delta for e in self.entries)

    def count(self, mechanism: str) -> int:
        return sum(1 for e in self.entries if e.mechanism == mechanism)

    def rows(self) -> Iterable[tuple]:
        for e in self.entries:
            yield (e.event, e.mechanism, e.rho_or_eps, e.delta, e.cumulative)


LEDGER_COLUMNS = ("event", "mechanism", "rho_or_eps", "delta", "cumulative")


def write_ledger_csv(path, ledger: PrivacyLedger) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        for ev, mech, amt, dl, cum in ledger.rows():
            w.writerow([ev, mech, f"{amt:.17g}", f"{dl:.17g}", f"{cum:.17g}"])
