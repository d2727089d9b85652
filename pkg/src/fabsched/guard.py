"""Rule-based conversion guard: urgency scoring and conversion decisions.

The guard sits between follower actions and the shop floor. Per operation it
compares, for each product, the capacity the queued work still requires (RC)
against the capacity machines already set up for that product can deliver
before the planning horizon ends (ERC). A product whose requirement exceeds
its expected capacity is urgent; if additionally no machine at the operation
is set up for it at all, a large constant BN lifts its score above every
merely-undersupplied product. BN is chosen per episode to dominate any
reachable RC value, so the two urgency classes can never interleave.

A follower's conversion intent toward a product with empty WIP would waste
the machine's tick. In that case, if the machine's current product is
already covered by the other machines set up for it, the guard redirects
the conversion to the most urgent product (ties broken by lowest product
id); otherwise it keeps the current setup.
"""

from __future__ import annotations

from dataclasses import dataclass

from .scenario import ScenarioConfig


@dataclass(frozen=True)
class MachineView:
    """What the guard needs to know about one machine of the operation."""

    machine: int
    product_setup: int
    operation_setup: int
    busy_until: int


@dataclass
class CapacityView:
    """Per-operation capacity snapshot at one tick.

    rc[p]: remaining processing ticks the WIP queued at (operation, p) needs.
    ercm[(l, p)]: ticks machine l can still deliver for p before the horizon
    ends, nonzero only while l is set up for (p, operation).
    erc[p]: sum of ercm over machines.
    big_number: strictly larger than any RC value reachable in the episode.
    Products not processable at the operation simply have no entry; lookups
    default to 0.
    """

    operation: int
    tick: int
    horizon_end: int
    big_number: int
    products: tuple[int, ...]
    machines: tuple[MachineView, ...]
    rc: dict[int, int]
    erc: dict[int, int]
    ercm: dict[tuple[int, int], int]


@dataclass(frozen=True)
class GuardedDecision:
    """Outcome of one guarded action: convert to product, or keep the setup."""

    convert: bool
    product: int
    overridden: bool = False
    reason: str = ""


def build_capacity_view(
    config: ScenarioConfig,
    operation: int,
    tick: int,
    horizon_end: int,
    big_number: int,
    queue_lots: dict[int, list[tuple[int, int]]],
    machines: tuple[MachineView, ...],
) -> CapacityView:
    """Assemble the capacity snapshot for one operation.

    queue_lots maps product -> [(stage, units), ...] for lots waiting at the
    operation; machines are the operation's machine pool with current setups.
    """
    products = tuple(config.op_products[operation])
    rc = {p: 0 for p in products}
    for p, entries in queue_lots.items():
        rc[p] = sum(config.pr[p][stage] * units for stage, units in entries)
    ercm: dict[tuple[int, int], int] = {}
    erc = {p: 0 for p in products}
    for mv in machines:
        for p in products:
            if mv.product_setup == p and mv.operation_setup == operation:
                left = max(0, horizon_end - max(tick, mv.busy_until))
            else:
                left = 0
            ercm[(mv.machine, p)] = left
            erc[p] += left
    return CapacityView(
        operation=operation,
        tick=tick,
        horizon_end=horizon_end,
        big_number=big_number,
        products=products,
        machines=machines,
        rc=rc,
        erc=erc,
        ercm=ercm,
    )


def score_urgency(view: CapacityView) -> dict[int, int]:
    """Urgency score per product at the operation.

    0 when expected capacity covers the requirement (RC <= ERC). Otherwise
    RC, lifted by BN when no machine at the operation is currently set up
    for the product, so fully unserved products always outrank underserved
    ones.
    """
    scores = {}
    for p in view.products:
        rc = view.rc.get(p, 0)
        erc = view.erc.get(p, 0)
        if rc <= erc:
            scores[p] = 0
        elif any(
            mv.product_setup == p and mv.operation_setup == view.operation
            for mv in view.machines
        ):
            scores[p] = rc
        else:
            scores[p] = rc + view.big_number
    return scores


def decide_conversion(
    intent_convert: bool,
    intent_product: int,
    machine: MachineView,
    wip: dict[int, bool],
    view: CapacityView,
    urgency: dict[int, int],
    allowed: dict[int, bool] | None = None,
) -> GuardedDecision:
    """Final setup decision for one machine given the follower's intent.

    Keeps are passed through untouched. A conversion toward a product with
    WIP proceeds. A conversion toward an empty queue is redirected to the
    highest-urgency product (lowest product id on ties) when the machine's
    current product is covered without it and some product is urgent;
    otherwise the setup is kept. allowed restricts redirect targets to
    products the machine can actually process (defaults to all).

    Redirects and rejected empty-queue conversions are flagged overridden;
    reasons are "redirect" and "reject".
    """
    if not intent_convert:
        return GuardedDecision(convert=False, product=machine.product_setup)
    if wip.get(intent_product, False):
        return GuardedDecision(convert=True, product=intent_product)
    p_cur = machine.product_setup
    rc = view.rc.get(p_cur, 0)
    erc = view.erc.get(p_cur, 0)
    ercm = view.ercm.get((machine.machine, p_cur), 0)
    covered_without_me = rc < erc - ercm
    candidates = [
        p
        for p in view.products
        if urgency.get(p, 0) > 0 and (allowed is None or allowed.get(p, False))
    ]
    if covered_without_me and candidates:
        best = max(candidates, key=lambda p: (urgency[p], -p))
        return GuardedDecision(convert=True, product=best, overridden=True, reason="redirect")
    return GuardedDecision(convert=False, product=p_cur, overridden=True, reason="reject")
