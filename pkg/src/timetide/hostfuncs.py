"""Built-in host function tables.

Host functions are the escape hatch for data-structure work the language
itself does not do. Every function here is pure: same arguments, same
result, no clocks, no globals, no randomness beyond hashing its own
arguments. That purity is what keeps runs reproducible across schedules
and node placements.
"""

from __future__ import annotations

from .diagnostics import RuntimeFault
from .values import EMPTY, HostRecord, Value

_MASK = (1 << 64) - 1


def _mix(*xs: int) -> int:
    """Deterministic avalanche hash of small ints, non-negative result."""
    h = 0x9E3779B97F4A7C15
    for x in xs:
        h = (h ^ (x & _MASK)) * 0xBF58476D1CE4E5B9 & _MASK
        h ^= h >> 31
    return h & 0x7FFFFFFF


def _want_record(v: Value, tag: str, fn: str) -> HostRecord:
    if not isinstance(v, HostRecord) or v.tag != tag:
        raise RuntimeFault(f"{fn} expects a {tag} record, got {v!r}")
    return v


# ------------------------------------------------------------------ trading

# Orders carry a per-trader sequence number; the book acknowledges the
# highest sequence it has matched so a monitor can bound matching latency.


def create_orderbook(depth: int) -> HostRecord:
    return HostRecord(
        "book",
        stock=25 * depth,
        depth=depth,
        round=0,
        queue=(),
        fills=(),
        acked=(),
    )


def make_order(trader: int, seq: int, spread: int) -> HostRecord:
    qty = 1 + _mix(trader, seq, spread) % 7
    return HostRecord("order", trader=trader, seq=seq, qty=qty)


def insert_order(book: Value, order: Value) -> HostRecord:
    b = _want_record(book, "book", "insert_order")
    o = _want_record(order, "order", "insert_order")
    return b.replace(queue=b.get("queue") + (o,))


def run_matching(book: Value) -> HostRecord:
    """Match queued orders against remaining stock, oldest first."""
    b = _want_record(book, "book", "run_matching")
    # The market restocks a little every round so long runs stay liquid.
    stock = min(25 * b.get("depth"), b.get("stock") + b.get("depth"))
    fills = []
    acked = dict(b.get("acked"))
    for o in b.get("queue"):
        qty = min(o.get("qty"), stock)
        stock -= qty
        price = 100 + _mix(b.get("round"), o.get("trader"), o.get("seq")) % 9
        fills.append(
            HostRecord(
                "fill",
                trader=o.get("trader"),
                seq=o.get("seq"),
                qty=qty,
                price=price,
                stock_after=stock,
            )
        )
        acked[o.get("trader")] = o.get("seq")
    return b.replace(
        stock=stock,
        round=b.get("round") + 1,
        queue=(),
        fills=tuple(fills),
        acked=tuple(sorted(acked.items())),
    )


def has_fill(book: Value, trader: int) -> bool:
    b = _want_record(book, "book", "has_fill")
    return any(f.get("trader") == trader for f in b.get("fills"))


def fill_for(book: Value, trader: int) -> Value:
    """Latest fill for a trader from the last matching round, or empty."""
    b = _want_record(book, "book", "fill_for")
    out: Value = EMPTY
    for f in b.get("fills"):
        if f.get("trader") == trader:
            out = f
    return out


def spread_of(book: Value) -> int:
    b = _want_record(book, "book", "spread_of")
    return 1 + _mix(b.get("round"), b.get("stock")) % 7


def orderlist_create(trader: int) -> HostRecord:
    return HostRecord("folio", trader=trader, cash=1000, held=0, sent=0, acked=0)


def after_fill(folio: Value, fill: Value) -> HostRecord:
    p = _want_record(folio, "folio", "after_fill")
    f = _want_record(fill, "fill", "after_fill")
    return p.replace(
        cash=p.get("cash") - f.get("qty") * f.get("price"),
        held=p.get("held") + f.get("qty"),
        acked=max(p.get("acked"), f.get("seq")),
    )


def should_do_trade(folio: Value, spread: int) -> bool:
    p = _want_record(folio, "folio", "should_do_trade")
    if p.get("sent") > p.get("acked"):
        return False  # one order in flight at a time, wait for its fill
    return _mix(p.get("trader"), p.get("sent"), spread) % 3 != 0

def make_decision(folio: Value, spread: int) -> HostRecord:
    p = _want_record(folio, "folio", "make_decision")
    return make_order(p.get("trader"), p.get("sent") + 1, spread)


def after_send(folio: Value) -> HostRecord:
    p = _want_record(folio, "folio", "after_send")
    return p.replace(sent=p.get("sent") + 1)


def settle_value(folio: Value) -> int:
    p = _want_record(folio, "folio", "settle_value")
    return p.get("cash") + p.get("held") * 100


# Accessors used by monitor programs on tapped channels.


def order_seq(order: Value) -> int:
    return _want_record(order, "order", "order_seq").get("seq")


def order_qty(order: Value) -> int:
    return _want_record(order, "order", "order_qty").get("qty")


def fill_seq(fill: Value) -> int:
    return _want_record(fill, "fill", "fill_seq").get("seq")


def fill_qty(fill: Value) -> int:
    return _want_record(fill, "fill", "fill_qty").get("qty")


def fill_stock_after(fill: Value) -> int:
    return _want_record(fill, "fill", "fill_stock_after").get("stock_after")


# ------------------------------------------------------------------- sensor


def sense(agg: int, leaf: int, cycle: int) -> int:
    """Synthetic field reading in 0..99, fixed by position and cycle."""
    return _mix(agg * 1000 + leaf * 100, cycle) % 100


TABLES: dict[str, dict[str, object]] = {
    "trading": {
        "create_orderbook": create_orderbook,
        "make_order": make_order,
        "insert_order": insert_order,
        "run_matching": run_matching,
        "has_fill": has_fill,
        "fill_for": fill_for,
        "spread_of": spread_of,
        "orderlist_create": orderlist_create,
        "after_fill": after_fill,
        "should_do_trade": should_do_trade,
        "make_decision": make_decision,
        "after_send": after_send,
        "settle_value": settle_value,
        "order_seq": order_seq,
        "order_qty": order_qty,
        "fill_seq": fill_seq,
        "fill_qty": fill_qty,
        "fill_stock_after": fill_stock_after,
    },
    "sensor": {
        "sense": sense,
    },
}


# Tables whose functions read a clock, file, or anything else beyond
# their arguments. Exploring many schedules is only sound for pure ones.
IMPURE_TABLES: frozenset[str] = frozenset()


def get_table(name: str) -> dict[str, object]:
    if name not in TABLES:
        known = ", ".join(sorted(TABLES))
        raise ValueError(f"unknown host table {name!r} (have: {known})")
    return TABLES[name]


def table_is_pure(name: str) -> bool:
    return name not in IMPURE_TABLES
