"""Pragma configurations: per-loop property vectors plus cache choices."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .ir import KernelError, KernelIR, PropertyVector
from .analysis import TripCount


@dataclass(frozen=True)
class Configuration:
    """One point of the design space.

    `pvs` maps every loop to its property vector; `caches` maps array
    names to the loops at which an on-chip copy is kept (None denotes the
    kernel top level).  Arrays absent from `caches` transfer directly at
    the top level.
    """

    pvs: tuple[PropertyVector, ...]
    caches: tuple[tuple[str, tuple[Optional[str], ...]], ...] = ()

    def pv(self, loop_id: str) -> PropertyVector:
        for p in self.pvs:
            if p.loop_id == loop_id:
                return p
        raise KernelError(f"no property vector for loop {loop_id}")

    def cache_points(self, array: str) -> tuple[Optional[str], ...]:
        for name, pts in self.caches:
            if name == array:
                return pts
        return ()

    def tiles(self) -> dict[str, int]:
        return {p.loop_id: p.tile for p in self.pvs if p.tile > 1}

    def replace_pv(self, pv: PropertyVector) -> "Configuration":
        return Configuration(
            pvs=tuple(pv if p.loop_id == pv.loop_id else p for p in self.pvs),
            caches=self.caches,
        )

    def key(self) -> tuple:
        """Canonical hashable identity (order-independent)."""
        return (
            tuple(sorted(
                (p.loop_id, p.ispipelined, p.ii, p.uf, p.tile) for p in self.pvs
            )),
            tuple(sorted((a, tuple(sorted(pts, key=str))) for a, pts in self.caches)),
        )

    def as_dict(self) -> dict:
        return {
            "loops": {
                p.loop_id: {
                    "pipeline": p.ispipelined,
                    "ii": p.ii,
                    "uf": p.uf,
                    "tile": p.tile,
                }
                for p in self.pvs
            },
            "caches": {a: list(pts) for a, pts in self.caches},
        }


def default_config(k: KernelIR, tc: dict[str, TripCount]) -> Configuration:
    pvs = tuple(
        PropertyVector(
            loop_id=l.loop_id,
            tc_min=tc[l.loop_id].tc_min,
            tc_max=tc[l.loop_id].tc_max,
            tc_avg=tc[l.loop_id].tc_avg,
        )
        for l in k.loops()
    )
    return Configuration(pvs=pvs)


def config_from_dict(k: KernelIR, tc: dict[str, TripCount], doc: dict) -> Configuration:
    base = default_config(k, tc)
    pvs = []
    for p in base.pvs:
        spec = doc.get("loops", {}).get(p.loop_id, {})
        pvs.append(PropertyVector(
            loop_id=p.loop_id,
            ispipelined=bool(spec.get("pipeline", False)),
            ii=int(spec.get("ii", 1)),
            uf=int(spec.get("uf", 1)),
            tile=int(spec.get("tile", 1)),
            tc_min=p.tc_min,
            tc_max=p.tc_max,
            tc_avg=p.tc_avg,
        ))
    caches = tuple(
        (a, tuple(pts)) for a, pts in sorted(doc.get("caches", {}).items())
    )
    return Configuration(pvs=tuple(pvs), caches=caches)
