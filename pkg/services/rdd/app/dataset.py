"""Canonical in-memory RD dataset, sorted by the assignment variable"""

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from .errors import EmptyInput, MissingColumn, NonFiniteValue, OneSidedDesign, RaggedCovariates
from .models import DesignMode, Subject

logger = structlog.get_logger(__name__)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RDDataset:
    """Subjects sorted ascending by r, with the cutoff r0.

    `input_order[i]` is the position in the raw input of the i-th sorted
    subject, so reports can map back to the caller's rows.
    """

    ids: Tuple[str, ...]
    r: np.ndarray
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    cutoff: float
    input_order: np.ndarray
    covariates: Optional[np.ndarray] = None
    covariate_names: Tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def treated_side(self) -> np.ndarray:
        """Assignment indicator 1(r >= r0)"""
        return self.r >= self.cutoff

    def subjects(self) -> List[Subject]:
        return [
            Subject(id=i, r=float(r), x=float(x), y=float(y), t=int(t))
            for i, r, x, y, t in zip(self.ids, self.r, self.x, self.y, self.t)
        ]

    def with_x(self, x: Sequence[float]) -> "RDDataset":
        """Same design with a replaced confounder column (already in sorted order)"""
        values = np.asarray(x, dtype=float)
        if values.shape != (self.n,):
            raise RaggedCovariates(f"expected {self.n} confounder values, got {values.shape}", module="dataset")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise NonFiniteValue(self.ids[bad[0]], "x", module="dataset")
        return replace(self, x=_frozen(values))

    def equals(self, other: "RDDataset") -> bool:
        same_cov = (self.covariates is None and other.covariates is None) or (
            self.covariates is not None
            and other.covariates is not None
            and np.array_equal(self.covariates, other.covariates)
        )
        return (
            self.ids == other.ids
            and self.cutoff == other.cutoff
            and np.array_equal(self.r, other.r)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and same_cov
        )

    def digest(self) -> str:
        """sha256 over the sorted (id, r, x, y, t) records and cutoff"""
        h = hashlib.sha256()
        h.update(repr(self.cutoff).encode())
        for i, r, x, y, t in zip(self.ids, self.r, self.x, self.y, self.t):
            h.update(f"{i}|{r!r}|{x!r}|{y!r}|{int(t)}\n".encode())
        return h.hexdigest()


def validate_and_sort(
    raw: Sequence[Subject],
    r0: float,
    mode: DesignMode = DesignMode.SHARP,
    covariates: Optional[Sequence[Sequence[float]]] = None,
    covariate_names: Sequence[str] = (),
) -> RDDataset:
    """Validate raw subjects and stable-sort them by r"""
    if len(raw) == 0:
        raise EmptyInput("no subjects given", module="dataset")
    if not math.isfinite(r0):
        raise NonFiniteValue("<cutoff>", "r0", module="dataset")

    for s in raw:
        for name in ("r", "x", "y"):
            if not math.isfinite(getattr(s, name)):
                raise NonFiniteValue(s.id, name, module="dataset")

    r = np.array([s.r for s in raw], dtype=float)
    n_treated = int(np.sum(r >= r0))
    if n_treated == 0 or n_treated == len(raw):
        raise OneSidedDesign(
            f"need subjects on both sides of the cutoff {r0}: {len(raw) - n_treated} below, {n_treated} at or above",
            module="dataset",
        )

    assigned = (r >= r0).astype(int)
    if mode == DesignMode.FUZZY:
        if any(s.t is None for s in raw):
            raise MissingColumn("t", module="dataset")
        t = np.array([s.t for s in raw], dtype=int)
    else:
        given = np.array([assigned[i] if s.t is None else s.t for i, s in enumerate(raw)], dtype=int)
        mismatched = int(np.sum(given != assigned))
        if mismatched:
            logger.warning("Sharp design overrides treatment column", mismatched=mismatched)
        t = assigned

    cov = None
    if covariates is not None:
        rows = [list(row) for row in covariates]
        if len(rows) != len(raw):
            raise RaggedCovariates(f"{len(rows)} covariate rows for {len(raw)} subjects", module="dataset")
        if len({len(row) for row in rows}) > 1:
            raise RaggedCovariates("covariate rows differ in dimension", module="dataset")
        cov = np.array(rows, dtype=float)
        bad = np.argwhere(~np.isfinite(cov))
        if bad.size:
            i, j = bad[0]
            name = covariate_names[j] if j < len(covariate_names) else f"covariate[{j}]"
            raise NonFiniteValue(raw[i].id, name, module="dataset")

    order = np.argsort(r, kind="stable")
    if cov is not None:
        cov = cov[order]
        cov.setflags(write=False)
    t_sorted = t[order]
    t_sorted.setflags(write=False)
    input_order = order.copy()
    input_order.setflags(write=False)

    return RDDataset(
        ids=tuple(raw[i].id for i in order),
        r=_frozen(r[order]),
        x=_frozen([raw[i].x for i in order]),
        y=_frozen([raw[i].y for i in order]),
        t=t_sorted,
        cutoff=float(r0),
        input_order=input_order,
        covariates=cov,
        covariate_names=tuple(covariate_names),
    )


def reduce_assignment(columns: np.ndarray, offset: float, scale: float) -> np.ndarray:
    """Scalar assignment from several: (min over columns - offset) / scale"""
    values = np.asarray(columns, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    return (values.min(axis=1) - offset) / scale
