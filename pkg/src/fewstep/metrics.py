"""Evaluation metrics: LDDT, interface LDDT, ligand RMSD success, clashes, diversity."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .geom import Structure, kabsch_align, pairwise_distances
from .losses import LDDT_THRESHOLDS

INTERFACE_CLASSES = ("prot-prot", "lig-prot", "dna-prot", "rna-prot", "intra-prot")
_PARTNER = {"lig-prot": "ligand", "dna-prot": "dna", "rna-prot": "rna"}


class UndefinedScore(ValueError):
    """No atom pair qualifies for the requested score."""


def _check_pair(pred: Structure, target: Structure):
    if pred.n_atoms != target.n_atoms:
        raise ValidationError(f"atom count mismatch: {pred.n_atoms} vs {target.n_atoms}")


def _lddt_from_mask(pred, target, mask, inclusion_radius, thresholds):
    dt = pairwise_distances(target)
    dp = pairwise_distances(pred)
    n = len(dt)
    sel = mask & (dt <= inclusion_radius) & ~np.eye(n, dtype=bool)
    if not sel.any():
        raise UndefinedScore("no atom pairs within the inclusion radius")
    err = np.abs(dt[sel] - dp[sel])
    # one integer ratio: equal thresholds weights, and no rounding from averaging fractions
    hits = sum(int(np.count_nonzero(err <= thr)) for thr in thresholds)
    return hits / (len(thresholds) * err.size)


def lddt(pred: Structure, target: Structure, inclusion_radius=15.0, thresholds=LDDT_THRESHOLDS) -> float:
    """Superposition-free LDDT over all atom pairs within ``inclusion_radius`` in the target.

    A pair is preserved at a threshold when its distance error is at most the
    threshold; the score averages the preserved fraction over thresholds.
    """
    _check_pair(pred, target)
    if inclusion_radius <= 0:
        raise ValidationError("inclusion radius must be positive")
    n = pred.n_atoms
    return _lddt_from_mask(pred, target, np.ones((n, n), dtype=bool), inclusion_radius, thresholds)


def interface_mask(target: Structure, class_pair: str) -> np.ndarray:
    ent, ch = target.entity, target.chain
    prot = ent == "protein"
    if class_pair == "prot-prot":
        return np.outer(prot, prot) & (ch[:, None] != ch[None, :])
    if class_pair == "intra-prot":
        return np.outer(prot, prot) & (ch[:, None] == ch[None, :])
    if class_pair in _PARTNER:
        other = ent == _PARTNER[class_pair]
        m = np.outer(prot, other)
        return m | m.T
    raise ValidationError(f"unknown interface class {class_pair!r}")


def interface_lddt(pred: Structure, target: Structure, class_pair: str, inclusion_radius=15.0,
                   thresholds=LDDT_THRESHOLDS) -> float:
    """LDDT restricted to pairs between the two entity classes of ``class_pair``.

    Raises :class:`UndefinedScore` when no such pair exists within the radius;
    callers report that class as absent rather than zero.
    """
    _check_pair(pred, target)
    return _lddt_from_mask(pred, target, interface_mask(target, class_pair), inclusion_radius, thresholds)


def rmsd_success(pred: Structure, target: Structure, threshold=2.0, subset=None):
    """``(rmsd, rmsd <= threshold)`` after superposing on the atom subset.

    The subset defaults to ligand atoms when the target has any, else all atoms.
    """
    _check_pair(pred, target)
    if subset is None:
        lig = target.entity == "ligand"
        subset = lig if lig.any() else np.ones(target.n_atoms, dtype=bool)
    idx = np.flatnonzero(subset)
    _, r = kabsch_align(pred.coords[idx], target.coords[idx])
    return r, bool(r <= threshold)


# -- clashes -----------------------------------------------------------------

@dataclass
class ClashRule:
    """A clash is a non-bonded pair closer than ``min_distance``.

    ``mode`` selects which pairs count: ``all``, ``intra-protein`` (both
    protein) or ``protein-ligand`` (one protein, one ligand atom).
    """

    min_distance: float = 1.1
    mode: str = "all"

    def __post_init__(self):
        if self.mode not in ("all", "intra-protein", "protein-ligand"):
            raise ValidationError(f"unknown clash mode {self.mode!r}")


def clash_count(s: Structure, rule: ClashRule | None = None) -> int:
    rule = rule or ClashRule()
    d = pairwise_distances(s)
    n = s.n_atoms
    mask = np.triu(np.ones((n, n), dtype=bool), k=1)
    if len(s.bonds):
        mask[s.bonds[:, 0], s.bonds[:, 1]] = False
    prot = s.entity == "protein"
    if rule.mode == "intra-protein":
        mask &= np.outer(prot, prot)
    elif rule.mode == "protein-ligand":
        lig = s.entity == "ligand"
        mask &= np.outer(prot, lig) | np.outer(lig, prot)
    return int(np.sum(mask & (d < rule.min_distance)))


@dataclass
class ClashGridReport:
    exists_any: bool
    all_of_first_column: bool
    all_grid: bool
    counts: list = field(default_factory=list)


def clash_stats(grid, rule: ClashRule | None = None) -> ClashGridReport:
    """Clash flags over a seeds-by-samples grid.

    ``all_of_first_column`` is true when every sample of the first seed clashes.
    """
    if not grid or not grid[0]:
        raise ValidationError("clash grid is empty")
    counts = [[clash_count(s, rule) for s in row] for row in grid]
    flags = [[c > 0 for c in row] for row in counts]
    report = ClashGridReport(
        exists_any=any(any(r) for r in flags),
        all_of_first_column=all(flags[0]),
        all_grid=all(all(r) for r in flags),
        counts=counts,
    )
    assert (not report.all_grid or report.all_of_first_column) and \
        (not report.all_of_first_column or report.exists_any)
    return report


# -- reports -----------------------------------------------------------------

@dataclass
class MetricReport:
    complex_lddt: float
    interface: dict
    rmsd: float
    success: bool
    clashes: int = 0
    diversity: dict | None = None

    def to_dict(self):
        out = {"complex_lddt": self.complex_lddt, "rmsd": self.rmsd, "success": self.success,
               "clashes": self.clashes}
        out.update(self.interface)
        if self.diversity is not None:
            out["diversity"] = self.diversity
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def metric_report(pred: Structure, target: Structure, inclusion_radius=15.0, rule=None,
                  rmsd_threshold=2.0) -> MetricReport:
    """All per-structure metrics; interface classes without qualifying pairs are omitted."""
    interface = {}
    for cls in INTERFACE_CLASSES:
        try:
            interface[cls] = interface_lddt(pred, target, cls, inclusion_radius)
        except UndefinedScore:
            pass
    r, ok = rmsd_success(pred, target, rmsd_threshold)
    return MetricReport(lddt(pred, target, inclusion_radius), interface, r, ok, clash_count(pred, rule))


def reports_to_csv(rows) -> str:
    """CSV with one row per ``(run_id, seed, sample, MetricReport)`` tuple."""
    cols = ["run_id", "seed", "sample", "complex_lddt", *INTERFACE_CLASSES, "rmsd", "success", "clashes"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for run_id, seed, idx, rep in rows:
        d = rep.to_dict()
        w.writerow([run_id, seed, idx] + [d.get(c, "") for c in cols[3:]])
    return buf.getvalue()


def diversity_spread(samples, target: Structure, inclusion_radius=15.0) -> dict:
    """Best-minus-worst LDDT across samples, for the complex and each populated interface class."""
    if len(samples) < 2:
        raise ValidationError("diversity needs at least two samples")
    out = {"complex": float(np.ptp([lddt(s, target, inclusion_radius) for s in samples]))}
    for cls in INTERFACE_CLASSES:
        try:
            vals = [interface_lddt(s, target, cls, inclusion_radius) for s in samples]
        except UndefinedScore:
            continue
        out[cls] = float(np.ptp(vals))
    return out
