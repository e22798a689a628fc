"""Analytic FLOPs for AF3-style trunks and diffusion modules.

Counting rules (all integers, multiply-add = 2 FLOPs):

* dense product (m x k)(k x n): ``2 m k n``
* attention over N items at width d: ``4 N^2 d`` for scores and weighted sum,
  plus four d x d projections per item
* triangle multiplication over an n x n pair map with c channels:
  ``TRI_MULT_CONST * n^3 * c`` for the edge contraction plus six c x c projections per pair
* triangle attention: one attention over n items for each of n rows
* transitions: two dense layers with expansion factor 4 (2 in the diffusion transformer)

Layer norms, softmax and elementwise ops are not counted. The diffusion
conditioning and input embedders are excluded so an empty model costs zero.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, replace

from .errors import ValidationError

TRI_MULT_CONST = 2
N_HEADS_PAIR_BIAS = 16
ATOM_QUERY_BLOCK = 32
ATOM_KEY_WINDOW = 128
OPM_CHANNELS = 32

FIG1_TOKENS = (256, 384, 512, 640, 768)
FIG1_MSA = (256, 512, 1024, 2048, 4096, 8192)
FIG1_FIXED_TOKENS = 384
FIG1_FIXED_MSA = 2048
FIG1_FIXED_ATOMS = 8832


@dataclass(frozen=True)
class ArchConfig:
    name: str = "custom"
    n_msa_blocks: int = 4
    n_pairformer_blocks: int = 48
    n_diffusion_encoder: int = 3
    n_diffusion_transformer: int = 24
    n_diffusion_decoder: int = 3
    c_s: int = 384
    c_z: int = 128
    c_m: int = 64
    c_atom: int = 128
    c_token: int = 768
    n_cycles: int = 4
    n_diffusion_steps: int = 200

    def __post_init__(self):
        for k, v in asdict(self).items():
            if k != "name" and (int(v) != v or v < 0):
                raise ValidationError(f"{k} must be a nonnegative integer")


PRESETS = {
    "protenix": ArchConfig("protenix", 4, 48, 3, 24, 3, n_diffusion_steps=200),
    "mini": ArchConfig("mini", 1, 16, 1, 8, 1, n_diffusion_steps=2),
    "tiny": ArchConfig("tiny", 1, 8, 1, 8, 1, n_diffusion_steps=2),
}


@dataclass(frozen=True)
class WorkloadShape:
    n_tokens: int = FIG1_FIXED_TOKENS
    n_msa_rows: int = FIG1_FIXED_MSA
    n_atoms: int = FIG1_FIXED_ATOMS

    def __post_init__(self):
        if min(self.n_tokens, self.n_msa_rows, self.n_atoms) < 1:
            raise ValidationError("workload sizes must be positive")


def mm(m, k, n):
    return 2 * m * k * n


def attention(n_items, d, n_seqs=1):
    return n_seqs * (4 * n_items * n_items * d + 4 * mm(n_items, d, d))


def transition(n_rows, c, expand=4):
    return mm(n_rows, c, expand * c) + mm(n_rows, expand * c, c)


def tri_mult(n, c):
    return TRI_MULT_CONST * n**3 * c + 6 * mm(n * n, c, c)


def tri_attention(n, c):
    return attention(n, c, n_seqs=n) + mm(n * n, c, N_HEADS_PAIR_BIAS)


def pair_stack(n, c_z):
    return 2 * tri_mult(n, c_z) + 2 * tri_attention(n, c_z) + transition(n * n, c_z)


def pairformer_block(a: ArchConfig, n):
    single = attention(n, a.c_s) + mm(n * n, a.c_z, N_HEADS_PAIR_BIAS) + transition(n, a.c_s)
    return pair_stack(n, a.c_z) + single


def msa_block(a: ArchConfig, n, m):
    opm = 2 * mm(m * n, a.c_m, OPM_CHANNELS) + mm(n * n, m, OPM_CHANNELS**2) + mm(n * n, OPM_CHANNELS**2, a.c_z)
    pair_avg = 2 * m * n * n * a.c_m + 4 * mm(m * n, a.c_m, a.c_m) + mm(n * n, a.c_z, 8)
    return opm + pair_avg + transition(m * n, a.c_m) + pair_stack(n, a.c_z)


def atom_block(a: ArchConfig, n_atoms):
    local = 4 * n_atoms * ATOM_KEY_WINDOW * a.c_atom + 4 * mm(n_atoms, a.c_atom, a.c_atom)
    return local + transition(n_atoms, a.c_atom, expand=2)


def diffusion_transformer_block(a: ArchConfig, n):
    return attention(n, a.c_token) + mm(n * n, a.c_z, N_HEADS_PAIR_BIAS) + transition(n, a.c_token, expand=2)


def flops_estimate(a: ArchConfig, w: WorkloadShape) -> dict:
    """FLOPs breakdown ``{msa, pairformer, diffusion, total}`` as exact integers."""
    n, m = w.n_tokens, w.n_msa_rows
    msa = a.n_cycles * a.n_msa_blocks * msa_block(a, n, m)
    pf = a.n_cycles * a.n_pairformer_blocks * pairformer_block(a, n)
    per_step = ((a.n_diffusion_encoder + a.n_diffusion_decoder) * atom_block(a, w.n_atoms)
                + a.n_diffusion_transformer * diffusion_transformer_block(a, n))
    diff = a.n_diffusion_steps * per_step
    return {"msa": msa, "pairformer": pf, "diffusion": diff, "total": msa + pf + diff}


def flops_curve(a: ArchConfig, axis: str, grid, fixed: WorkloadShape | None = None) -> list:
    """One row per grid value of ``axis`` (``tokens``, ``msa`` or ``atoms``)."""
    fixed = fixed or WorkloadShape()
    field = {"tokens": "n_tokens", "msa": "n_msa_rows", "atoms": "n_atoms"}.get(axis)
    if field is None:
        raise ValidationError(f"unknown sweep axis {axis!r}")
    grid = list(grid)
    if not grid:
        raise ValidationError("sweep grid is empty")
    rows = []
    for g in grid:
        w = replace(fixed, **{field: int(g)})
        est = flops_estimate(a, w)
        rows.append({"model": a.name, "n_tokens": w.n_tokens, "n_msa": w.n_msa_rows, "n_atoms": w.n_atoms,
                     "msa_flops": est["msa"], "pairformer_flops": est["pairformer"],
                     "diffusion_flops": est["diffusion"], "total": est["total"]})
    return rows


CSV_COLUMNS = ("model", "n_tokens", "n_msa", "n_atoms", "msa_flops", "pairformer_flops", "diffusion_flops", "total")


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
