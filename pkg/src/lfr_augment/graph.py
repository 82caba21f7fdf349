"""
Signal-level dependency graph of an LFR interconnection.

Nodes are the scalar entries of the signal groups x, u, z_b, z_a, w_b, w_a, x+ and y.
An edge j -> i exists when signal i depends on signal j through W or through phi.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional, Union

import numpy as np
from pydantic import BaseModel, Field

from lfr_augment.errors import ConstructionError, DimensionError, LfrAugmentException
from lfr_augment.model_core import (
    BLOCK_LAYOUT,
    DZW_BLOCKS,
    AugmentedModel,
    Dimensions,
    DzwMode,
)
from lfr_augment.structures import (
    CATALOG,
    CanonicalStructure,
    canonical_structure,
    parse_label,
)

logger = logging.getLogger("global_logger")

GROUPS = ("x", "u", "z_b", "z_a", "w_b", "w_a", "x+", "y")
DET_TOLERANCE = 1e-9

# W row groups are the destinations; the state row of W feeds x+
_ROW_TO_NODE = {"x": "x+", "y": "y", "z_b": "z_b", "z_a": "z_a"}


@dataclass
class BlockAdjacency:
    """Boolean dependency blocks keyed by (destination group, source group)."""

    dims: Dimensions
    blocks: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def size(self, group: str) -> int:
        return self.dims.group_size("x" if group == "x+" else group)

    def block(self, dst: str, src: str) -> np.ndarray:
        if (dst, src) in self.blocks:
            return self.blocks[(dst, src)]
        return np.zeros((self.size(dst), self.size(src)), dtype=bool)

    def set_block(self, dst: str, src: str, pattern: Any) -> None:
        value = np.asarray(pattern, dtype=bool)
        expected = (self.size(dst), self.size(src))
        if value.shape != expected:
            raise DimensionError(f"P[{dst},{src}]", expected, tuple(value.shape))
        if dst in ("x", "u") or src in ("x+", "y"):
            if value.any():
                raise ConstructionError(f"{dst} <- {src} contradicts the source/sink layout")
        self.blocks[(dst, src)] = value

    def offsets(self) -> dict[str, int]:
        offsets, total = {}, 0
        for group in GROUPS:
            offsets[group] = total
            total += self.size(group)
        return offsets

    @property
    def n_nodes(self) -> int:
        return sum(self.size(g) for g in GROUPS)

    def to_dense(self) -> np.ndarray:
        """Full matrix P with P[i, j] true for an edge j -> i."""
        offsets = self.offsets()
        dense = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for (dst, src), value in self.blocks.items():
            r, c = offsets[dst], offsets[src]
            dense[r : r + value.shape[0], c : c + value.shape[1]] = value
        return dense

    def node_labels(self) -> list[str]:
        return [f"{group}[{i}]" for group in GROUPS for i in range(self.size(group))]

    def dzw_pattern(self) -> np.ndarray:
        """Boolean D_zw over (z_b; z_a) x (w_b; w_a)."""
        return np.block(
            [
                [self.block("z_b", "w_b"), self.block("z_b", "w_a")],
                [self.block("z_a", "w_b"), self.block("z_a", "w_a")],
            ]
        )


class BlockPatternSpec(BaseModel):
    """JSON description of a structural pattern.

    `true_blocks` marks whole W blocks as present; `entries` gives entry-level patterns
    for individual blocks. P_b and P_a default to fully connected.
    """

    dims: dict[str, int]
    true_blocks: list[str] = Field(default_factory=list)
    entries: dict[str, list[list[bool]]] = Field(default_factory=dict)
    p_b: Optional[list[list[bool]]] = None
    p_a: Optional[list[list[bool]]] = None
    c2: bool = True


def _w_block_patterns(adj: BlockAdjacency, patterns: dict[str, np.ndarray]) -> None:
    for name, rows, cols in BLOCK_LAYOUT:
        if name in patterns:
            adj.set_block(_ROW_TO_NODE[rows], cols, patterns[name])


def build_adjacency(source: Union[AugmentedModel, BlockPatternSpec]) -> BlockAdjacency:
    """Block adjacency of a model or a pattern specification.

    For a model, a W block counts as fully present when it is declared trainable,
    otherwise its nonzero entries do.

    Raises:
        DimensionError: a pattern block has the wrong shape
    """
    if isinstance(source, AugmentedModel):
        dims = source.dims
        adj = BlockAdjacency(dims=dims)
        patterns = {}
        for name, _, _ in BLOCK_LAYOUT:
            value = source.block(name)
            if source.block_trainable(name):
                patterns[name] = np.ones(value.shape, dtype=bool)
            else:
                patterns[name] = value != 0
        _w_block_patterns(adj, patterns)
        adj.set_block("w_b", "z_b", source.base.jacobian_pattern)
        adj.set_block("w_a", "z_a", source.aug.pattern(dims.n_z_a))
        return adj

    try:
        dims = Dimensions(**source.dims)
    except TypeError as e:
        raise ConstructionError(f"pattern dims are incomplete: {e}") from e
    adj = BlockAdjacency(dims=dims)
    patterns = {}
    for name in source.true_blocks:
        patterns[name] = np.ones(dims.block_shape(name), dtype=bool)
    for name, rows in source.entries.items():
        value = np.asarray(rows, dtype=bool)
        if value.size == 0 and 0 in dims.block_shape(name):
            value = np.zeros(dims.block_shape(name), dtype=bool)
        if value.shape != dims.block_shape(name):
            raise DimensionError(name, dims.block_shape(name), tuple(value.shape))
        patterns[name] = value
    _w_block_patterns(adj, patterns)
    p_b = np.ones((dims.n_w_b, dims.n_z_b), dtype=bool) if source.p_b is None else source.p_b
    p_a = np.ones((dims.n_w_a, dims.n_z_a), dtype=bool) if source.p_a is None else source.p_a
    adj.set_block("w_b", "z_b", p_b)
    adj.set_block("w_a", "z_a", p_a)
    return adj


def is_acyclic(adj: BlockAdjacency) -> tuple[bool, Optional[list[int]]]:
    """Kahn's algorithm on the signal-node graph; returns a topological order if acyclic."""
    dense = adj.to_dense()
    in_degree = dense.sum(axis=1).astype(int)
    queue = deque(int(i) for i in np.flatnonzero(in_degree == 0))
    order: list[int] = []
    while queue:
        node = queue.popleft()
        order.append(node)
        for succ in np.flatnonzero(dense[:, node]):
            in_degree[succ] -= 1
            if in_degree[succ] == 0:
                queue.append(int(succ))
    if len(order) == adj.n_nodes:
        return True, order
    return False, None


def find_cycle(adj: BlockAdjacency) -> Optional[list[int]]:
    """One directed cycle as a node list in edge order, or None."""
    dense = adj.to_dense()
    remaining = np.ones(adj.n_nodes, dtype=bool)
    changed = True
    # strip nodes without predecessors until only cyclic cores and their descendants remain
    while changed:
        has_pred = (dense & remaining[None, :]).any(axis=1)
        drop = remaining & ~has_pred
        changed = bool(drop.any())
        remaining &= ~drop
    if not remaining.any():
        return None
    node = int(np.flatnonzero(remaining)[0])
    seen: dict[int, int] = {}
    path: list[int] = []
    while node not in seen:
        seen[node] = len(path)
        path.append(node)
        node = int(np.flatnonzero(dense[node] & remaining)[0])
    # the walk follows predecessors, so reverse it into edge order
    return list(reversed(path[seen[node] :]))


def check_nilpotent(
    dzw_pattern: Any, p_b: Any, p_a: Any
) -> tuple[bool, Optional[int]]:
    """Whether M = D_zw blockdiag(P_b, P_a) is nilpotent, with the smallest index m."""
    dzw = np.asarray(dzw_pattern, dtype=bool)
    pb = np.asarray(p_b, dtype=bool)
    pa = np.asarray(p_a, dtype=bool)
    pphi = np.zeros((pb.shape[0] + pa.shape[0], pb.shape[1] + pa.shape[1]), dtype=bool)
    pphi[: pb.shape[0], : pb.shape[1]] = pb
    pphi[pb.shape[0] :, pb.shape[1] :] = pa
    if dzw.shape != (pphi.shape[1], pphi.shape[0]):
        raise DimensionError("D_zw", (pphi.shape[1], pphi.shape[0]), tuple(dzw.shape))
    m_pattern = (dzw.astype(np.int64) @ pphi.astype(np.int64)) > 0
    power = m_pattern
    for m in range(1, max(m_pattern.shape[0], 1) + 1):
        if not power.any():
            return True, m
        power = (power.astype(np.int64) @ m_pattern.astype(np.int64)) > 0
    return False, None


# ---- structure detection ----


def _window_ok(
    adj: BlockAdjacency,
    xa: np.ndarray,
    za: np.ndarray,
    wa: np.ndarray,
) -> bool:
    """Closure of an (x_a, z_a, w_a) window: no dependency crosses its border."""
    dims = adj.dims
    x_in = np.zeros(dims.n_x, dtype=bool)
    x_in[dims.n_x_b + xa] = True
    x_out = np.zeros(dims.n_x, dtype=bool)
    x_out[dims.n_x_b :] = ~x_in[dims.n_x_b :]
    z_in = np.zeros(dims.n_z_a, dtype=bool)
    z_in[za] = True
    w_in = np.zeros(dims.n_w_a, dtype=bool)
    w_in[wa] = True

    p_a = adj.block("w_a", "z_a")
    c_z_a = adj.block("z_a", "x")
    d_aa = adj.block("z_a", "w_a")
    a_blk = adj.block("x+", "x")
    b_w_a = adj.block("x+", "w_a")
    crossings = (
        p_a[np.ix_(w_in, ~z_in)],
        p_a[np.ix_(~w_in, z_in)],
        c_z_a[np.ix_(z_in, x_out)],
        c_z_a[np.ix_(~z_in, x_in)],
        d_aa[np.ix_(z_in, ~w_in)],
        d_aa[np.ix_(~z_in, w_in)],
        b_w_a[np.ix_(x_out, w_in)],
        b_w_a[np.ix_(x_in, ~w_in)],
        a_blk[np.ix_(x_in, x_out)],
        a_blk[np.ix_(x_out, x_in)],
    )
    return not any(block.any() for block in crossings)


def _matches_canonical(
    adj: BlockAdjacency,
    canon: CanonicalStructure,
    xa: np.ndarray,
    za: np.ndarray,
    wa: np.ndarray,
) -> bool:
    dims = adj.dims
    windows = {
        "x": np.concatenate([np.arange(dims.n_x_b), dims.n_x_b + xa]).astype(int),
        "u": np.arange(dims.n_u),
        "y": np.arange(dims.n_y),
        "z_b": np.arange(dims.n_z_b),
        "w_b": np.arange(dims.n_w_b),
        "z_a": za,
        "w_a": wa,
    }
    for name, rows, cols in BLOCK_LAYOUT:
        sub = adj.block(_ROW_TO_NODE[rows], cols)[np.ix_(windows[rows], windows[cols])]
        if np.any(sub & ~canon.pattern(name)):
            return False
    return True


def detect_structure(adj: BlockAdjacency, dims: Dimensions) -> list[str]:
    """Catalog labels whose canonical pattern contains the adjacency.

    Each label is tried on every closed window of augmented states, z_a and w_a
    entries, so a composed model reports each of its constituent structures.
    """
    if adj.dims != dims:
        raise ConstructionError(f"adjacency was built for {adj.dims}, not {dims}")
    found = []
    for label in CATALOG:
        level, kind, dynamic = parse_label(label)
        candidates = range(1, dims.n_x_a + 1) if dynamic else range(1)
        for n_x_a_label in candidates:
            canon = canonical_structure(level, kind, dims.n_x_b, n_x_a_label, dims.n_u, dims.n_y)
            if _has_matching_window(adj, canon):
                found.append(label)
                break
    return found


def _has_matching_window(adj: BlockAdjacency, canon: CanonicalStructure) -> bool:
    dims = adj.dims
    n_x, n_z, n_w = canon.dims.n_x_a, canon.dims.n_z_a, canon.dims.n_w_a
    if n_z > dims.n_z_a or n_w > dims.n_w_a:
        return False
    for ox in range(dims.n_x_a - n_x + 1):
        xa = np.arange(ox, ox + n_x)
        for oz in range(dims.n_z_a - n_z + 1):
            za = np.arange(oz, oz + n_z)
            for ow in range(dims.n_w_a - n_w + 1):
                wa = np.arange(ow, ow + n_w)
                if _window_ok(adj, xa, za, wa) and _matches_canonical(adj, canon, xa, za, wa):
                    return True
    return False


# ---- well-posedness ----


@dataclass
class WellPosednessReport:
    acyclic: bool
    topological_order: Optional[list[int]]
    nilpotency_index: Optional[int]
    c2_declared: bool
    sampled_jacobian_ok: Optional[bool] = None
    min_abs_det: Optional[float] = None
    sampled_dets: list[float] = field(default_factory=list)
    cycle: Optional[list[str]] = None
    structures: list[str] = field(default_factory=list)

    @property
    def verdict(self) -> bool:
        return self.acyclic and self.c2_declared

    def summary_lines(self) -> list[str]:
        lines = [
            f"acyclic: {self.acyclic}",
            f"nilpotency index: {self.nilpotency_index if self.nilpotency_index is not None else '-'}",
            f"C2 declared: {self.c2_declared}",
        ]
        if self.cycle:
            lines.append("cycle: " + " -> ".join(self.cycle))
        if self.sampled_jacobian_ok is not None:
            smallest = "-" if self.min_abs_det is None else f"{self.min_abs_det:.3g}"
            lines.append(
                f"sampled determinants ok: {self.sampled_jacobian_ok} (min |det| {smallest})"
            )
        lines.append(f"structures: {', '.join(self.structures) if self.structures else 'flexible'}")
        lines.append(f"verdict: {'well-posed' if self.verdict else 'ill-posed'}")
        return lines


def _sampled_determinants(model: AugmentedModel, sample_count: int, seed: int) -> list[float]:
    dims = model.dims
    rng = np.random.Generator(np.random.Philox(seed))
    W = model.W
    d_bb, d_ba, d_ab, d_aa = (W[name] for name in DZW_BLOCKS)
    dets = []
    for _ in range(sample_count):
        z = rng.uniform(-3.0, 3.0, size=dims.n_z)
        j_b = model.base.jacobian(model.theta_base, z[: dims.n_z_b])
        j_a = model.aug.jacobian(z[dims.n_z_b :])
        if model.mode == DzwMode.UNRESTRICTED:
            m = np.block([[d_bb @ j_b, d_ba @ j_a], [d_ab @ j_b, d_aa @ j_a]])
            det = np.linalg.det(np.eye(dims.n_z) - m)
        else:
            # block triangular: only the diagonal blocks enter the determinant
            det = np.linalg.det(np.eye(dims.n_z_b) - d_bb @ j_b) * np.linalg.det(
                np.eye(dims.n_z_a) - d_aa @ j_a
            )
        dets.append(float(det))
    return dets


def _structural_report(adj: BlockAdjacency, c2: bool) -> WellPosednessReport:
    acyclic, order = is_acyclic(adj)
    nilpotent, index = check_nilpotent(
        adj.dzw_pattern(), adj.block("w_b", "z_b"), adj.block("w_a", "z_a")
    )
    report = WellPosednessReport(
        acyclic=acyclic,
        topological_order=order,
        nilpotency_index=index if nilpotent else None,
        c2_declared=c2,
        structures=detect_structure(adj, adj.dims),
    )
    if not acyclic:
        cycle = find_cycle(adj)
        labels = adj.node_labels()
        report.cycle = None if cycle is None else [labels[i] for i in cycle]
        logger.warning(f"Interconnection has a cycle: {report.cycle}")
    return report


def check_well_posed(
    model: AugmentedModel, sample_count: int = 0, seed: int = 0
) -> WellPosednessReport:
    """Structural well-posedness: acyclic interconnection and a C2 baseline.

    Determinant sampling is a diagnostic only and never changes the verdict.
    """
    if sample_count < 0:
        raise ConstructionError("sample_count must be non-negative")
    report = _structural_report(build_adjacency(model), model.base.c2)
    if sample_count > 0:
        try:
            dets = _sampled_determinants(model, sample_count, seed)
            report.sampled_dets = dets
            report.min_abs_det = float(np.min(np.abs(dets)))
            report.sampled_jacobian_ok = bool(report.min_abs_det > DET_TOLERANCE)
        except (LfrAugmentException, np.linalg.LinAlgError, ValueError) as e:
            logger.warning(f"Determinant sampling failed: {e}")
            report.sampled_jacobian_ok = False
    return report


def check_pattern(spec: BlockPatternSpec) -> WellPosednessReport:
    """Structural checks of a pattern specification; no numeric sampling is possible."""
    return _structural_report(build_adjacency(spec), spec.c2)
