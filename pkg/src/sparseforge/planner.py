"""Closed-form planning of FLOP-equivalent sparse layer replacements.

Everything here is pure integer/float arithmetic: given a dense layer shape
and a target sparsity level s, derive the replacement's scale factor (widening
factor, branch count, factor width, or low-rank width), round it to buildable
integer dimensions, and re-solve the effective sparsity so the plan's
multiply-accumulate count matches the dense layer exactly.

Conventions
-----------
* One MAC per multiply-accumulate; a dense linear layer costs
  batch * d_in * d_out MACs and a conv layer
  batch * out_h * out_w * c_in * c_out * k_h * k_w.
* Bias adds are never counted here (they are O(d_out) and reported
  separately by the trainer's audit).
* Derived dimensions round half-up to the nearest multiple of `quantum`
  (default 1); active-weight counts are solved as exact integers afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import InfeasiblePlanError

LINEAR = "linear"
CONV2D = "conv2d"
DEPTHWISE = "depthwise_conv2d"
LAYER_KINDS = (LINEAR, CONV2D, DEPTHWISE)

DENSE = "dense"
SPARSE_WIDE = "sparse_wide"
SPARSE_PARALLEL = "sparse_parallel"
SPARSE_FACTORIZED = "sparse_factorized"
SPARSE_DOPED = "sparse_doped"
LOW_RANK_DENSE = "low_rank_dense"
TRANSFORMS = (DENSE, SPARSE_WIDE, SPARSE_PARALLEL, SPARSE_FACTORIZED,
              SPARSE_DOPED, LOW_RANK_DENSE)

NONLINEARITIES = ("batchnorm_relu", "relu", "identity")

ROLE_FIRST = "boundary_first"
ROLE_LAST = "boundary_last"
ROLE_INTERIOR = "interior"


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves up: floor(x + 0.5)."""
    return int(math.floor(x + 0.5))


def round_to_quantum(x: float, quantum: int = 1) -> int:
    """Round x half-up to the nearest positive multiple of `quantum`."""
    if quantum < 1:
        raise ValueError(f"quantum must be >= 1, got {quantum}")
    return quantum * max(1, round_half_up(x / quantum))


@dataclass(frozen=True)
class LayerSpec:
    """Shape and FLOP-relevant dimensions of one dense layer.

    For linear layers the kernel and spatial fields are all 1. For conv
    layers d_in/d_out are input/output channel counts and out_h/out_w the
    spatial size of the layer's output feature map.
    """

    kind: str
    d_in: int
    d_out: int
    kernel_h: int = 1
    kernel_w: int = 1
    out_h: int = 1
    out_w: int = 1
    has_bias: bool = True
    role: str = ROLE_INTERIOR

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for name in ("d_in", "d_out", "kernel_h", "kernel_w", "out_h", "out_w"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.kind == LINEAR and (self.kernel_h, self.kernel_w,
                                    self.out_h, self.out_w) != (1, 1, 1, 1):
            raise ValueError("linear layers must have unit kernel and spatial dims")
        if self.role not in (ROLE_FIRST, ROLE_LAST, ROLE_INTERIOR):
            raise ValueError(f"unknown role {self.role!r}")

    @property
    def spatial(self) -> int:
        return self.out_h * self.out_w

    @property
    def weight_positions(self) -> int:
        """Total weight storage positions (bias excluded)."""
        if self.kind == DEPTHWISE:
            return self.d_out * self.kernel_h * self.kernel_w
        return self.d_in * self.d_out * self.kernel_h * self.kernel_w

    def matrix_dims(self) -> tuple[int, int]:
        """(fan_in, fan_out) of the layer viewed as a 2-D matrix.

        Conv weights reshape to (c_in*k_h*k_w) x c_out; depthwise to
        (k_h*k_w) x c_out.
        """
        if self.kind == LINEAR:
            return self.d_in, self.d_out
        if self.kind == CONV2D:
            return self.d_in * self.kernel_h * self.kernel_w, self.d_out
        return self.kernel_h * self.kernel_w, self.d_out

    def dense_macs(self, batch: int = 1) -> int:
        return batch * self.spatial * self.weight_positions


@dataclass(frozen=True)
class TensorBudget:
    """One weight tensor of a plan: its matrix shape and active count.

    active == rows*cols means the tensor is dense (no mask). For depthwise
    layers rows is k_h*k_w and cols the output-channel count.
    """

    name: str
    rows: int
    cols: int
    active: int

    @property
    def positions(self) -> int:
        return self.rows * self.cols

    @property
    def is_sparse(self) -> bool:
        return self.active < self.positions


@dataclass(frozen=True)
class TransformPlan:
    """Result of one iso-FLOP derivation for a single layer.

    predicted_macs counts forward multiply-accumulates per batch element
    (spatial positions included for conv layers). active_weights sums active
    positions over every weight tensor of the replacement; cardinality is the
    number of positions a sparse training method can explore.
    """

    transform: str
    sparsity: float
    scale: float
    rounded_scale: tuple[int, ...]
    effective_sparsity: float
    predicted_macs: int
    active_weights: int
    total_weights: int
    cardinality: int
    nonlinearity: str
    tensors: tuple[TensorBudget, ...]

    def to_dict(self) -> dict:
        return {
            "transform": self.transform,
            "sparsity": self.sparsity,
            "scale": self.scale,
            "rounded_scale": list(self.rounded_scale),
            "effective_sparsity": self.effective_sparsity,
            "predicted_macs": self.predicted_macs,
            "active_weights": self.active_weights,
            "total_weights": self.total_weights,
            "cardinality": self.cardinality,
            "nonlinearity": self.nonlinearity,
        }


@dataclass(frozen=True)
class PlannedLayer:
    """A layer of a network plan: original spec, buildable spec, transform."""

    original: LayerSpec
    build: LayerSpec
    plan: TransformPlan


@dataclass(frozen=True)
class NetworkPlan:
    layers: tuple[PlannedLayer, ...]
    shared_widening: float | None
    baseline_total_macs: int
    planned_total_macs: int
    redistributed_sparsity: float | None = None

    def total_cardinality(self) -> int:
        return sum(pl.plan.cardinality for pl in self.layers)

    def to_dict(self) -> dict:
        return {
            "shared_widening": self.shared_widening,
            "baseline_total_macs": self.baseline_total_macs,
            "planned_total_macs": self.planned_total_macs,
            "redistributed_sparsity": self.redistributed_sparsity,
            "total_cardinality": self.total_cardinality(),
            "layers": [
                {
                    "kind": pl.original.kind,
                    "role": pl.original.role,
                    "original_dims": [pl.original.d_in, pl.original.d_out],
                    "build_dims": [pl.build.d_in, pl.build.d_out],
                    "plan": pl.plan.to_dict(),
                }
                for pl in self.layers
            ],
        }


@dataclass(frozen=True)
class IsoFlopAudit:
    """verify_isoflop report for one plan."""

    dense_macs: int
    plan_macs: int
    relative_error: float
    passed: bool
    active_weights: int
    total_weights: int


def _check_sparsity(s: float) -> None:
    if not 0.0 <= s < 1.0:
        raise ValueError(f"sparsity must be in [0, 1), got {s}")


def flop_count(spec: LayerSpec, batch: int = 1, sparsity: float = 0.0) -> int:
    """Forward MACs of `spec` at the given sparsity level.

    Counts one MAC per multiply-accumulate; biases excluded. The sparse count
    is derived from the integer number of active weights,
    round-half-up((1-s) * positions), so the result is always an exact
    integer.
    """
    _check_sparsity(sparsity)
    if batch < 1:
        raise ValueError("batch must be >= 1")
    active = round_half_up((1.0 - sparsity) * spec.weight_positions)
    return batch * spec.spatial * active


def _dense_plan(spec: LayerSpec, sparsity: float = 0.0) -> TransformPlan:
    rows, cols = spec.matrix_dims()
    n = spec.weight_positions
    t = TensorBudget("main", rows, cols, n)
    return TransformPlan(
        transform=DENSE, sparsity=sparsity, scale=1.0, rounded_scale=(),
        effective_sparsity=0.0, predicted_macs=spec.dense_macs(),
        active_weights=n, total_weights=n, cardinality=n,
        nonlinearity="identity", tensors=(t,),
    )


def plan_dense(spec: LayerSpec) -> TransformPlan:
    """Identity plan: the layer kept as-is."""
    return _dense_plan(spec)


def plan_sparse_wide(spec: LayerSpec, s: float, quantum: int = 1) -> TransformPlan:
    """Widen the layer by k = sqrt(1/(1-s)) and make it s-sparse.

    Depthwise layers widen only their output channels with k = 1/(1-s),
    since FLOPs there scale linearly in c_out. After rounding the widened
    dims to `quantum`, the active-weight count is fixed at the original
    dense position count, which keeps the plan exactly iso-FLOP.
    """
    _check_sparsity(s)
    if spec.kind == DEPTHWISE:
        k = 1.0 / (1.0 - s)
        wide_out = round_to_quantum(k * spec.d_out, quantum)
        build = replace(spec, d_out=wide_out)
        rounded = (spec.d_in, wide_out)
    else:
        k = math.sqrt(1.0 / (1.0 - s))
        wide_in = round_to_quantum(k * spec.d_in, quantum)
        wide_out = round_to_quantum(k * spec.d_out, quantum)
        build = replace(spec, d_in=wide_in, d_out=wide_out)
        rounded = (wide_in, wide_out)
    return _solve_wide_plan(spec, build, s, k, rounded)


def _solve_wide_plan(spec: LayerSpec, build: LayerSpec, s: float, k: float,
                     rounded: tuple[int, ...]) -> TransformPlan:
    """Shared tail of sparse-wide planning: solve s_eff on the built shape."""
    active = spec.weight_positions
    positions = build.weight_positions
    if active > positions:
        raise InfeasiblePlanError(
            f"rounded dims {rounded} hold {positions} positions, fewer than "
            f"the {active} active weights needed for iso-FLOP")
    s_eff = 1.0 - active / positions
    rows, cols = build.matrix_dims()
    tensors = (TensorBudget("main", rows, cols, active),)
    return TransformPlan(
        transform=SPARSE_WIDE, sparsity=s, scale=k, rounded_scale=rounded,
        effective_sparsity=s_eff, predicted_macs=spec.spatial * active,
        active_weights=active, total_weights=positions,
        cardinality=positions, nonlinearity="identity", tensors=tensors,
    )


def _split_evenly(total: int, parts: int) -> list[int]:
    """Split `total` into `parts` integers differing by at most 1."""
    base, rem = divmod(total, parts)
    return [base + 1 if i < rem else base for i in range(parts)]


def plan_sparse_parallel(spec: LayerSpec, s: float,
                         nonlinearity: str = "batchnorm_relu") -> TransformPlan:
    """Replace the layer with k = round(1/(1-s)) sparse nonlinear branches.

    Each branch keeps the original matrix shape; the dense position count is
    split across branches (counts differ by at most one) so the summed MACs
    cancel exactly. k = 1 with identity nonlinearity recovers the dense layer.
    Depthwise layers pass through unchanged.
    """
    _check_sparsity(s)
    if spec.kind == DEPTHWISE:
        return _dense_plan(spec, s)
    k_exact = 1.0 / (1.0 - s)
    k = max(1, round_half_up(k_exact))
    rows, cols = spec.matrix_dims()
    n = spec.weight_positions
    per_branch = _split_evenly(n, k)
    tensors = tuple(TensorBudget(f"branch{i}", rows, cols, a)
                    for i, a in enumerate(per_branch))
    positions = k * n
    s_eff = 1.0 - n / positions
    if k == 1:
        nonlinearity = "identity" if s == 0.0 else nonlinearity
    return TransformPlan(
        transform=SPARSE_PARALLEL, sparsity=s, scale=k_exact,
        rounded_scale=(k,), effective_sparsity=s_eff,
        predicted_macs=spec.spatial * n, active_weights=n,
        total_weights=positions, cardinality=positions,
        nonlinearity=nonlinearity, tensors=tensors,
    )


def plan_sparse_factorized(spec: LayerSpec, s: float,
                           nonlinearity: str = "batchnorm_relu") -> TransformPlan:
    """Factor the layer into sparse U (fan_in x d) and V (d x fan_out).

    d = fan_in*fan_out / ((fan_in+fan_out)*(1-s)), rounded half-up. The dense
    position count is split between the factors in proportion to their sizes
    (integer complement split) so U+V MACs equal the dense layer exactly.
    Conv layers factor through the (c_in*k_h*k_w) x c_out reshape: U is a
    k_h x k_w conv to d channels, V a 1x1 conv. Depthwise passes through.
    """
    _check_sparsity(s)
    if spec.kind == DEPTHWISE:
        return _dense_plan(spec, s)
    m_in, m_out = spec.matrix_dims()
    n = m_in * m_out
    span = m_in + m_out
    d_exact = n / (span * (1.0 - s))
    # floor at ceil(n/span): the factors must hold all n active weights
    d = max(round_half_up(d_exact), -(-n // span))
    active_u = min(round_half_up(n * m_in / span), m_in * d)
    active_v = n - active_u
    if active_v > d * m_out:
        # tiny-d corner: V cannot hold its share, shift the excess into U
        active_u += active_v - d * m_out
        active_v = d * m_out
    positions = d * span
    s_eff = 1.0 - n / positions
    tensors = (TensorBudget("factor_u", m_in, d, active_u),
               TensorBudget("factor_v", d, m_out, active_v))
    return TransformPlan(
        transform=SPARSE_FACTORIZED, sparsity=s, scale=d_exact,
        rounded_scale=(d,), effective_sparsity=s_eff,
        predicted_macs=spec.spatial * n, active_weights=n,
        total_weights=positions, cardinality=positions,
        nonlinearity=nonlinearity, tensors=tensors,
    )


def plan_sparse_doped(spec: LayerSpec, s: float,
                      nonlinearity: str = "batchnorm_relu") -> TransformPlan:
    """Dense low-rank pair of width d plus an unstructured sparse matrix.

    d = s*fan_in*fan_out/(fan_in+fan_out), rounded half-up (0 allowed, which
    degenerates to the dense layer). The unstructured matrix keeps
    n - d*(fan_in+fan_out) active weights, so total MACs equal dense exactly.
    d is capped so at least one unstructured weight stays active.
    """
    _check_sparsity(s)
    if spec.kind == DEPTHWISE:
        return _dense_plan(spec, s)
    m_in, m_out = spec.matrix_dims()
    n = m_in * m_out
    span = m_in + m_out
    d_exact = s * n / span
    d = round_half_up(d_exact)
    d = min(d, (n - 1) // span)
    d = max(d, 0)
    active_sparse = n - d * span
    s_eff = 1.0 - active_sparse / n
    tensors = (TensorBudget("lowrank_u", m_in, d, m_in * d),
               TensorBudget("lowrank_v", d, m_out, d * m_out),
               TensorBudget("sparse", m_in, m_out, active_sparse))
    if d == 0:
        nonlinearity = "identity" if s == 0.0 else nonlinearity
    return TransformPlan(
        transform=SPARSE_DOPED, sparsity=s, scale=d_exact,
        rounded_scale=(d,), effective_sparsity=s_eff,
        predicted_macs=spec.spatial * n,
        active_weights=d * span + active_sparse,
        total_weights=d * span + n,
        cardinality=n, nonlinearity=nonlinearity, tensors=tensors,
    )


def plan_low_rank_dense(spec: LayerSpec, k_lr: float,
                        quantum: int = 1) -> TransformPlan:
    """Dense low-rank baseline: widen dims by k_lr, rank d = k*fan_in*fan_out/(fan_in+fan_out).

    Both factors are dense (no masks). The rank formula makes the factors
    FLOP-equal to the *width-scaled* dense layer, which is the reference this
    plan is audited against.
    """
    if k_lr < 1.0:
        raise ValueError(f"k_lr must be >= 1, got {k_lr}")
    if spec.kind == DEPTHWISE:
        return _dense_plan(spec)
    m_in, m_out = spec.matrix_dims()
    d = max(1, round_half_up(k_lr * m_in * m_out / (m_in + m_out)))
    if spec.kind == CONV2D:
        wide_in = round_to_quantum(k_lr * spec.d_in, quantum)
        wide_out = round_to_quantum(k_lr * spec.d_out, quantum)
        w_in = wide_in * spec.kernel_h * spec.kernel_w
    else:
        wide_in = w_in = round_to_quantum(k_lr * spec.d_in, quantum)
        wide_out = round_to_quantum(k_lr * spec.d_out, quantum)
    tensors = (TensorBudget("factor_u", w_in, d, w_in * d),
               TensorBudget("factor_v", d, wide_out, d * wide_out))
    macs = spec.spatial * (w_in * d + d * wide_out)
    total = w_in * d + d * wide_out
    return TransformPlan(
        transform=LOW_RANK_DENSE, sparsity=0.0, scale=k_lr,
        rounded_scale=(d, wide_in, wide_out), effective_sparsity=0.0,
        predicted_macs=macs, active_weights=total, total_weights=total,
        cardinality=total, nonlinearity="identity", tensors=tensors,
    )


_PLANNERS = {
    SPARSE_WIDE: plan_sparse_wide,
    SPARSE_PARALLEL: plan_sparse_parallel,
    SPARSE_FACTORIZED: plan_sparse_factorized,
    SPARSE_DOPED: plan_sparse_doped,
}


def plan_transform(spec: LayerSpec, transform: str, s: float, quantum: int = 1,
                   nonlinearity: str = "batchnorm_relu") -> TransformPlan:
    """Dispatch to the planner for `transform`."""
    if transform == DENSE:
        return plan_dense(spec)
    if transform == SPARSE_WIDE:
        return plan_sparse_wide(spec, s, quantum)
    if transform == LOW_RANK_DENSE:
        raise ValueError("low_rank_dense is planned via plan_low_rank_dense(k_lr)")
    if transform not in _PLANNERS:
        raise ValueError(f"unknown transform {transform!r}")
    return _PLANNERS[transform](spec, s, nonlinearity=nonlinearity)


def cardinality(plan: TransformPlan, spec: LayerSpec) -> int:
    """Mask search-space size: positions a sparse training method can explore."""
    return plan.cardinality


def cardinality_unrounded(transform: str, d_in: int, d_out: int, s: float) -> float:
    """Closed-form search-space size before any integer rounding."""
    _check_sparsity(s)
    n = d_in * d_out
    if transform == SPARSE_WIDE:
        return (1.0 / (1.0 - s)) * n          # k_sw^2 * n
    if transform == SPARSE_PARALLEL:
        return n / (1.0 - s)                   # k_sp * n
    if transform == SPARSE_FACTORIZED:
        return n / (1.0 - s)                   # d_sf * (d_in + d_out)
    if transform == SPARSE_DOPED:
        return float(n)
    raise ValueError(f"no cardinality formula for {transform!r}")


def verify_isoflop(plan: TransformPlan, spec: LayerSpec,
                   tolerance: float = 0.01) -> IsoFlopAudit:
    """Audit a plan's predicted MACs against its dense reference.

    The reference is the dense MAC count of `spec`, except for
    low_rank_dense where it is the width-scaled dense layer (see
    plan_low_rank_dense).
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    if plan.transform == LOW_RANK_DENSE:
        _, wide_in, wide_out = plan.rounded_scale
        ref = replace(spec, d_in=wide_in, d_out=wide_out)
        dense_macs = ref.dense_macs()
    else:
        dense_macs = spec.dense_macs()
    rel = abs(plan.predicted_macs - dense_macs) / dense_macs
    return IsoFlopAudit(
        dense_macs=dense_macs, plan_macs=plan.predicted_macs,
        relative_error=rel, passed=rel <= tolerance,
        active_weights=plan.active_weights, total_weights=plan.total_weights,
    )


def _chain_flatten_factor(prev: LayerSpec, cur: LayerSpec) -> int:
    """Spatial multiplier at a conv->linear boundary, 1 elsewhere."""
    if prev.kind in (CONV2D, DEPTHWISE) and cur.kind == LINEAR:
        return prev.spatial
    return 1


def _validate_chain(specs: list[LayerSpec]) -> None:
    for i in range(1, len(specs)):
        prev, cur = specs[i - 1], specs[i]
        factor = _chain_flatten_factor(prev, cur)
        if cur.d_in != prev.d_out * factor:
            raise ValueError(
                f"layer {i} expects d_in={cur.d_in} but layer {i-1} "
                f"produces {prev.d_out * factor}")


def plan_network(specs: list[LayerSpec], transform: str, s: float,
                 quantum: int = 1, keep_boundary_dense: bool = True,
                 nonlinearity: str = "batchnorm_relu") -> NetworkPlan:
    """Plan every layer of a network with one transform and sparsity level.

    sparse_wide shares a single widening factor across the whole feature
    chain (endpoint features stay fixed); other transforms leave dims
    untouched. Boundary layers stay dense when keep_boundary_dense, with
    whatever widened side the chain forces on them. Depthwise layers under
    non-wide transforms pass through unchanged.
    """
    if not specs:
        raise ValueError("empty layer list")
    if transform not in TRANSFORMS or transform == LOW_RANK_DENSE:
        raise ValueError(f"unsupported network transform {transform!r}")
    if transform != DENSE:
        _check_sparsity(s)
    _validate_chain(specs)
    baseline = sum(sp.dense_macs() for sp in specs)

    shared_k = None
    if transform == SPARSE_WIDE and s > 0.0:
        shared_k = math.sqrt(1.0 / (1.0 - s))

    # Wide transforms rescale the feature chain; everything else keeps shapes.
    prev_out = specs[0].d_in
    planned: list[PlannedLayer] = []
    for i, sp in enumerate(specs):
        is_boundary = sp.role in (ROLE_FIRST, ROLE_LAST) or len(specs) == 1
        if shared_k is None:
            build = sp
        else:
            factor = 1 if i == 0 else _chain_flatten_factor(specs[i - 1], sp)
            d_in = prev_out * factor
            if sp.role == ROLE_LAST or i == len(specs) - 1:
                d_out = sp.d_out
            elif sp.kind == DEPTHWISE:
                # depthwise channels track their input channels
                d_out = round_half_up(d_in * sp.d_out / sp.d_in)
            else:
                d_out = round_to_quantum(shared_k * sp.d_out, quantum)
            build = replace(sp, d_in=d_in, d_out=d_out)
            prev_out = d_out

        if transform == DENSE:
            plan = plan_dense(build)
        elif is_boundary and keep_boundary_dense:
            plan = plan_dense(build)
        elif transform == SPARSE_WIDE:
            plan = _solve_wide_plan(sp, build, s, shared_k or 1.0,
                                    (build.d_in, build.d_out))
        else:
            plan = plan_transform(sp, transform, s, quantum, nonlinearity)
        planned.append(PlannedLayer(original=sp, build=build, plan=plan))

    planned_total = sum(pl.plan.predicted_macs for pl in planned)
    return NetworkPlan(
        layers=tuple(planned), shared_widening=shared_k,
        baseline_total_macs=baseline, planned_total_macs=planned_total,
    )


def redistribute_sparsity(plan: NetworkPlan,
                          baseline_total_macs: int | None = None) -> NetworkPlan:
    """Re-solve one uniform sparsity over transformed layers to hit the budget.

    Dense (boundary/passthrough) layers and always-dense tensors (low-rank
    pairs) are fixed costs; the remaining sparse mass absorbs
    baseline - fixed. Raises InfeasiblePlanError when the fixed costs alone
    exceed the budget or the solution leaves [0, 1).
    """
    baseline = plan.baseline_total_macs if baseline_total_macs is None \
        else baseline_total_macs
    sparse_mass = 0          # MACs if every masked tensor were fully dense
    fixed = 0                # MACs of dense layers and dense tensors
    for pl in plan.layers:
        for t in pl.plan.tensors:
            cost = pl.build.spatial * t.positions
            if pl.plan.transform == DENSE or not _maskable(pl.plan, t):
                fixed += cost
            else:
                sparse_mass += cost
    if sparse_mass == 0:
        raise InfeasiblePlanError("plan has no transformed layers")
    s_prime = 1.0 - (baseline - fixed) / sparse_mass
    if not 0.0 <= s_prime < 1.0:
        raise InfeasiblePlanError(
            f"fixed MACs {fixed} and budget {baseline} need sparsity "
            f"{s_prime:.4f} outside [0, 1)")

    new_layers = []
    for pl in plan.layers:
        if pl.plan.transform == DENSE:
            new_layers.append(pl)
            continue
        new_layers.append(replace(pl, plan=_rescale_plan(pl, s_prime)))
    planned_total = sum(pl.plan.predicted_macs for pl in new_layers)
    return NetworkPlan(
        layers=tuple(new_layers), shared_widening=plan.shared_widening,
        baseline_total_macs=plan.baseline_total_macs,
        planned_total_macs=planned_total, redistributed_sparsity=s_prime,
    )


def _maskable(plan: TransformPlan, t: TensorBudget) -> bool:
    """Whether a tensor carries a sparsity mask (doped low-rank pairs do not)."""
    if plan.transform == SPARSE_DOPED:
        return t.name == "sparse"
    if plan.transform in (DENSE, LOW_RANK_DENSE):
        return False
    return True


def _rescale_plan(pl: PlannedLayer, s_prime: float) -> TransformPlan:
    """Rewrite a layer plan's active counts for the redistributed sparsity."""
    plan = pl.plan
    maskable = [t for t in plan.tensors if _maskable(plan, t)]
    fixed_tensors = [t for t in plan.tensors if not _maskable(plan, t)]
    mask_positions = sum(t.positions for t in maskable)
    target_active = round_half_up((1.0 - s_prime) * mask_positions)
    target_active = min(target_active, mask_positions)
    # allot actives proportionally, complement-correcting the last tensor
    new_tensors = []
    remaining = target_active
    for i, t in enumerate(maskable):
        if i == len(maskable) - 1:
            a = remaining
        else:
            a = round_half_up(target_active * t.positions / mask_positions)
            a = min(a, t.positions)
        a = min(a, t.positions)
        remaining -= a
        new_tensors.append(replace(t, active=a))
    if remaining > 0:
        # spill leftover into tensors with space, in order
        spilled = []
        for t in new_tensors:
            room = t.positions - t.active
            take = min(room, remaining)
            remaining -= take
            spilled.append(replace(t, active=t.active + take))
        new_tensors = spilled
    order = {t.name: t for t in new_tensors}
    tensors = tuple(order.get(t.name, t) for t in plan.tensors)
    active_total = sum(t.active for t in tensors)
    fixed_macs = pl.build.spatial * sum(t.positions for t in fixed_tensors)
    sparse_active = sum(t.active for t in tensors if _maskable(plan, t))
    s_eff = 1.0 - sparse_active / mask_positions
    return replace(
        plan, effective_sparsity=s_eff,
        predicted_macs=fixed_macs + pl.build.spatial * sparse_active,
        active_weights=active_total, tensors=tensors,
    )
