"""Exact parameter and FLOP calculators for multi-input multi-exit networks.

All arithmetic is integer and exact.  FLOPs follow the one-operation-per-
weight-application convention (no 2x multiply-accumulate factor).  Input
layer and exit formulas are exact for the fully connected, convolutional
(stride 1) and transformer-encoder families; backbone lines for the conv
and vit families extend the same per-layer component formulas and are
labelled as convention-dependent in the breakdown.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "CATEGORIES",
    "classify_config",
    "search_space_sizes",
    "fc_input_cost",
    "conv_input_cost",
    "vit_input_cost",
    "fc_exit_cost",
    "conv_exit_cost",
    "vit_exit_cost",
    "ArchSpec",
    "ExitAssignment",
    "CostLine",
    "CostReport",
    "network_cost",
    "fc_network_params",
]

# Configuration taxonomy over (n_inputs, max_exits, depth):
#   SE    single input, single exit
#   EE    single input, several exits
#   MIMO  several inputs, one exit each
#   MIMMO several inputs, all exits active
#   IB    several inputs, strictly between one exit and all exits
CATEGORIES = ("SE", "EE", "MIMO", "MIMMO", "IB")


def classify_config(n_inputs: int, max_exits: int, depth: int) -> str:
    """Name the ensemble category selected by (n_inputs, max_exits, depth)."""
    if n_inputs < 1:
        raise ValueError(f"n_inputs must be >= 1, got {n_inputs}")
    if not 1 <= max_exits <= depth:
        raise ValueError(f"max_exits must satisfy 1 <= K <= D, got K={max_exits}, D={depth}")
    if n_inputs == 1:
        return "SE" if max_exits == 1 else "EE"
    if max_exits == 1:
        return "MIMO"
    if max_exits == depth:
        return "MIMMO"
    return "IB"


def search_space_sizes(n_inputs: int, depth: int) -> tuple[int, int]:
    """Sizes of the naive and reduced configuration search spaces.

    Naive: every nonempty subset of the ``depth`` exits chosen per input,
    (2^D - 1)^N, exact big-integer.  Reduced: N * D choices of
    (n_inputs, max_exits).
    """
    if n_inputs < 1 or depth < 1:
        raise ValueError(f"n_inputs and depth must be >= 1, got {n_inputs}, {depth}")
    naive = (2 ** depth - 1) ** n_inputs
    reduced = n_inputs * depth
    return naive, reduced


def fc_input_cost(width: int, n_inputs: int, in_dim: int) -> tuple[int, int]:
    """Widened fully connected input layer: params and FLOPs both F*N*C + F."""
    _require_positive(width=width, n_inputs=n_inputs, in_dim=in_dim)
    params = width * n_inputs * in_dim + width
    return params, params


def conv_input_cost(width: int, n_inputs: int, in_dim: int, kernel_size: int,
                    height: int, width_px: int) -> tuple[int, int]:
    """Widened stride-1 convolutional input layer.

    params = F*N*C*K*K + F; flops = F*N*C*K*K*H*W + F*H*W.
    """
    _require_positive(width=width, n_inputs=n_inputs, in_dim=in_dim,
                      kernel_size=kernel_size, height=height, width_px=width_px)
    weight = width * n_inputs * in_dim * kernel_size * kernel_size
    params = weight + width
    flops = weight * height * width_px + width * height * width_px
    return params, flops


def vit_input_cost(width: int, patch_size: int, n_inputs: int, in_dim: int,
                   seq_len: int) -> tuple[int, int]:
    """Widened patch-embedding layer.

    params = F*P*P*N*C + F; flops = F*P*P*N*C*S + F*S.
    """
    _require_positive(width=width, patch_size=patch_size, n_inputs=n_inputs,
                      in_dim=in_dim, seq_len=seq_len)
    weight = width * patch_size * patch_size * n_inputs * in_dim
    params = weight + width
    flops = weight * seq_len + width * seq_len
    return params, flops


def fc_exit_cost(feat: int, feat_last: int, n_using: int, out_dim: int) -> tuple[int, int]:
    """Fully connected exit: affine to F_last, batch norm, ReLU, prediction head.

    An exit no input uses (n_using == 0) is not implemented and costs nothing.
    """
    _require_positive(feat=feat, feat_last=feat_last, out_dim=out_dim)
    if n_using < 0:
        raise ValueError(f"n_using must be >= 0, got {n_using}")
    if n_using == 0:
        return 0, 0
    affine = feat * feat_last + feat_last
    bn = 2 * feat_last
    head = feat_last * n_using * out_dim + n_using * out_dim
    params = affine + bn + head
    flops = affine + bn + feat_last + head
    return params, flops


def conv_exit_cost(feat: int, feat_last: int, n_using: int, out_dim: int,
                   height: int, width_px: int) -> tuple[int, int]:
    """Convolutional exit: 1x1 reshaping conv, batch norm, ReLU, global
    average pooling, prediction head."""
    _require_positive(feat=feat, feat_last=feat_last, out_dim=out_dim,
                      height=height, width_px=width_px)
    if n_using < 0:
        raise ValueError(f"n_using must be >= 0, got {n_using}")
    if n_using == 0:
        return 0, 0
    spatial = height * width_px
    head = feat_last * n_using * out_dim + n_using * out_dim
    params = (feat * feat_last + feat_last) + 2 * feat_last + head
    flops = (feat * feat_last * spatial + feat_last * spatial  # 1x1 conv
             + 2 * feat_last * spatial                         # batch norm
             + feat_last * spatial                             # relu
             + feat_last * spatial                             # global avg pool
             + head)
    return params, flops


def vit_exit_cost(width: int, n_using: int, out_dim: int, seq_len: int,
                  n_inputs: int) -> tuple[int, int]:
    """Transformer exit: token-wise affine, GeLU, layer norm, sequence
    reduction, prediction head.  Token count is seq_len + n_inputs."""
    _require_positive(width=width, out_dim=out_dim, seq_len=seq_len, n_inputs=n_inputs)
    if n_using < 0:
        raise ValueError(f"n_using must be >= 0, got {n_using}")
    if n_using == 0:
        return 0, 0
    tokens = seq_len + n_inputs
    head = width * n_using * out_dim + n_using * out_dim
    params = (width * width + width) + 2 * width + head
    flops = (width * width * tokens + width * tokens  # affine
             + width * tokens                         # gelu
             + 2 * width * tokens                     # layer norm
             + width * tokens                         # reduction
             + head)
    return params, flops


@dataclass(frozen=True)
class ArchSpec:
    """Static description of a backbone for cost accounting.

    ``features`` holds the feature size at each depth; ``feat_last`` is the
    hidden width every exit projects to.  Convolutional backbones assume
    stride 1, so the input height/width apply at every depth.
    """

    family: str
    depth: int
    features: tuple[int, ...]
    feat_last: int
    in_dim: int
    out_dim: int
    kernel_size: int | None = None
    height: int | None = None
    width_px: int | None = None
    patch_size: int | None = None
    seq_len: int | None = None

    def __post_init__(self):
        if self.family not in ("fc", "conv", "vit"):
            raise ValueError(f"unknown architecture family: {self.family!r}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if len(self.features) != self.depth:
            raise ValueError(f"need one feature size per depth: got {len(self.features)} for depth {self.depth}")
        _require_positive(feat_last=self.feat_last, in_dim=self.in_dim, out_dim=self.out_dim,
                          **{f"features[{i}]": f for i, f in enumerate(self.features)})
        if self.family == "conv":
            if self.kernel_size is None or self.height is None or self.width_px is None:
                raise ValueError("conv family requires kernel_size, height and width_px")
            _require_positive(kernel_size=self.kernel_size, height=self.height, width_px=self.width_px)
        if self.family == "vit":
            if self.patch_size is None or self.seq_len is None:
                raise ValueError("vit family requires patch_size and seq_len")
            _require_positive(patch_size=self.patch_size, seq_len=self.seq_len)


@dataclass(frozen=True)
class ExitAssignment:
    """How many of the N inputs use the exit at each depth."""

    counts: tuple[int, ...]

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ValueError(f"exit counts must be >= 0, got {self.counts}")

    @classmethod
    def all_active(cls, n_inputs: int, depth: int) -> "ExitAssignment":
        """Training-time assignment: every input uses every exit."""
        return cls(tuple([n_inputs] * depth))

    @classmethod
    def from_theta_star(cls, theta_star) -> "ExitAssignment":
        """Count inputs with nonzero mass per exit in a masked posterior."""
        rows = [list(row) for row in theta_star]
        if not rows:
            raise ValueError("theta_star must have at least one row")
        return cls(tuple(sum(1 for v in col if v > 0) for col in zip(*rows)))

    def validate(self, n_inputs: int, depth: int) -> None:
        if len(self.counts) != depth:
            raise ValueError(f"assignment covers {len(self.counts)} exits but depth is {depth}")
        if any(c > n_inputs for c in self.counts):
            raise ValueError(f"exit counts {self.counts} exceed n_inputs={n_inputs}")


@dataclass(frozen=True)
class CostLine:
    label: str
    params: int
    flops: int


@dataclass(frozen=True)
class CostReport:
    """Exact totals plus a per-component breakdown that sums to them."""

    params: int
    flops: int
    breakdown: tuple[CostLine, ...]

    def __post_init__(self):
        if self.params != sum(line.params for line in self.breakdown):
            raise ValueError("parameter total does not match breakdown")
        if self.flops != sum(line.flops for line in self.breakdown):
            raise ValueError("FLOP total does not match breakdown")

    def to_record(self) -> dict:
        return {
            "params": self.params,
            "flops": self.flops,
            "breakdown": [
                {"label": line.label, "params": line.params, "flops": line.flops}
                for line in self.breakdown
            ],
        }

    def table(self) -> str:
        rows = [("component", "params", "flops")]
        rows += [(line.label, str(line.params), str(line.flops)) for line in self.breakdown]
        rows.append(("total", str(self.params), str(self.flops)))
        widths = [max(len(r[c]) for r in rows) for c in range(3)]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(widths[c]) if c == 0 else cell.rjust(widths[c])
                                   for c, cell in enumerate(row)))
            if i == 0 or i == len(rows) - 2:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)


def network_cost(arch: ArchSpec, n_inputs: int, assignment: ExitAssignment) -> CostReport:
    """Total cost of a network under a given exit assignment.

    Input layer and exit lines follow the exact per-family formulas.
    Backbone lines reuse the same component formulas layer by layer
    (stride 1, width as given); residual skips and backbone activations
    beyond BN/ReLU are not counted.
    """
    if n_inputs < 1:
        raise ValueError(f"n_inputs must be >= 1, got {n_inputs}")
    assignment.validate(n_inputs, arch.depth)

    lines: list[CostLine] = []
    if arch.family == "fc":
        p, f = fc_input_cost(arch.features[0], n_inputs, arch.in_dim)
    elif arch.family == "conv":
        p, f = conv_input_cost(arch.features[0], n_inputs, arch.in_dim,
                               arch.kernel_size, arch.height, arch.width_px)
    else:
        p, f = vit_input_cost(arch.features[0], arch.patch_size, n_inputs,
                              arch.in_dim, arch.seq_len)
    lines.append(CostLine("input layer", p, f))

    for j in range(1, arch.depth + 1):
        feat_in = arch.features[0] if j == 1 else arch.features[j - 2]
        feat_out = arch.features[j - 1]
        lines.append(CostLine(f"block {j} (convention-dependent)",
                              *_block_cost(arch, feat_in, feat_out)))

    for j in range(1, arch.depth + 1):
        n_using = assignment.counts[j - 1]
        if arch.family == "fc":
            p, f = fc_exit_cost(arch.features[j - 1], arch.feat_last, n_using, arch.out_dim)
        elif arch.family == "conv":
            p, f = conv_exit_cost(arch.features[j - 1], arch.feat_last, n_using,
                                  arch.out_dim, arch.height, arch.width_px)
        else:
            p, f = vit_exit_cost(arch.features[j - 1], n_using, arch.out_dim,
                                 arch.seq_len, n_inputs)
        lines.append(CostLine(f"exit {j} (inputs using: {n_using})", p, f))

    params = sum(line.params for line in lines)
    flops = sum(line.flops for line in lines)
    return CostReport(params, flops, tuple(lines))


def _block_cost(arch: ArchSpec, feat_in: int, feat_out: int) -> tuple[int, int]:
    if arch.family == "fc":
        affine = feat_in * feat_out + feat_out
        params = affine + 2 * feat_out
        flops = affine + 2 * feat_out + feat_out
        return params, flops
    if arch.family == "conv":
        spatial = arch.height * arch.width_px
        k2 = arch.kernel_size * arch.kernel_size
        params = feat_in * feat_out * k2 + feat_out + 2 * feat_out
        flops = (feat_in * feat_out * k2 * spatial + feat_out * spatial
                 + 2 * feat_out * spatial + feat_out * spatial)
        return params, flops
    tokens = arch.seq_len + 1
    params = feat_in * feat_out + feat_out + 2 * feat_out
    flops = (feat_in * feat_out * tokens + feat_out * tokens
             + feat_out * tokens + 2 * feat_out * tokens)
    return params, flops


def fc_network_params(n_inputs: int, depth: int, width: int, in_dim: int,
                      raw_out_dim: int) -> int:
    """Analytic parameter count of the trainable fully connected network.

    Uniform width, every exit serving all inputs; matches a constructed
    network's count exactly.
    """
    arch = ArchSpec(family="fc", depth=depth, features=tuple([width] * depth),
                    feat_last=width, in_dim=in_dim, out_dim=raw_out_dim)
    report = network_cost(arch, n_inputs, ExitAssignment.all_active(n_inputs, depth))
    return report.params


def _require_positive(**named: int) -> None:
    for name, value in named.items():
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")
