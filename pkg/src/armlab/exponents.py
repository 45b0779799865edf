"""Closed-form arm exponents, the kappa <-> q dictionary, and the auxiliary
exponent functions u1, u2, v together with their composition identities.

Nine exponent families are supported, six for boundary (half-plane) arm
patterns split across the two boundary-condition classes "11" and "01",
and three for interior patterns, plus the conjectural one-arm exponent.
All evaluation is exact 64-bit arithmetic; identities among families hold
to 1e-12 and are enforced by the test suite.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import DomainError

__all__ = [
    "ExponentFamily",
    "BOUNDARY_FAMILIES",
    "INTERIOR_FAMILIES",
    "kappa_from_q",
    "q_from_kappa",
    "boundary_exponent",
    "interior_exponent",
    "one_arm_conjectured",
    "u1",
    "u2",
    "v",
    "ExponentRow",
    "exponent_table",
    "pattern_word",
    "arm_count",
]


class ExponentFamily(enum.Enum):
    """Tags for the supported exponent formulas."""

    BOUNDARY_ALPHA_ODD = "boundary_alpha_odd"    # bc 11, pattern 010...10, length 2j-1
    BOUNDARY_BETA_EVEN = "boundary_beta_even"    # bc 11, pattern 010...1,  length 2j
    BOUNDARY_GAMMA_ODD = "boundary_gamma_odd"    # bc 11, pattern 101...01, length 2j+1
    BOUNDARY_ALPHA_EVEN = "boundary_alpha_even"  # bc 01, pattern 10...10,  length 2j
    BOUNDARY_BETA_ODD = "boundary_beta_odd"      # bc 01, pattern 10...101, length 2j-1
    BOUNDARY_GAMMA_EVEN = "boundary_gamma_even"  # bc 01, pattern 0101...01, length 2j
    INTERIOR_ALPHA = "interior_alpha"            # pattern 10...10,  length 2j
    INTERIOR_BETA = "interior_beta"              # pattern 10...101, length 2j+1
    INTERIOR_GAMMA = "interior_gamma"            # pattern 0110...10, length 2j+2
    ONE_ARM_CONJECTURE = "one_arm_conjectured"   # single arm, conjectural


BOUNDARY_FAMILIES = (
    ExponentFamily.BOUNDARY_ALPHA_ODD,
    ExponentFamily.BOUNDARY_BETA_EVEN,
    ExponentFamily.BOUNDARY_GAMMA_ODD,
    ExponentFamily.BOUNDARY_ALPHA_EVEN,
    ExponentFamily.BOUNDARY_BETA_ODD,
    ExponentFamily.BOUNDARY_GAMMA_EVEN,
)

INTERIOR_FAMILIES = (
    ExponentFamily.INTERIOR_ALPHA,
    ExponentFamily.INTERIOR_BETA,
    ExponentFamily.INTERIOR_GAMMA,
)

# Boundary-condition label per family ("-" where the notion does not apply).
BC_LABEL = {
    ExponentFamily.BOUNDARY_ALPHA_ODD: "11",
    ExponentFamily.BOUNDARY_BETA_EVEN: "11",
    ExponentFamily.BOUNDARY_GAMMA_ODD: "11",
    ExponentFamily.BOUNDARY_ALPHA_EVEN: "01",
    ExponentFamily.BOUNDARY_BETA_ODD: "01",
    ExponentFamily.BOUNDARY_GAMMA_EVEN: "01",
    ExponentFamily.INTERIOR_ALPHA: "-",
    ExponentFamily.INTERIOR_BETA: "-",
    ExponentFamily.INTERIOR_GAMMA: "-",
    ExponentFamily.ONE_ARM_CONJECTURE: "-",
}


def _require_kappa_open(kappa: float) -> float:
    kappa = float(kappa)
    if not 4.0 < kappa < 8.0:
        raise DomainError(f"kappa must lie in the open interval (4, 8), got {kappa}")
    return kappa


def kappa_from_q(q: float) -> float:
    """Map the cluster weight q in (0, 4] to kappa = 4*pi/arccos(-sqrt(q)/2).

    q in (0, 4) gives kappa in (4, 8); q = 4 gives exactly 4, the boundary
    of validity for every exponent formula here (they reject kappa = 4).
    """
    q = float(q)
    if not 0.0 < q <= 4.0:
        raise DomainError(f"q must lie in (0, 4], got {q}")
    return 4.0 * math.pi / math.acos(-math.sqrt(q) / 2.0)


def q_from_kappa(kappa: float) -> float:
    """Inverse dictionary: the unique q in (0, 4] with kappa_from_q(q) = kappa.

    Requires kappa in [4, 8); round-trips with kappa_from_q to 1e-12.
    """
    kappa = float(kappa)
    if not 4.0 <= kappa < 8.0:
        raise DomainError(f"kappa must lie in [4, 8), got {kappa}")
    c = math.cos(4.0 * math.pi / kappa)
    return 4.0 * c * c


def arm_count(family: ExponentFamily, j: int) -> int:
    """Number of arms (pattern length) for the family at index j."""
    if family in (ExponentFamily.BOUNDARY_ALPHA_ODD, ExponentFamily.BOUNDARY_BETA_ODD):
        return 2 * j - 1
    if family in (
        ExponentFamily.BOUNDARY_BETA_EVEN,
        ExponentFamily.BOUNDARY_ALPHA_EVEN,
        ExponentFamily.BOUNDARY_GAMMA_EVEN,
        ExponentFamily.INTERIOR_ALPHA,
    ):
        return 2 * j
    if family in (ExponentFamily.BOUNDARY_GAMMA_ODD, ExponentFamily.INTERIOR_BETA):
        return 2 * j + 1
    if family is ExponentFamily.INTERIOR_GAMMA:
        return 2 * j + 2
    if family is ExponentFamily.ONE_ARM_CONJECTURE:
        return 1
    raise DomainError(f"unsupported family {family}")


def pattern_word(family: ExponentFamily, j: int) -> str:
    """Arm color word (over {0,1}) read in the family's stated order."""
    n = arm_count(family, j)
    if family is ExponentFamily.INTERIOR_GAMMA:
        return "01" + "10" * j
    if family is ExponentFamily.ONE_ARM_CONJECTURE:
        return "1"
    start = "0" if family in (
        ExponentFamily.BOUNDARY_ALPHA_ODD,
        ExponentFamily.BOUNDARY_BETA_EVEN,
        ExponentFamily.BOUNDARY_GAMMA_EVEN,
    ) else "1"
    bits = "01" if start == "0" else "10"
    return (bits * n)[:n]


def boundary_exponent(family: ExponentFamily, j: int, kappa: float) -> float:
    """Evaluate one of the six boundary exponent formulas.

    j >= 1; j = 0 is accepted and returns 0 for every boundary family
    (the zero conventions for the degenerate subscripts).
    """
    if family not in BOUNDARY_FAMILIES:
        raise DomainError(f"{family} is not a boundary family")
    j = int(j)
    if j < 0:
        raise DomainError("arm index j must be >= 0")
    kappa = _require_kappa_open(kappa)
    if j == 0:
        return 0.0
    if family is ExponentFamily.BOUNDARY_ALPHA_ODD:
        return j * (4 * j + 4 - kappa) / kappa
    if family is ExponentFamily.BOUNDARY_BETA_EVEN:
        return j * (4 * j + kappa - 4) / kappa
    if family is ExponentFamily.BOUNDARY_GAMMA_ODD:
        return (j + 1) * (4 * j + 3 * kappa - 16) / kappa \
            + (kappa - 6) * (kappa - 8) / (2 * kappa)
    if family is ExponentFamily.BOUNDARY_ALPHA_EVEN:
        return j * (4 * j + 8 - kappa) / kappa
    if family is ExponentFamily.BOUNDARY_BETA_ODD:
        return j * (4 * j + kappa - 8) / kappa
    # BOUNDARY_GAMMA_EVEN
    return j * (4 * j + 3 * kappa - 16) / kappa \
        + (kappa - 4) * (kappa - 6) / (2 * kappa)


def interior_exponent(family: ExponentFamily, j: int, kappa: float) -> float:
    """Evaluate one of the three interior exponent formulas (j >= 1)."""
    if family not in INTERIOR_FAMILIES:
        raise DomainError(f"{family} is not an interior family")
    j = int(j)
    if j < 1:
        raise DomainError("interior families require j >= 1")
    kappa = _require_kappa_open(kappa)
    if family is ExponentFamily.INTERIOR_ALPHA:
        return (16 * j * j - (kappa - 4) ** 2) / (8 * kappa)
    if family is ExponentFamily.INTERIOR_BETA:
        return j * (2 * j + kappa - 4) / kappa
    # INTERIOR_GAMMA
    return (4 * (2 * j + kappa - 4) ** 2 - (kappa - 4) ** 2) / (8 * kappa)


def one_arm_conjectured(kappa: float) -> float:
    """Conjectural one-arm exponent (8-kappa)(3*kappa-8)/(32*kappa).

    Accepts kappa in (4, 8]; the right endpoint evaluates to 0 exactly.
    The value is a conjecture, not a theorem, for general q.
    """
    kappa = float(kappa)
    if not 4.0 < kappa <= 8.0:
        raise DomainError(f"kappa must lie in (4, 8], got {kappa}")
    return (8.0 - kappa) * (3.0 * kappa - 8.0) / (32.0 * kappa)


def _sqrt_shift(lam: float, kappa: float, half_offset: float) -> float:
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    return math.sqrt(4.0 * kappa * lam + (kappa / 2.0 - half_offset) ** 2)


def u1(lam: float, kappa: float) -> float:
    """Derivative-moment exponent behind the "11" gamma family.

    u1(0) = 1 for kappa in (4, 8), and u1(b) + b with b the odd "01" beta
    exponent at index j reproduces the "11" gamma exponent at index j.
    """
    kappa = float(kappa)
    if kappa <= 4.0:
        raise DomainError(f"kappa must be > 4, got {kappa}")
    root = _sqrt_shift(float(lam), kappa, 4.0)
    return (kappa * kappa - 6 * kappa + 16) / (4 * kappa) \
        + (kappa - 2) / (2 * kappa) * root


def u2(lam: float, kappa: float) -> float:
    """Derivative-moment exponent behind the "01" gamma family.

    u2(0) = (kappa-4)/2, the two-arm "01" gamma value.
    """
    kappa = float(kappa)
    if kappa <= 4.0:
        raise DomainError(f"kappa must be > 4, got {kappa}")
    root = _sqrt_shift(float(lam), kappa, 2.0)
    return (kappa - 4) * (kappa + 2) / (4 * kappa) \
        + (kappa - 2) / (2 * kappa) * root


def v(lam: float, kappa: float) -> float:
    """Interior derivative-moment exponent; valid for kappa in (0, 8).

    v(0) = 1 - kappa/8, and v composes the boundary families into the
    interior ones: interior = v(boundary) + boundary at matched indices.
    """
    kappa = float(kappa)
    if not 0.0 < kappa < 8.0:
        raise DomainError(f"kappa must lie in (0, 8), got {kappa}")
    root = _sqrt_shift(float(lam), kappa, 4.0)
    return 0.5 - kappa / 16.0 - float(lam) / 2.0 + root / 8.0


@dataclass(frozen=True)
class ExponentRow:
    """One table row: family, index, pattern word, bc label, value."""

    family: str
    j: int
    arms: int
    pattern: str
    bc: str
    value: float


def exponent_table(kappa: float | None = None, q: float | None = None,
                   j_max: int = 3) -> list[ExponentRow]:
    """All nine families for j = 1..j_max plus the one-arm conjecture row.

    Exactly one of kappa, q must be given. Row order is fixed:
    boundary families then interior families (each j ascending), then
    the one-arm row.
    """
    if (kappa is None) == (q is None):
        raise DomainError("give exactly one of kappa or q")
    if q is not None:
        kappa = kappa_from_q(q)
    kappa = _require_kappa_open(kappa)
    if j_max < 1:
        raise DomainError("j_max must be >= 1")

    rows: list[ExponentRow] = []
    for family in BOUNDARY_FAMILIES:
        for j in range(1, j_max + 1):
            rows.append(ExponentRow(
                family=family.value, j=j, arms=arm_count(family, j),
                pattern=pattern_word(family, j), bc=BC_LABEL[family],
                value=boundary_exponent(family, j, kappa)))
    for family in INTERIOR_FAMILIES:
        for j in range(1, j_max + 1):
            rows.append(ExponentRow(
                family=family.value, j=j, arms=arm_count(family, j),
                pattern=pattern_word(family, j), bc=BC_LABEL[family],
                value=interior_exponent(family, j, kappa)))
    one = ExponentFamily.ONE_ARM_CONJECTURE
    rows.append(ExponentRow(
        family=one.value, j=1, arms=1, pattern="1", bc=BC_LABEL[one],
        value=one_arm_conjectured(kappa)))
    return rows
