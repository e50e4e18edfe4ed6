"""Truncated multivariate power series with exact rational coefficients.

The quenched closed forms are checked against a brute-force expansion of the
composed generating function F_1(F_2(...F_n(s))).  Coefficients are kept as
Fractions and everything above a fixed total degree is dropped, so the
coefficients that survive are exact.
"""

from fractions import Fraction
from itertools import product
from typing import Dict, Iterable, List, Sequence, Tuple, Union

from .exceptions import DomainError
from .linfrac import LinFracLaw

Monomial = Tuple[int, ...]
Scalar = Union[int, Fraction]


class TruncatedSeries:
    """Power series in K variables truncated above a total degree."""

    def __init__(self, coeffs: Dict[Monomial, Fraction], K: int, degree: int) -> None:
        self.K = K
        self.degree = degree
        self.coeffs = {
            mono: Fraction(c)
            for mono, c in coeffs.items()
            if c != 0 and sum(mono) <= degree
        }

    @classmethod
    def constant(cls, value: Scalar, K: int, degree: int) -> "TruncatedSeries":
        return cls({(0,) * K: Fraction(value)}, K, degree)

    @classmethod
    def variable(cls, j: int, K: int, degree: int) -> "TruncatedSeries":
        mono = tuple(1 if r == j else 0 for r in range(K))
        return cls({mono: Fraction(1)}, K, degree)

    def _like(self, coeffs: Dict[Monomial, Fraction]) -> "TruncatedSeries":
        return TruncatedSeries(coeffs, self.K, self.degree)

    def _coerce(self, other: Union["TruncatedSeries", Scalar]) -> "TruncatedSeries":
        if isinstance(other, TruncatedSeries):
            if other.K != self.K:
                raise DomainError("series over different numbers of variables")
            return other
        return TruncatedSeries.constant(other, self.K, self.degree)

    def __add__(self, other: Union["TruncatedSeries", Scalar]) -> "TruncatedSeries":
        other = self._coerce(other)
        out = dict(self.coeffs)
        for mono, c in other.coeffs.items():
            out[mono] = out.get(mono, Fraction(0)) + c
        return self._like(out)

    __radd__ = __add__

    def __neg__(self) -> "TruncatedSeries":
        return self._like({mono: -c for mono, c in self.coeffs.items()})

    def __sub__(self, other: Union["TruncatedSeries", Scalar]) -> "TruncatedSeries":
        return self + (-self._coerce(other))

    def __rsub__(self, other: Scalar) -> "TruncatedSeries":
        return self._coerce(other) - self

    def __mul__(self, other: Union["TruncatedSeries", Scalar]) -> "TruncatedSeries":
        if not isinstance(other, TruncatedSeries):
            factor = Fraction(other)
            return self._like({mono: c * factor for mono, c in self.coeffs.items()})
        out: Dict[Monomial, Fraction] = {}
        for (m1, c1), (m2, c2) in product(self.coeffs.items(), other.coeffs.items()):
            mono = tuple(a + b for a, b in zip(m1, m2))
            if sum(mono) <= self.degree:
                out[mono] = out.get(mono, Fraction(0)) + c1 * c2
        return self._like(out)

    __rmul__ = __mul__

    def reciprocal(self) -> "TruncatedSeries":
        """1 / self, which needs a nonzero constant term."""
        c0 = self.coefficient((0,) * self.K)
        if c0 == 0:
            raise DomainError("series without constant term has no reciprocal")
        nilpotent = (self - c0) * (Fraction(-1) / c0)
        term = TruncatedSeries.constant(1, self.K, self.degree)
        total = term
        for _ in range(self.degree):
            term = term * nilpotent
            total = total + term
        return total * (Fraction(1) / c0)

    def __truediv__(self, other: Union["TruncatedSeries", Scalar]) -> "TruncatedSeries":
        return self * self._coerce(other).reciprocal()

    def coefficient(self, mono: Sequence[int]) -> Fraction:
        return self.coeffs.get(tuple(int(m) for m in mono), Fraction(0))

    def total_degree_mass(self, m: int) -> Fraction:
        """Sum of coefficients of all monomials of total degree m."""
        return sum(
            (c for mono, c in self.coeffs.items() if sum(mono) == m), Fraction(0)
        )


def monomials(K: int, total: int) -> Iterable[Monomial]:
    """All K-vectors of nonnegative integers summing to total."""
    if K == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in monomials(K - 1, total - first):
            yield (first,) + rest


def exact_matrix(values: Sequence[Sequence[float]]) -> List[List[Fraction]]:
    return [[Fraction(float(x)) for x in row] for row in values]


def linfrac_apply(
    law: LinFracLaw, args: Sequence[TruncatedSeries]
) -> List[TruncatedSeries]:
    """
    Evaluate F^{(i)}(args) for every parent type i.

    Args:
        law: Environment letter; its float entries are converted exactly
        args: One series per type

    Returns:
        One series per parent type
    """
    M = exact_matrix(law.M)
    w = [Fraction(float(x)) for x in law.w]
    K = law.K
    gaps = [1 - g for g in args]
    denominator = TruncatedSeries.constant(1, K, args[0].degree)
    for j in range(K):
        denominator = denominator + gaps[j] * w[j]
    inverse = denominator.reciprocal()
    out = []
    for i in range(K):
        numerator = TruncatedSeries.constant(0, K, args[0].degree)
        for j in range(K):
            numerator = numerator + gaps[j] * M[i][j]
        out.append(1 - numerator * inverse)
    return out


def composed_series(laws: Sequence[LinFracLaw], degree: int) -> List[TruncatedSeries]:
    """
    Expand F_{0,n}^{(i)}(s) = F_1^{(i)}(F_2(...F_n(s))) for every ancestor type.

    Args:
        laws: Environment letters L_1..L_n (n >= 0)
        degree: Largest total degree kept

    Returns:
        One truncated series per ancestor type i
    """
    if not laws:
        raise DomainError("need at least one environment letter")
    K = laws[0].K
    current = [TruncatedSeries.variable(j, K, degree) for j in range(K)]
    for law in reversed(laws):
        current = linfrac_apply(law, current)
    return current
