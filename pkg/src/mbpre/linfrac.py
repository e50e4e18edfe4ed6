"""Exact quenched arithmetic for linear-fractional offspring laws.

A linear-fractional law on K types is given by a mean matrix M and a shift
vector w; the offspring generating function of a type-i parent is

    F^{(i)}(s) = 1 - (M(i), 1 - s) / (1 + (w, 1 - s)).

The family is closed under composition: along an environment L_1..L_n the
generation-n law of a type-i ancestor is again linear-fractional with mean
matrix M_{1,n} = M_1...M_n and shift D_n = D_{n-1} M_n + w_n.  Both grow like
e^{S_n}, so a QuenchedState stores them rescaled by e^{-S_n} together with the
scalar S_n.

Every function here accepts either a single state or a batch of states (leading
array axes), which is how the Monte Carlo estimators push many replicas through
the same formulas at once.

Typical usage example:
    >>> law = LinFracLaw(M=[[1.0, 1.0], [1.0, 1.0]], w=[1.0, 1.0])
    >>> state = step(initial_state([1.0, 1.0]), law)
    >>> local_prob_total(state, 0, 1)
    0.2222222222222222
"""

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln

from .exceptions import DegenerateShiftError, DomainError, EigenMismatchError

logger = logging.getLogger("mbpre")

ArrayLike = Union[float, np.ndarray]

# Relative disagreement tolerated between the components of vM / v
EIGEN_RTOL = 1e-12
POWER_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LinFracLaw:
    """
    One environment letter: mean matrix M and shift vector w.

    Attributes:
        M: K x K nonnegative mean matrix with positive row sums
        w: K-vector of nonnegative shifts
        alpha: Optional ratio bound; when given, max M / min M <= 1 / alpha
    """

    M: np.ndarray
    w: np.ndarray
    alpha: Optional[float] = None

    def __post_init__(self) -> None:
        M = np.array(self.M, dtype=float)
        w = np.array(self.w, dtype=float)

        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
            raise DomainError(f"M must be a square matrix, got shape {M.shape}")
        if w.shape != (M.shape[0],):
            raise DomainError(f"w must have shape ({M.shape[0]},), got {w.shape}")
        if not np.all(np.isfinite(M)) or not np.all(np.isfinite(w)):
            raise DomainError("M and w must be finite")
        if np.any(M < 0) or np.any(M.sum(axis=1) <= 0):
            raise DomainError("M must be nonnegative with positive row sums")
        if np.any(w < 0):
            raise DomainError("w must be nonnegative")
        if self.alpha is not None:
            if not 0.0 < self.alpha < 1.0:
                raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
            if M.min() <= 0 or M.max() / M.min() > (1.0 / self.alpha) * (1 + 1e-12):
                raise DomainError(
                    f"ratio bound violated: max/min = {M.max() / M.min():.6g} "
                    f"> 1/alpha = {1.0 / self.alpha:.6g}"
                )

        M.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "w", w)

    @property
    def K(self) -> int:
        return int(self.M.shape[0])

    @property
    def is_positive(self) -> bool:
        """Whether every entry of M is strictly positive."""
        return bool(np.all(self.M > 0))

    def head_weights(self) -> np.ndarray:
        """
        Return the head-type law h(i, .) of the offspring decomposition.

        Given a nonzero offspring vector, one particle has type J ~ h(i, .) and
        the remaining ones are i.i.d. ~ w/|w|.

        Returns:
            K x K array; rows sum to one, entries may be negative for an
            improper law
        """
        return head_weights(self.M, self.w)

    def is_proper(self, atol: float = 1e-12) -> bool:
        """Whether the fractional-linear form is a probability generating function."""
        return is_proper(self.M, self.w, atol=atol)

    def to_dict(self) -> Dict[str, Any]:
        return {"M": self.M.tolist(), "w": self.w.tolist()}

    @classmethod
    def from_dict(
        cls, data: Dict[str, Any], alpha: Optional[float] = None
    ) -> "LinFracLaw":
        try:
            return cls(M=data["M"], w=data["w"], alpha=alpha)
        except KeyError as e:
            raise DomainError(f"law document is missing {e}", original_exception=e)


def head_weights(M: np.ndarray, w: np.ndarray) -> np.ndarray:
    """
    Head-type weights mu + |w| (mu - pi) for (batched) mean matrices and shifts.

    Args:
        M: (..., K, K) mean matrices
        w: (..., K) shift vectors

    Returns:
        (..., K, K) array of head weights
    """
    M = np.asarray(M, dtype=float)
    w = np.asarray(w, dtype=float)
    mu = M / M.sum(axis=-1, keepdims=True)
    total = w.sum(axis=-1)
    safe = np.where(total > 0, total, 1.0)
    pi = w / safe[..., None]
    return mu + total[..., None, None] * (mu - pi[..., None, :])


def is_proper(
    M: np.ndarray, w: np.ndarray, atol: float = 1e-12
) -> Union[bool, np.ndarray]:
    """
    Check that linear-fractional forms define probability laws.

    The form is a pgf iff every row satisfies |M(i)| <= 1 + |w| and the head
    weights are nonnegative.

    Args:
        M: (..., K, K) mean matrices
        w: (..., K) shift vectors
        atol: Slack for rounding

    Returns:
        A bool for a single law, a boolean array for a batch
    """
    M = np.asarray(M, dtype=float)
    w = np.asarray(w, dtype=float)
    mass_ok = np.all(M.sum(axis=-1) <= 1.0 + w.sum(axis=-1)[..., None] + atol, axis=-1)
    head_ok = np.all(head_weights(M, w) >= -atol, axis=(-2, -1))
    ok = mass_ok & head_ok
    return bool(ok) if np.ndim(ok) == 0 else ok


@dataclass(frozen=True, eq=False)
class QuenchedState:
    """
    Stabilized running products along a (batch of) environment prefix(es).

    Attributes:
        n: Generation count (int, or integer array for masked batches)
        S: Log Perron product S_n
        Mtilde: e^{-S_n} M_{1,n}, shape (..., K, K)
        Dtilde: e^{-S_n} D_n, shape (..., K)
        v: Common left eigenvector, shape (K,)
    """

    n: Union[int, np.ndarray]
    S: ArrayLike
    Mtilde: np.ndarray
    Dtilde: np.ndarray
    v: np.ndarray

    @property
    def K(self) -> int:
        return int(self.v.shape[0])

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return tuple(self.Dtilde.shape[:-1])

    @property
    def scale(self) -> ArrayLike:
        """e^{-S_n}."""
        return np.exp(-np.asarray(self.S))

    def take(self, index: Any) -> "QuenchedState":
        """Select replicas from a batched state."""
        n = self.n[index] if isinstance(self.n, np.ndarray) else self.n
        return QuenchedState(
            n=n,
            S=np.asarray(self.S)[index],
            Mtilde=self.Mtilde[index],
            Dtilde=self.Dtilde[index],
            v=self.v,
        )

    def where(self, mask: np.ndarray, other: "QuenchedState") -> "QuenchedState":
        """Per-replica choice: self where mask holds, other elsewhere."""
        mask = np.asarray(mask, dtype=bool)
        return QuenchedState(
            n=np.where(mask, self.n, other.n),
            S=np.where(mask, self.S, other.S),
            Mtilde=np.where(mask[..., None, None], self.Mtilde, other.Mtilde),
            Dtilde=np.where(mask[..., None], self.Dtilde, other.Dtilde),
            v=self.v,
        )


@dataclass(frozen=True, eq=False)
class DerivedQuantities:
    """Survival quantities read off a quenched state."""

    Q: np.ndarray
    R: np.ndarray
    H: ArrayLike
    u_hat: np.ndarray


def _as_vector(v: Sequence[float]) -> np.ndarray:
    arr = np.array(v, dtype=float)
    bad = arr.ndim != 1 or arr.size < 1 or np.any(arr <= 0)
    if bad or not np.all(np.isfinite(arr)):
        raise DomainError("v must be a strictly positive finite vector")
    return arr


def perron_root(law: LinFracLaw, v: Sequence[float]) -> float:
    """
    Return the Perron root rho of law.M for the common left eigenvector v.

    Args:
        law: Environment letter
        v: Strictly positive K-vector with v M = rho v

    Returns:
        rho

    Raises:
        EigenMismatchError: If the components of vM / v disagree
    """
    v_arr = _as_vector(v)
    if v_arr.shape != (law.K,):
        raise DomainError(f"v must have length {law.K}")
    ratios = (v_arr @ law.M) / v_arr
    rho = float(ratios.mean())
    spread = float(np.max(np.abs(ratios - rho)))
    if spread > EIGEN_RTOL * abs(rho):
        raise EigenMismatchError(
            f"v is not a left eigenvector of M: component ratios {ratios.tolist()}",
            ratios=ratios.tolist(),
        )
    return rho


def initial_state(v: Sequence[float], batch: Optional[int] = None) -> QuenchedState:
    """
    Return the n = 0 state: S = 0, Mtilde = I, Dtilde = 0.

    Args:
        v: Common left eigenvector
        batch: Number of replicas, or None for a single state
    """
    v_arr = _as_vector(v)
    K = v_arr.shape[0]
    if batch is None:
        return QuenchedState(n=0, S=0.0, Mtilde=np.eye(K), Dtilde=np.zeros(K), v=v_arr)
    return QuenchedState(
        n=np.zeros(batch, dtype=np.int64),
        S=np.zeros(batch),
        Mtilde=np.broadcast_to(np.eye(K), (batch, K, K)).copy(),
        Dtilde=np.zeros((batch, K)),
        v=v_arr,
    )


def advance(
    state: QuenchedState, M: np.ndarray, w: np.ndarray, log_rho: ArrayLike
) -> QuenchedState:
    """
    Apply one (batch of) letter(s) with known log Perron roots.

    Args:
        state: Current state
        M: (..., K, K) mean matrices
        w: (..., K) shifts
        log_rho: ln of the Perron roots, broadcastable to the batch shape

    Returns:
        The state after one more generation
    """
    log_rho = np.asarray(log_rho, dtype=float)
    S = np.asarray(state.S) + log_rho
    A = np.asarray(M) / np.exp(log_rho)[..., None, None]
    Mtilde = state.Mtilde @ A
    Dtilde = np.einsum("...j,...jk->...k", state.Dtilde, A) + np.exp(-S)[..., None] * w
    return QuenchedState(n=state.n + 1, S=S, Mtilde=Mtilde, Dtilde=Dtilde, v=state.v)


def step(state: QuenchedState, law: LinFracLaw) -> QuenchedState:
    """
    Compose one more letter onto a single quenched state.

    Args:
        state: Current state; state.v must be a left eigenvector of law.M
        law: Next environment letter

    Returns:
        New state with S' = S + ln rho, Mtilde' = Mtilde M / rho and
        Dtilde' = Dtilde M / rho + e^{-S'} w

    Raises:
        EigenMismatchError: If state.v is not a left eigenvector of law.M
    """
    rho = perron_root(law, state.v)
    return advance(state, law.M, law.w, np.log(rho))


def compose(laws: Iterable[LinFracLaw], v: Sequence[float]) -> QuenchedState:
    """Fold a finite environment sequence into its quenched state."""
    state = initial_state(v)
    for law in laws:
        state = step(state, law)
    return state


def compose_states(prefix: QuenchedState, suffix: QuenchedState) -> QuenchedState:
    """
    Join a prefix state (letters 1..m) and a suffix state (letters m+1..n).

    Uses M_{1,n} = M_{1,m} M_{m+1,n} and D_{1,n} = D_{1,m} M_{m+1,n} + D_{m+1,n}.
    """
    S = np.asarray(prefix.S) + np.asarray(suffix.S)
    Mtilde = prefix.Mtilde @ suffix.Mtilde
    Dtilde = (
        np.einsum("...j,...jk->...k", prefix.Dtilde, suffix.Mtilde)
        + np.exp(-np.asarray(prefix.S))[..., None] * suffix.Dtilde
    )
    return QuenchedState(
        n=prefix.n + suffix.n, S=S, Mtilde=Mtilde, Dtilde=Dtilde, v=prefix.v
    )


def left_eigen_residual(state: QuenchedState) -> float:
    """Largest relative deviation of v Mtilde from v."""
    lhs = np.einsum("j,...jk->...k", state.v, state.Mtilde)
    return float(np.max(np.abs(lhs - state.v) / state.v))


def _require_generations(state: QuenchedState) -> None:
    if np.any(np.asarray(state.n) < 1):
        raise DomainError("closed forms need at least one generation (n >= 1)")


def _denominator(state: QuenchedState) -> ArrayLike:
    # e^{-S}(1 + |D_n|)
    return state.scale + state.Dtilde.sum(axis=-1)


def right_eigenvector(
    Mtilde: np.ndarray,
    v: np.ndarray,
    tol: float = POWER_TOL,
    max_iter: Optional[int] = None,
) -> np.ndarray:
    """
    Right Perron vector of (batched) Mtilde normalized by (v, u) = 1.

    Power iteration from the uniform vector; entries that have not converged
    after max_iter (default 10 K) sweeps are finished with a dense
    eigendecomposition.
    """
    Mtilde = np.asarray(Mtilde, dtype=float)
    K = Mtilde.shape[-1]
    if max_iter is None:
        max_iter = 10 * K
    u = np.broadcast_to(np.full(K, 1.0 / v.sum()), Mtilde.shape[:-1]).copy()
    converged = np.zeros(Mtilde.shape[:-2], dtype=bool)
    for _ in range(max_iter):
        nxt = np.einsum("...jk,...k->...j", Mtilde, u)
        nxt = nxt / (nxt @ v)[..., None]
        change = np.max(np.abs(nxt - u), axis=-1)
        converged = change <= tol * np.max(np.abs(nxt), axis=-1)
        u = nxt
        if np.all(converged):
            return u

    pending = np.argwhere(~np.atleast_1d(converged))
    logger.debug(f"Power iteration fell back to eig for {len(pending)} matrices")
    if u.ndim == 1:
        return _dense_perron_vector(Mtilde, v)
    for idx in pending:
        key = tuple(idx)
        u[key] = _dense_perron_vector(Mtilde[key], v)
    return u


def _dense_perron_vector(matrix: np.ndarray, v: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eig(matrix)
    vec = np.abs(vectors[:, int(np.argmax(values.real))].real)
    return vec / (vec @ v)


def survival_probs(
    state: QuenchedState, with_eigenvector: bool = True
) -> DerivedQuantities:
    """
    Survival and extinction probabilities after n generations.

    Args:
        state: Quenched state with n >= 1
        with_eigenvector: Also compute u(M_{1,n}) by power iteration

    Returns:
        DerivedQuantities with Q(i) = |Mtilde(i)| / (e^{-S} + |Dtilde|),
        R = 1 - Q and H = |Dtilde| / (e^{-S} + |Dtilde|)
    """
    _require_generations(state)
    den = _denominator(state)
    Q = np.clip(state.Mtilde.sum(axis=-1) / np.asarray(den)[..., None], 0.0, 1.0)
    H = state.Dtilde.sum(axis=-1) / den
    if with_eigenvector:
        u_hat = right_eigenvector(state.Mtilde, state.v)
    else:
        u_hat = np.full(state.Dtilde.shape, np.nan)
    return DerivedQuantities(Q=Q, R=1.0 - Q, H=H, u_hat=u_hat)


def local_prob_total(
    state: QuenchedState, i: int, z: int, scaled: bool = False
) -> ArrayLike:
    """
    P_{e_i}(|Z_n| = z) for z >= 1.

    Evaluates e^{-S} Q(i)^2 / |Mtilde(i)| H^{z-1}, which simplifies to
    e^{-S} |Mtilde(i)| / (e^{-S} + |Dtilde|)^2 H^{z-1}.

    Args:
        state: Quenched state with n >= 1
        i: Ancestor type
        z: Population size, at least 1
        scaled: Return e^{S_n} P instead of P

    Raises:
        DomainError: If z < 1
    """
    if z < 1:
        raise DomainError(f"z must be at least 1, got {z}")
    _require_generations(state)
    den = _denominator(state)
    H = state.Dtilde.sum(axis=-1) / den
    core = state.Mtilde[..., i, :].sum(axis=-1) / den**2 * H ** (z - 1)
    if not scaled:
        core = state.scale * core
    return core if np.ndim(core) else float(core)


def _check_composition(z: Sequence[int], K: int) -> np.ndarray:
    arr = np.asarray(z, dtype=np.int64)
    if arr.shape != (K,) or np.any(arr < 0):
        raise DomainError(f"z must be a nonnegative integer {K}-vector, got {z}")
    if arr.sum() == 0:
        raise DomainError("z must be nonzero")
    return arr


def log_multinomial(z: np.ndarray) -> float:
    """ln(|z|! / prod z_r!)."""
    z = np.asarray(z)
    return float(gammaln(z.sum() + 1) - gammaln(z + 1).sum())


def local_prob_vector(
    state: QuenchedState,
    i: int,
    z: Sequence[int],
    scaled: bool = False,
    counter: Optional[Counter] = None,
) -> ArrayLike:
    """
    P_{e_i}(Z_n = z) for a nonzero type vector z.

    The bracket of the closed form is split as
    sum_j (z_j/|z|)(Mtilde(i,j)/Dtilde(j) - |Mtilde(i)|/|Dtilde|)
    + |Mtilde(i)| e^{-S} / (|Dtilde| (e^{-S} + |Dtilde|)),
    so the second difference is evaluated without cancellation.

    Args:
        state: Quenched state with n >= 1
        i: Ancestor type
        z: Nonzero K-vector of counts
        scaled: Return e^{S_n} P instead of P
        counter: Optional Counter; "clamped" is incremented per clamped entry

    Raises:
        DomainError: If z = 0
        DegenerateShiftError: If D_n(j) = 0 for some j with z_j > 0
    """
    z_arr = _check_composition(z, state.K)
    _require_generations(state)

    support = z_arr > 0
    Dt = state.Dtilde
    if np.any(Dt[..., support] <= 0):
        raise DegenerateShiftError(
            "shift accumulation D_n vanishes on a type present in z"
        )

    m = int(z_arr.sum())
    den = np.asarray(_denominator(state))
    abs_D = Dt.sum(axis=-1)
    rows = state.Mtilde[..., i, :].sum(axis=-1)

    log_prod = log_multinomial(z_arr) + np.sum(
        z_arr[support] * np.log(Dt[..., support] / den[..., None]), axis=-1
    )
    weights = z_arr[support] / m
    head = state.Mtilde[..., i, support] / Dt[..., support]
    spread = np.sum(weights * (head - (rows / abs_D)[..., None]), axis=-1)
    if scaled:
        bracket = np.exp(np.asarray(state.S)) * spread + rows / (abs_D * den)
    else:
        bracket = spread + rows * state.scale / (abs_D * den)

    prob = np.exp(log_prod) * bracket
    negative = prob < 0
    if np.any(negative):
        clamped = int(np.count_nonzero(negative))
        logger.debug(f"Clamped {clamped} negative vector probabilities to 0")
        if counter is not None:
            counter["clamped"] += clamped
        prob = np.where(negative, 0.0, prob)
    if not scaled:
        prob = np.minimum(prob, 1.0)
    return prob if np.ndim(prob) else float(prob)


def gf_eval(state: QuenchedState, i: int, s: Sequence[float]) -> ArrayLike:
    """
    Generating function F_{0,n}^{(i)}(s) = 1 - (M_{1,n}(i), 1-s) / (1 + (D_n, 1-s)).

    Args:
        state: Quenched state (n = 0 gives s_i)
        i: Ancestor type
        s: Point of [0, 1]^K
    """
    s_arr = np.asarray(s, dtype=float)
    if s_arr.shape != (state.K,) or np.any(s_arr < 0) or np.any(s_arr > 1):
        raise DomainError(f"s must lie in [0, 1]^{state.K}")
    t = 1.0 - s_arr
    num = state.Mtilde[..., i, :] @ t
    den = state.scale + state.Dtilde @ t
    return 1.0 - num / den


def prob_from_population(
    state: QuenchedState, z: Sequence[int], l: int, scaled: bool = False
) -> ArrayLike:
    """
    P_z(Z_n = e_l): start from the population z, end with a single type-l particle.

    Exactly one of the |z| independent families survives, with one type-l
    descendant, and every other family dies out.
    """
    z_arr = _check_composition(z, state.K)
    quantities = survival_probs(state, with_eigenvector=False)
    R = quantities.R
    e_l = np.zeros(state.K, dtype=np.int64)
    e_l[l] = 1
    total = np.zeros(state.batch_shape)
    for j in np.flatnonzero(z_arr):
        single = local_prob_vector(state, int(j), e_l, scaled=scaled)
        others = np.ones(state.batch_shape)
        for k in range(state.K):
            power = z_arr[k] - (1 if k == j else 0)
            if power:
                others = others * R[..., k] ** power
        total = total + z_arr[j] * single * others
    return total if np.ndim(total) else float(total)


def _poly_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    degree = a.shape[-1]
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
    for d in range(degree):
        out[..., d] = np.sum(a[..., : d + 1] * b[..., d::-1], axis=-1)
    return out


def total_size_law(
    state: QuenchedState, z: Sequence[int], k_max: int, scaled: bool = False
) -> np.ndarray:
    """
    P_z(|Z_n| = k) for k = 0..k_max by truncated multiplication of pgfs.

    Each type-j ancestor contributes the series
    R(j) + c_j x / (1 - H x) with c_j = e^{-S} |Mtilde(j)| / (e^{-S} + |Dtilde|)^2.

    Returns:
        Array of shape (..., k_max + 1)
    """
    z_arr = _check_composition(z, state.K)
    _require_generations(state)
    den = np.asarray(_denominator(state))
    H = state.Dtilde.sum(axis=-1) / den
    rows = state.Mtilde.sum(axis=-1)
    R = survival_probs(state, with_eigenvector=False).R
    c = np.asarray(state.scale)[..., None] * rows / den[..., None] ** 2

    powers = np.arange(k_max)
    result = np.zeros(state.batch_shape + (k_max + 1,))
    result[..., 0] = 1.0
    for j in range(state.K):
        factor = np.zeros(state.batch_shape + (k_max + 1,))
        factor[..., 0] = R[..., j]
        factor[..., 1:] = c[..., j, None] * np.asarray(H)[..., None] ** powers
        for _ in range(int(z_arr[j])):
            result = _poly_mul(result, factor)
    if scaled:
        result = result * np.exp(np.asarray(state.S))[..., None]
    return result
