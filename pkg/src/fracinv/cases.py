"""Built-in benchmark cases for the three inverse problems.

Case ids follow the experiment-config contract: "5.1i" and "5.1ii" recover
an initial state (1D / 2D), "5.2i" and "5.2ii" a separable source factor
(1D / 2D), "5.3" a potential (1D). Each case fixes the known fields, the
hidden truth, the true terminal time 0.5, and per-order Levenberg-Marquardt
defaults. Exact data is generated on a finer space-time mesh than the
inversion mesh (spectrally where the modal solver applies).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .fem import solve_fem
from .grids import Field, Grid1D, Grid2D, GridLike
from .inverse import InverseSetup, LMConfig, Observation
from .mittag_leffler import ml_neg
from .problems import ProblemSpec, TimeGrid, TimeIndependentSource
from .spectral import build_eigendecomposition, estimate_T

__all__ = ["BenchmarkCase", "get_case", "CASE_IDS", "exact_observation",
           "make_setup", "lm_config_for", "tensor_sine_basis",
           "estimate_prior_T", "warm_start_v"]

T_TRUE = 0.5


def _hat(x):
    return np.minimum(x, 1.0 - x)


@dataclass(frozen=True)
class BenchmarkCase:
    case_id: str
    kind: str  # bp | isp | ipp
    domain: str  # interval | unit_square
    truth: Callable
    u0: Optional[Callable]  # known initial state (isp/ipp); None for bp
    f: Optional[Callable]  # known time-independent source (bp/ipp)
    diffusion: Callable | float
    dirichlet: Optional[tuple[float, float]]
    lm_defaults: dict  # alpha -> (gamma0, mu0, rho)
    default_n: int
    default_steps: int
    # exact sine coefficients (w.r.t. sqrt(2) sin(n pi x)) of the estimator's
    # reference field and of the hidden truth, where closed forms exist;
    # avoid aliasing bias in the lambda_n-amplified mode ratios (1D only)
    ref_sine_coeff: Optional[Callable[[np.ndarray], np.ndarray]] = None
    truth_sine_coeff: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def truth_nodal(self, grid: GridLike) -> np.ndarray:
        from .grids import as_nodal_values

        return as_nodal_values(self.truth, grid)


_CASES = {
    "5.1i": BenchmarkCase(
        case_id="5.1i",
        kind="bp",
        domain="interval",
        truth=lambda x: np.sin(np.pi * x),
        u0=None,
        f=_hat,
        diffusion=1.0,
        dirichlet=None,
        lm_defaults={
            0.25: (1e-2, 2.7e-3, 0.8),
            0.50: (1e-2, 6.3e-3, 0.8),
            0.75: (1e-2, 1.3e-2, 0.8),
        },
        default_n=128,
        default_steps=512,
        ref_sine_coeff=lambda n: np.sqrt(2.0) * 2.0 * np.sin(n * np.pi / 2) / (n * np.pi) ** 2,
        truth_sine_coeff=lambda n: np.where(n == 1, 1.0 / np.sqrt(2.0), 0.0),
    ),
    "5.1ii": BenchmarkCase(
        case_id="5.1ii",
        kind="bp",
        domain="unit_square",
        truth=lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y),
        u0=None,
        f=lambda x, y: _hat(x) * np.exp(x) * np.sin(2 * np.pi * y),
        diffusion=lambda x, y: 1.0 + np.sin(np.pi * x) * y * (1.0 - y),
        dirichlet=None,
        lm_defaults={
            0.25: (1e-3, 1.1e-4, 0.8),
            0.50: (1e-3, 2.7e-4, 0.8),
            0.75: (1e-3, 6e-4, 0.8),
        },
        default_n=32,
        default_steps=64,
    ),
    "5.2i": BenchmarkCase(
        case_id="5.2i",
        kind="isp",
        domain="interval",
        truth=lambda x: np.sin(3 * np.pi * x),
        u0=lambda x: np.sin(2 * np.pi * x),
        f=None,
        diffusion=1.0,
        dirichlet=None,
        lm_defaults={
            0.25: (1e-4, 1e-8, 0.8),
            0.50: (1e-4, 5e-8, 0.8),
            0.75: (1e-4, 1e-7, 0.8),
        },
        default_n=128,
        default_steps=512,
        ref_sine_coeff=lambda n: np.where(n == 2, 1.0 / np.sqrt(2.0), 0.0),
        truth_sine_coeff=lambda n: np.where(n == 3, 1.0 / np.sqrt(2.0), 0.0),
    ),
    "5.2ii": BenchmarkCase(
        case_id="5.2ii",
        kind="isp",
        domain="unit_square",
        truth=lambda x, y: 4.0 * x * (1.0 - x) * np.exp(x) * np.sin(2 * np.pi * y),
        u0=lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y),
        f=None,
        diffusion=lambda x, y: 1.0 + np.sin(np.pi * x) * y * (1.0 - y),
        dirichlet=None,
        lm_defaults={
            0.25: (1e-4, 1e-9, 0.8),
            0.50: (1e-4, 1e-9, 0.8),
            0.75: (1e-4, 1e-9, 0.8),
        },
        default_n=32,
        default_steps=64,
    ),
    "5.3": BenchmarkCase(
        case_id="5.3",
        kind="ipp",
        domain="interval",
        truth=lambda x: np.sin(np.pi * x) ** 4,
        u0=lambda x: np.ones_like(x),
        f=lambda x: np.abs(np.sin(2 * np.pi * x)),
        diffusion=1.0,
        dirichlet=(0.0, 0.0),
        lm_defaults={
            0.25: (1e-7, 1e-8, 0.5),
            0.50: (1e-7, 1e-8, 0.5),
            0.75: (1e-7, 1e-8, 0.5),
        },
        default_n=128,
        default_steps=512,
        # u0 - phi_0 = 1 with zero boundary values
        ref_sine_coeff=lambda n: np.where(n % 2 == 1, 2.0 * np.sqrt(2.0) / (n * np.pi), 0.0),
    ),
}

CASE_IDS = tuple(sorted(_CASES))


def get_case(case_id: str) -> BenchmarkCase:
    try:
        return _CASES[case_id]
    except KeyError:
        raise ConfigError(f"unknown case {case_id!r}; known: {', '.join(CASE_IDS)}")


def tensor_sine_basis(grid: Grid2D, k: int) -> np.ndarray:
    """L2-orthonormal 2 sin(i pi x) sin(j pi y), i, j = 1..k, as nodal rows."""
    pts = grid.nodes
    rows = []
    for i in range(1, k + 1):
        for j in range(1, k + 1):
            rows.append(2.0 * np.sin(i * np.pi * pts[:, 0]) * np.sin(j * np.pi * pts[:, 1]))
    return np.array(rows)


def make_setup(case: BenchmarkCase, alpha: float, n: Optional[int] = None,
               n_steps: Optional[int] = None, basis: Optional[np.ndarray] = None) -> InverseSetup:
    n = n or case.default_n
    n_steps = n_steps or case.default_steps
    grid = Grid1D(n) if case.domain == "interval" else Grid2D(n)
    return InverseSetup(
        case.kind,
        grid,
        alpha,
        n_steps,
        diffusion=case.diffusion,
        potential=0.0 if case.kind != "ipp" else 0.0,
        u0=case.u0,
        f=case.f if case.kind != "isp" else None,
        g=None,
        dirichlet=case.dirichlet,
        basis=basis,
    )


# Per-iteration relative cap on the time step. The backward and source
# problems carry a compensation ridge (any time is data-consistent with an
# adjusted space parameter), so their time iterate is kept close to its
# prior; the potential problem is ridge-free and may travel.
T_STEP_CAPS = {"bp": 2e-4, "isp": 5e-3, "ipp": 2e-2}


def lm_config_for(case: BenchmarkCase, alpha: float, *, T_init: float = 0.4,
                  max_iter: int = 30, stop: str = "oracle", **overrides) -> LMConfig:
    if alpha not in case.lm_defaults:
        raise ConfigError(f"case {case.case_id} has no defaults for alpha={alpha}")
    gamma0, mu0, rho = case.lm_defaults[alpha]
    kw = dict(gamma0=gamma0, mu0=mu0, rho=rho, T_init=T_init,
              max_iter=max_iter, stop=stop, t_step_cap=T_STEP_CAPS[case.kind])
    kw.update(overrides)
    return LMConfig(**kw)


def exact_observation(case: BenchmarkCase, alpha: float, grid: GridLike,
                      T: float = T_TRUE, data_refine: int = 2,
                      data_steps: Optional[int] = None, modes: int = 400) -> np.ndarray:
    """Exact snapshot u(T) at the nodes of `grid`, from a finer solve.

    1D cases with unit diffusion use the modal solver (exact in time,
    400 modes); everything else uses the FEM solver on a space-time mesh
    refined by `data_refine` relative to `grid` and restricted to its nodes.
    """
    truth_field = case.truth

    if case.domain == "interval" and case.kind in ("bp", "isp"):
        ns = np.arange(1, modes + 1, dtype=float)
        lam = (ns * np.pi) ** 2
        if case.kind == "bp":
            u0c = case.truth_sine_coeff(ns)
            fc = case.ref_sine_coeff(ns)
        else:
            u0c = case.ref_sine_coeff(ns)
            fc = case.truth_sine_coeff(ns)
        e1 = ml_neg(alpha, 1.0, lam * T**alpha)
        coeffs = e1 * u0c + (1.0 - e1) / lam * fc
        x = grid.nodes
        return (np.sqrt(2.0) * np.sin(np.outer(ns, np.pi * x))).T @ coeffs

    n_fine = grid.n * data_refine
    steps = data_steps if data_steps is not None else 1024 if case.domain == "interval" else 128
    fine = Grid1D(n_fine) if case.domain == "interval" else Grid2D(n_fine)
    if case.kind == "ipp":
        spec = ProblemSpec(alpha=alpha, T=T, u0=case.u0,
                           source=TimeIndependentSource(case.f),
                           potential=truth_field, dirichlet=case.dirichlet)
    elif case.kind == "bp":
        spec = ProblemSpec(alpha=alpha, T=T, u0=truth_field,
                           source=TimeIndependentSource(case.f),
                           diffusion=case.diffusion, domain=case.domain)
    else:
        from .problems import SeparableSource

        spec = ProblemSpec(alpha=alpha, T=T, u0=case.u0,
                           source=SeparableSource(lambda t: 1.0, truth_field),
                           diffusion=case.diffusion, domain=case.domain)
    u = solve_fem(spec, fine, TimeGrid(steps, T)).final
    if case.domain == "interval":
        return u[::data_refine]
    side = n_fine + 1
    return u.reshape(side, side)[::data_refine, ::data_refine].ravel()


def estimate_prior_T(case: BenchmarkCase, alpha: float, n_obs: int = 1024,
                     window: Optional[tuple[int, int]] = None,
                     T: float = T_TRUE) -> float:
    """Terminal-time prior from the asymptotic mode-ratio estimator, applied
    to an exact snapshot synthesized on a fine observation grid.

    1D cases only; the reference coefficients use closed forms where the
    reference field is rough (sampling it would alias into the high modes
    that carry the decay signal).
    """
    if case.domain != "interval":
        raise ConfigError("the time prior is computed on interval cases")
    grid = Grid1D(n_obs)
    g = exact_observation(case, alpha, grid, T=T)
    n_modes = min(128, n_obs // 4)
    basis = build_eigendecomposition(0.0, n_modes, grid=grid)
    ns = np.arange(1, n_modes + 1)
    if case.ref_sine_coeff is not None:
        ref = Field(grid=grid, coeffs=case.ref_sine_coeff(ns.astype(float)), basis=basis)
    elif case.kind == "bp":
        ref = Field.from_callable(case.f, grid)
    else:
        ref = Field.from_callable(case.u0, grid)
    obs = Field(grid=grid, values=g)
    if window is None:
        if case.kind == "isp":
            # reference alive only where the known initial state has modes
            nz = np.where(np.abs(ref.spectral(basis)) > 1e-12)[0]
            window = (int(nz[0] + 1), int(nz[-1] + 1))
        else:
            window = (9, min(61, n_modes))
    est = estimate_T(obs, ref, basis, alpha, window, case.kind,
                     dirichlet=case.dirichlet or (0.0, 0.0))
    return est.t_hat


def warm_start_v(case: BenchmarkCase, setup: InverseSetup, obs: Observation,
                 T0: float, n_modes: int = 4) -> Optional[np.ndarray]:
    """Initial space-parameter guess.

    Backward problem: low-mode modal division of the observation at the time
    prior (the classical fixed-time backward solve, truncated to a few modes
    so noise amplification stays mild). Other kinds start from zero.
    """
    if case.kind != "bp" or case.domain != "interval":
        return None
    grid = setup.grid
    basis = build_eigendecomposition(0.0, max(n_modes, 4), grid=grid)
    gn = basis.project(obs.g_delta)
    ns = np.arange(1, basis.count + 1, dtype=float)
    if case.ref_sine_coeff is not None:
        fn = case.ref_sine_coeff(ns)
    else:
        fn = basis.project(np.asarray([case.f(x) for x in [grid.nodes]][0]))
    e1 = ml_neg(setup.alpha, 1.0, basis.eigenvalues * T0**setup.alpha)
    coeffs = np.zeros(basis.count)
    coeffs[:n_modes] = (gn[:n_modes] - (1.0 - e1[:n_modes]) / basis.eigenvalues[:n_modes] * fn[:n_modes]) / e1[:n_modes]
    return basis.synthesize(coeffs)
