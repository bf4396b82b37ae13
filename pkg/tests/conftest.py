import numpy as np
import pytest

from rothe_mixture import config, estimates as est, stepper
from rothe_mixture.discretization import Grid
from rothe_mixture.model import Coefficients, ModelSpec, constant


def make_spec(d=3, coeffs=None, **kw):
    """A decoupled model with Gamma = H_1 = 1 unless overridden."""
    c = Coefficients(d)
    c.set("Gamma", (), constant(1.0))
    for m in range(d - 1):
        c.set("H", (1, m), constant(1.0))
    for key, coef in (coeffs or {}).items():
        c.set(key[0], key[1:], coef)
    args = dict(d=d, coeffs=c, delta=np.full(d, 0.1), bigD=np.ones(d - 1),
                gamma=np.ones(d - 1), robinA=np.zeros(d - 1), jhat=np.zeros(d),
                phi_res=np.r_[0.0, np.full(d - 1, 1.0 / (d - 1))],
                phi0=np.full(d, 1.0 / d))
    args.update(kw)
    return ModelSpec(**args)


def make_run(dt=0.05, n=21, t_max=1.0, V=1.0, phi_min=0.05):
    return stepper.StepperConfig(dt=dt, V=V, phi_min=phi_min, grid=Grid(n), t_max=t_max)


def ledger_for(cfg, dt=None, grid=True):
    r = cfg.run
    eta = est.EtaConfig(cfg.spec.gamma, cfg.eta)
    return est.build_ledger(cfg.spec, eta, r.t_max - r.t0, r.V, r.phi_min,
                            dt=r.dt if dt is None else dt, grid=r.grid if grid else None)


@pytest.fixture(scope="session")
def smooth_cfg():
    return config.load_preset("smooth")


@pytest.fixture(scope="session")
def smooth_traj(smooth_cfg):
    return stepper.run(smooth_cfg.spec, smooth_cfg.run)


@pytest.fixture(scope="session")
def smooth_ledger(smooth_cfg):
    return ledger_for(smooth_cfg)


@pytest.fixture(scope="session")
def stationary_cfg():
    return config.load_preset("stationary")


@pytest.fixture(scope="session")
def stationary_traj(stationary_cfg):
    return stepper.run(stationary_cfg.spec, stationary_cfg.run)


@pytest.fixture(scope="session")
def decoupled_cfg():
    return config.load_preset("decoupled")
