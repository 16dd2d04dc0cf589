import numpy as np
import pytest

from hamcheck import get_problem, integrate_extremal
from hamcheck.flowsheet import LagrangianChart, flow_from_lambda


def build_pack(name, params=None, radius=None, horizon=None, alpha_mode="auto", alpha_k=1.0,
               time_points=49, params_per_axis=9):
    built = get_problem(name, params)
    ext = integrate_extremal(built.prob, built.uref, built.ell0,
                             alpha_mode=alpha_mode, alpha_k=alpha_k)
    r = radius if radius is not None else built.defaults["chart_radius"]
    chart = LagrangianChart(alpha=ext.alpha0, center=ext.x0, radius=r)
    chart.validate(ext.ps[0])
    hz = horizon if horizon is not None else 1.1 * ext.horizon
    sheet = flow_from_lambda(built.spec, built.prob, chart, horizon=hz,
                             time_points=time_points, params_per_axis=params_per_axis)
    return built, ext, sheet


@pytest.fixture(scope="session")
def lq1d_pack():
    return build_pack("lq1d", horizon=1.2)


@pytest.fixture(scope="session")
def freef_pack():
    return build_pack("lq1d_freef", horizon=1.2)


@pytest.fixture(scope="session")
def conj_pre_pack():
    t_hat = np.pi / 2 - 0.1
    return build_pack("conj_osc", params={"T": t_hat}, horizon=t_hat)


@pytest.fixture(scope="session")
def conj_post_pack():
    t_hat = np.pi / 2 + 0.1
    return build_pack("conj_osc", params={"T": t_hat}, horizon=t_hat)


@pytest.fixture(scope="session")
def di_pack():
    return build_pack("double_integrator_mintime", horizon=2.2, time_points=45)
