import numpy as np
import pytest

from campc.controller import CampcController
from campc.hyperthermia import build_scenario, case_tubes
from campc.lti import PolyhedralSet
from campc.mpc import MpcProblem, condense


def make_bundle(n, N=10, profiles=None):
    """Scenario, condensed QP, and tubes for one benchmark instance."""
    scn = build_scenario(n=n, profiles=profiles)
    problem = MpcProblem(
        sys=scn.sys,
        Xset=PolyhedralSet.from_upper_bounds(scn.Tmax),
        Uset=PolyhedralSet.box(np.zeros(2), np.ones(2)),
        XT=PolyhedralSet.from_upper_bounds(scn.Tterminal),
        N=N, Q=1.0, R=1.0, P=1.0, xref=scn.xref, uref=scn.uref)
    cq = condense(problem)
    tubes = case_tubes(scn.sys, scn.Tterminal, N)
    return scn, cq, tubes


@pytest.fixture(scope="session")
def bundle60():
    return make_bundle(60, N=6)


@pytest.fixture(scope="session")
def bundle100():
    return make_bundle(100)


@pytest.fixture(scope="session")
def bundle200():
    return make_bundle(200)


@pytest.fixture()
def controller100(bundle100):
    _, cq, tubes = bundle100
    return CampcController(cq, tubes)
