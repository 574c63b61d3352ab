"""Scenario bundle builder shared by the benchmark scripts."""

import numpy as np

from campc.hyperthermia import build_scenario, case_tubes
from campc.lti import PolyhedralSet
from campc.mpc import MpcProblem, condense


def make_bundle(n, N=10):
    scn = build_scenario(n=n)
    problem = MpcProblem(
        sys=scn.sys,
        Xset=PolyhedralSet.from_upper_bounds(scn.Tmax),
        Uset=PolyhedralSet.box(np.zeros(2), np.ones(2)),
        XT=PolyhedralSet.from_upper_bounds(scn.Tterminal),
        N=N, Q=1.0, R=1.0, P=1.0, xref=scn.xref, uref=scn.uref)
    return scn, condense(problem), case_tubes(scn.sys, scn.Tterminal, N)
