import io
import json

import numpy as np
import pytest

from conftest import paper, toy
from fstar_noma.ao import (BaselineKind, candidate_grid, greedy_discrete_placement, oma_rate, run_ao)
from fstar_noma.beamforming import solve_beamforming
from fstar_noma.channels import assemble_channels, draw_nlos
from fstar_noma.metrics import effective_channels
from fstar_noma.surface import SurfaceCoeffs, default_coeffs, uniform_grid_layout, validate_layout


def test_no_surface_reduces_to_beamforming():
    s = toy(K=2, Q=0, L=0, M=4, seed=3, gamma_min=1.0)     # only direct-link users can be served
    st = run_ao(s, BaselineKind.T_STAR)
    ch = assemble_channels(s, np.zeros((2, 0)), draw_nlos(s))
    f_r, f_t = effective_channels(ch, SurfaceCoeffs(np.zeros(0, complex), np.zeros(0, complex)))
    ref = solve_beamforming(f_r, f_t, s, rng_seed=s.seed + 1)
    assert not st.failed_stage
    assert st.stages[0][2] == pytest.approx(ref.objective, rel=1e-9)
    # later outer iterations only re-run warm-started beamforming
    assert st.objective == pytest.approx(ref.objective, rel=1e-3)


@pytest.fixture(scope="module")
def runs():
    s = paper(seed=1, p_dbm=15)
    out = {}
    for k in BaselineKind:
        trace = []
        out[k] = (s, run_ao(s, k, trace=trace), trace)
    return out


@pytest.mark.parametrize("kind", list(BaselineKind))
def test_history_non_decreasing(runs, kind):
    _, st, trace = runs[kind]
    assert st.converged and not st.failed_stage
    h = np.array(st.history)
    assert np.all(np.diff(h) >= -1e-6 * np.abs(h[:-1]))
    stages = np.array([t["objective"] for t in trace])
    assert np.all(np.diff(stages) >= -1e-6 * np.abs(stages[:-1]))


def test_trace_records(runs):
    _, st, trace = runs[BaselineKind.F_STAR]
    stages = [t["stage"] for t in trace]
    # discrete-placement phase first, then the position stage joins in
    first = stages.index("positions")
    assert first >= 2 and "positions" not in stages[:first]
    assert stages[first - 2:first + 1] == ["beamforming", "coefficients", "positions"]
    assert trace[-1]["iteration"] == st.iterations
    assert [t["iteration"] for t in trace] == sorted(t["iteration"] for t in trace)
    assert all(set(t) == {"iteration", "stage", "objective", "time"} for t in trace)
    t_stages = {t["stage"] for t in runs[BaselineKind.T_STAR][2]}
    assert t_stages == {"beamforming", "coefficients"}


def test_trace_as_json_lines():
    buf = io.StringIO()
    st = run_ao(toy(K=1, Q=1, L=4), BaselineKind.T_STAR, trace=buf, max_outer=3)
    recs = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert len(recs) == 2 * st.iterations
    assert recs[-1]["objective"] == pytest.approx(st.objective)


@pytest.mark.parametrize("kind", [BaselineKind.T_STAR, BaselineKind.F_STAR])
def test_warm_start_is_idempotent(runs, kind):
    s, st, _ = runs[kind]
    again = run_ao(s, kind, init=st)
    assert again.iterations == 1 and again.converged
    assert abs(again.objective - st.objective) <= 1e-3 * st.objective


def test_position_stage_keeps_layout_valid(runs):
    s, st, _ = runs[BaselineKind.F_STAR]
    assert validate_layout(st.layout, s.aperture_side, s.min_spacing) == []
    assert st.ratios
    for seq in st.ratios:                            # (inner iterations, users) per element
        seq = np.array(seq)
        assert np.all(np.diff(seq, axis=0) >= -1e-9 * seq[:-1])


def test_schemes_at_one_seed(runs):
    rate = {k: runs[k][1].objective for k in BaselineKind}
    assert rate[BaselineKind.F_STAR] >= rate[BaselineKind.D_F_STAR]
    assert rate[BaselineKind.D_F_STAR] >= rate[BaselineKind.T_STAR]     # the grid is one of its starts
    assert rate[BaselineKind.F_STAR] >= rate[BaselineKind.OMA]
    assert rate[BaselineKind.T_STAR] >= rate[BaselineKind.OMA]


def test_infeasible_qos_names_stage():
    st = run_ao(paper(seed=0, gamma_min=1e9), BaselineKind.T_STAR)
    assert st.failed_stage.startswith("beamforming") and not st.converged


# ---------------------------------------------------------------------------
# greedy placement


def test_candidate_grid_spacing():
    s = paper()
    for pitch in (s.min_spacing, 0.02, 0.03):
        c = candidate_grid(s.aperture_side, pitch)
        d = np.linalg.norm(c[:, :, None] - c[:, None, :], axis=0)
        assert d[~np.eye(c.shape[1], dtype=bool)].min() >= s.min_spacing - 1e-12
        assert np.all(np.abs(c) <= s.aperture_side / 2 + 1e-12)
    assert candidate_grid(s.aperture_side, s.min_spacing).shape == (2, 81)


def test_greedy_one_candidate_per_element():
    s = paper(L=9)
    pitch = s.aperture_side / 2                      # 3 x 3 lattice
    lay = greedy_discrete_placement(s, pitch)
    assert np.array_equal(lay.positions, candidate_grid(s.aperture_side, pitch))


def test_greedy_too_few_candidates():
    with pytest.raises(ValueError):
        greedy_discrete_placement(paper(L=10), paper().aperture_side / 2)
    with pytest.raises(ValueError):
        greedy_discrete_placement(paper(), paper().min_spacing / 2)


def test_greedy_layout_valid_and_on_lattice():
    s = paper(seed=2)
    lay = greedy_discrete_placement(s, s.min_spacing)
    assert lay.positions.shape == (2, s.L)
    assert validate_layout(lay, s.aperture_side, s.min_spacing) == []
    k = lay.positions / s.min_spacing
    assert np.allclose(k, np.round(k), atol=1e-9)
    assert len({tuple(np.round(k).astype(int).T[i]) for i in range(s.L)}) == s.L


# ---------------------------------------------------------------------------
# OMA


def _paper_channels(s):
    lay = uniform_grid_layout(s.L, s.aperture_side, s.min_spacing, s.wavelength)
    ch = assemble_channels(s, lay.positions, draw_nlos(s))
    return ch, default_coeffs(s.L, s, lay)


def test_oma_single_user_equals_noma():
    s = toy(K=1, Q=0, L=4, M=4)
    ch, co = _paper_channels(s)
    f_r, f_t = effective_channels(ch, co)
    bf = solve_beamforming(f_r, f_t, s)
    assert oma_rate(ch, co, s) == pytest.approx(bf.objective, rel=1e-3)


def test_oma_formula_oracle():
    s = paper(seed=5)
    ch, co = _paper_channels(s)
    f_r, f_t = effective_channels(ch, co)
    rates = []
    for f, sig in list(zip(f_t, s.noise_t)) + list(zip(f_r, s.noise_r)):
        rates.append(np.log2(1 + s.p_max * np.vdot(f, f).real / sig))
    shares = np.full(4, 1 / 4)
    assert shares.sum() == 1
    assert oma_rate(ch, co, s) == pytest.approx(float(shares @ rates), rel=1e-12)
