import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from homeodyn import ChayKeizerParams, FhnParams, IntegratorConfig, integrate, make_system
from homeodyn.bifurcation import (Branch, ck_bifurcation_diagram, ck_detect_fast_hopf,
                                  ck_detect_saddle_nodes, ck_equilibrium_branch,
                                  ck_periodic_envelope, fast_jacobian, fhn_hopf_locus,
                                  fhn_hopf_points, fhn_jacobian, fhn_jacobian_trace_det)
from homeodyn.bifurcation import _upper_equilibrium_V
from homeodyn.models import boltzmann, ck_currents
from homeodyn.ode import resample_window

import oracles

P = ChayKeizerParams()


def _fd_jacobian(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.array(f(x + e)) - np.array(f(x - e))) / (2 * h))
    return np.array(cols).T


@pytest.fixture(scope="module")
def branch():
    return ck_equilibrium_branch(P, n_samples=2000)


@pytest.fixture(scope="module")
def diagram():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return ck_bifurcation_diagram(P)


class TestFhnHopf:
    def test_trace_det_examples(self):
        mu = 30.0
        assert fhn_jacobian_trace_det(0.0, FhnParams(alpha=1.0)) == (mu - 1 / mu, 0.0)
        tr, det = fhn_jacobian_trace_det(1.0, FhnParams(alpha=2.0))
        assert tr == pytest.approx(-1 / 30, abs=1e-15) and det == 2.0
        s = math.sqrt(1 - 1 / mu ** 2)
        assert fhn_jacobian_trace_det(s, FhnParams())[0] == pytest.approx(0.0, abs=1e-12)

    @given(x=st.floats(-3, 3), alpha=st.floats(1.0, 6.0))
    def test_jacobian_matches_finite_differences(self, x, alpha):
        y = x - x ** 3 / 3
        fd = _fd_jacobian(lambda s: oracles.fhn(s, alpha=alpha), (x, y))
        np.testing.assert_allclose(fhn_jacobian(x, FhnParams(alpha=alpha)), fd, atol=1e-6)

    def test_anchor_value(self):
        hp = fhn_hopf_points(2.0, 30.0)
        # oracle: J at the Hopf equilibrium x* = -sqrt(1 - 1/mu^2) from the cubic
        s = math.sqrt(1 - 1 / 900)
        J_oracle = s ** 3 / 3 + (2.0 - 1.0) * s
        assert hp.J_plus == pytest.approx(J_oracle, abs=1e-14)
        assert hp.J_plus == pytest.approx(1.3322222221650186, abs=1e-14)
        assert hp.J_minus == -hp.J_plus
        assert hp.x_star_plus == pytest.approx(-s) and hp.x_star_minus == pytest.approx(s)

    def test_trace_vanishes_at_hopf_equilibria(self):
        hp = fhn_hopf_points(3.0, 30.0)
        for J, xs in ((hp.J_plus, hp.x_star_plus), (hp.J_minus, hp.x_star_minus)):
            x, y = oracles.fhn_equilibrium(J, 3.0)
            assert x == pytest.approx(xs, abs=1e-12)
            tr = np.trace(_fd_jacobian(lambda s: oracles.fhn(s, alpha=3.0, J=J), (x, y)))
            assert tr == pytest.approx(0.0, abs=1e-6)

    def test_infinite_mu_limit(self):
        hp = fhn_hopf_points(2.0, 1e8)
        assert hp.J_plus == pytest.approx(4 / 3, abs=1e-12)

    def test_interval_widens_with_alpha(self):
        assert fhn_hopf_points(4.0).J_plus > fhn_hopf_points(2.0).J_plus

    @pytest.mark.parametrize("alpha", [1.0, 0.5])
    def test_rejects_multi_root_regime(self, alpha):
        with pytest.raises(ValueError):
            fhn_hopf_points(alpha)


class TestFhnLocus:
    alpha = np.round(np.arange(1.0, 5.0 + 1e-9, 0.05), 12)

    def test_consistency_and_symmetry(self):
        loc = fhn_hopf_locus(self.alpha)
        i = int(np.flatnonzero(loc.alpha == 2.0)[0])
        assert loc.J_plus[i] == fhn_hopf_points(2.0).J_plus
        np.testing.assert_array_equal(loc.J_minus, -loc.J_plus)

    def test_gap_to_large_mu_lines_matches_expansion(self):
        # with eps = 1/mu^2: J+ = alpha - 2/3 - alpha*eps/2 - (alpha-2)*eps^2/8 + O(eps^3)
        mu = 30.0
        eps = 1 / mu ** 2
        loc = fhn_hopf_locus(self.alpha, mu)
        gap = np.abs(loc.J_plus - (self.alpha - 2 / 3))
        np.testing.assert_allclose(gap, self.alpha * eps / 2 + (self.alpha - 2) * eps ** 2 / 8,
                                   rtol=1e-5)

    def test_slopes_near_one(self):
        loc = fhn_hopf_locus(self.alpha, 30.0)
        slope = np.diff(loc.J_plus) / np.diff(loc.alpha)
        np.testing.assert_allclose(slope, 1.0, atol=1e-3)

    def test_csv(self, tmp_path):
        fhn_hopf_locus([1.0, 2.0]).to_csv(tmp_path / "l.csv")
        lines = (tmp_path / "l.csv").read_text().splitlines()
        assert len(lines) == 3
        assert "1.3322222221650186" in lines[2]

    def test_bad_ranges(self):
        with pytest.raises(ValueError):
            fhn_hopf_locus([])
        with pytest.raises(ValueError):
            fhn_hopf_locus([0.5, 2.0])


class TestBranch:
    def test_samples_are_equilibria(self, branch):
        dV = np.array([oracles.ck((V, w, c))[0] for V, w, c in zip(branch.V, branch.w, branch.c)])
        dw = np.array([oracles.ck((V, w, c))[1] for V, w, c in zip(branch.V, branch.w, branch.c)])
        assert np.max(np.abs(dV)) < 1e-9 and np.max(np.abs(dw)) < 1e-9

    def test_z_shape(self, branch):
        dc = np.diff(branch.c)
        assert np.count_nonzero(dc[:-1] * dc[1:] < 0) == 2
        assert np.all(branch.c > 0)

    def test_jacobian_against_oracle(self, branch):
        for i in (10, len(branch) // 2, len(branch) - 10):
            V, w, c = branch.V[i], branch.w[i], branch.c[i]
            a = np.array(fast_jacobian(V, w, c, P)).reshape(2, 2)
            fd = _fd_jacobian(lambda s: oracles.ck((s[0], s[1], c))[:2], (V, w))
            np.testing.assert_allclose(a, fd, rtol=1e-6, atol=1e-10)

    def test_stability_flags(self, branch):
        assert branch.stable[0]
        assert not branch.stable[len(branch) // 2]
        ev = branch.eigenvalues
        np.testing.assert_allclose(ev.sum(axis=1).real, branch.trace, rtol=1e-12, atol=1e-15)

    def test_requires_kca(self):
        with pytest.raises(ValueError):
            ck_equilibrium_branch(P.updated(gKCa=0.0))


class TestSpecialPoints:
    def test_two_folds_matching_grid_oracle(self, branch):
        folds = sorted(ck_detect_saddle_nodes(branch), key=lambda s: s.c)
        assert len(folds) == 2
        brackets, step = oracles.ck_fold_grid()
        assert len(brackets) == 2
        for sp, (lo, hi) in zip(folds, sorted(brackets)):
            assert lo - step <= sp.c <= hi + step
        # frozen from this run; the lower-V fold is at the lower c
        assert folds[0].c == pytest.approx(0.20091678, abs=1e-7)
        assert folds[1].c == pytest.approx(0.27741503, abs=1e-7)
        assert folds[0].V < folds[1].V

    def test_folds_within_sample_spacing_of_sign_change(self, branch):
        dc = np.diff(branch.c)
        idx = np.flatnonzero(dc[:-1] * dc[1:] < 0) + 1
        spacing = branch.V[1] - branch.V[0]
        for sp, i in zip(sorted(ck_detect_saddle_nodes(branch), key=lambda s: s.V), idx):
            assert abs(sp.V - branch.V[i]) <= spacing

    def test_fold_self_convergence(self, branch):
        a = ck_detect_saddle_nodes(branch)
        b = ck_detect_saddle_nodes(ck_equilibrium_branch(P, n_samples=4000))
        for x, y in zip(a, b):
            assert abs(x.c - y.c) / y.c < 1e-3

    def test_quadratic_refinement_error_order(self):
        # c = V - V^3/3 has its fold at V = 1, c = 2/3
        scaled = []
        for n in (101, 201, 401, 801):
            V = np.linspace(0.0137, 2.0, n)
            z = np.zeros(n)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                sp = ck_detect_saddle_nodes(Branch(V, z, V - V ** 3 / 3, z, z, z > 0, P))[0]
            h = V[1] - V[0]
            scaled.append(abs(sp.V - 1.0) / h ** 2)
        assert max(scaled) < 0.25

    def test_too_short_branch(self):
        z = np.zeros(50)
        with pytest.raises(ValueError):
            ck_detect_saddle_nodes(Branch(z, z, z, z, z, z > 0, P))

    def test_one_hopf_on_upper_branch(self, branch):
        hopfs = ck_detect_fast_hopf(branch)
        assert len(hopfs) == 1
        hp = hopfs[0]
        folds = ck_detect_saddle_nodes(branch)
        assert hp.V > max(f.V for f in folds)
        V, c = hp.V, hp.c
        w = boltzmann(V, P.vw, P.sw)
        a = np.array(fast_jacobian(V, w, c, P)).reshape(2, 2)
        assert abs(np.trace(a)) < 1e-8
        ev = np.linalg.eigvals(a)
        assert np.all(np.abs(ev.real) < 1e-8)
        assert ev[0].imag == pytest.approx(-ev[1].imag) and abs(ev[0].imag) > 0
        assert hp.aux == pytest.approx(abs(ev[0].imag), rel=1e-6)

    def test_full_equilibrium_is_unique_and_unstable(self, branch):
        for kc in (0.05, 0.07, 0.09):
            ica = np.array([ck_currents((V, w, c), P)[0]
                            for V, w, c in zip(branch.V, branch.w, branch.c)])
            g = kc * branch.c + P.beta * ica
            crossings = np.flatnonzero(np.sign(g[:-1]) != np.sign(g[1:]))
            assert len(crossings) == 1
            i = crossings[0]
            assert not branch.stable[i] and not branch.stable[i + 1]
        # kc = 0.07: the frozen full-system equilibrium sits on this segment
        i = int(np.argmin(np.abs(branch.V - (-49.19100684714112))))
        assert not branch.stable[i]


class TestEnvelopeAndHomoclinic:
    def test_structure(self, diagram):
        assert len(diagram.points("saddle-node")) == 2
        assert len(diagram.points("hopf")) == 1
        assert len(diagram.points("homoclinic")) == 1

    def test_homoclinic_between_folds(self, diagram):
        lo, hi = sorted(s.c for s in diagram.points("saddle-node"))
        hc = diagram.homoclinic
        assert lo < hc.c < hi
        assert hc.bracket[1] - hc.bracket[0] < 1e-4
        # frozen from this computation
        assert hc.c == pytest.approx(0.2475453, abs=1e-6)

    def test_envelope_lies_between_hopf_and_homoclinic(self, diagram):
        c_h = diagram.points("hopf")[0].c
        for e in diagram.envelope:
            if e.spiking:
                assert c_h < e.c < diagram.homoclinic.c

    def test_period_grows_toward_homoclinic(self, diagram):
        periods = [e.period for e in diagram.envelope if e.spiking]
        assert np.all(np.diff(periods) > 0)

    def test_spike_peaks_match_burst(self, diagram):
        vmax = max(e.V_max for e in diagram.envelope if e.spiking)
        sys = make_system("chay-keizer")
        traj = integrate(sys, sys.default_x0, IntegratorConfig("rk4", 0.1, 60000.0, 10))
        burst_peak = resample_window(traj, 10000.0, 60000.0).column("V").max()
        assert -30.0 < vmax < -15.0
        assert abs(vmax - burst_peak) < 5.0

    @pytest.mark.slow
    def test_hopf_is_supercritical(self):
        # planar return maps are monotone, so runs started inside and outside the
        # cycle bracket its amplitude; a sqrt(c - c_hopf) law must fall in between
        c_h = ck_detect_fast_hopf(ck_equilibrium_branch(P, n_samples=4000))[0].c

        def amplitude(dc, offset, transient):
            c = c_h + dc
            V0 = _upper_equilibrium_V(P, c)
            e = ck_periodic_envelope(P, [c], x0=(V0 + offset, boltzmann(V0, P.vw, P.sw), c),
                                     transient=transient, min_amplitude=0.0)[0]
            return e.V_max - e.V_min

        ref = amplitude(3.2e-3, 10.0, 80000.0)
        assert ref == pytest.approx(amplitude(3.2e-3, 0.05, 80000.0), rel=1e-3)
        for dc in (8e-4, 2e-4):
            pred = ref * math.sqrt(dc / 3.2e-3)
            assert amplitude(dc, 0.05, 60000.0) < pred < amplitude(dc, 10.0, 60000.0)

    @pytest.mark.slow
    def test_homoclinic_dt_invariance(self, diagram):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fine = ck_bifurcation_diagram(P, dt=0.025)
        assert abs(fine.homoclinic.c - diagram.homoclinic.c) < 1e-3

    def test_burst_leaves_active_phase_just_past_homoclinic(self, diagram):
        # measured max c is 0.24587, 0.7% below the estimate rather than above it
        sys = make_system("chay-keizer")
        traj = integrate(sys, sys.default_x0, IntegratorConfig("rk4", 0.1, 60000.0, 10))
        c_max = resample_window(traj, 10000.0, 60000.0).column("c").max()
        rel = (c_max - diagram.homoclinic.c) / diagram.homoclinic.c
        print(f"burst max c={c_max:.6f} homoclinic={diagram.homoclinic.c:.6f} rel={rel:+.4%}")
        assert 0.0 < rel < 0.05

    def test_low_period_ratio_is_flagged(self):
        with pytest.warns(RuntimeWarning, match="fold of periodic"):
            ck_bifurcation_diagram(P)


class TestDiagramExport:
    def test_kc_invariance_is_bitwise(self, tmp_path):
        texts = []
        for kc in (0.05, 0.07, 0.09):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                d = ck_bifurcation_diagram(P.updated(kc=kc), envelope=False)
            d.to_csv(tmp_path / f"d{kc}.csv")
            texts.append((tmp_path / f"d{kc}.csv").read_bytes())
        assert texts[0] == texts[1] == texts[2]

    def test_csv_sections(self, diagram, tmp_path):
        diagram.to_csv(tmp_path / "d.csv")
        rows = [r.split(",") for r in (tmp_path / "d.csv").read_text().splitlines()]
        assert rows[0] == ["section", "c", "V", "kind", "aux"]
        sections = {r[0] for r in rows[1:]}
        assert sections == {"branch", "envelope", "special"}
        kinds = sorted(r[3] for r in rows[1:] if r[0] == "special")
        assert kinds == ["homoclinic", "hopf", "saddle-node", "saddle-node"]
