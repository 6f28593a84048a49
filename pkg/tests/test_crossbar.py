import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrrxbar.calibration import initial_phases, readout_scale
from mrrxbar.crossbar import (
    CrossbarConfig,
    PhaseMatrix,
    WdmFrame,
    backward_propagate,
    default_device,
    device_from_dict,
    effective_phases,
    forward_propagate,
    leak_tensor,
    path_gain_backward,
    path_gain_forward,
    plan_channels,
    spectrum_csv,
    spectrum_scan,
    transfer_matrix,
    weight_of,
)
from mrrxbar.errors import ConfigError, DimensionMismatch, InsufficientQ
from mrrxbar.physics import (
    device_for_q,
    drop_transmission,
    free_spectral_range,
    quality_factor,
)

DEV = default_device()
IDEAL = CrossbarConfig.ideal()
DEFAULT = CrossbarConfig()


def random_phases(rng, n=4):
    return PhaseMatrix(rng.uniform(0, 2 * np.pi, (n, n)))


def walk_gain(config, steps):
    """Multiply segment gains along a route given as (kind, count) legs."""
    g = 1.0
    per_crossing = 10 ** (-config.crossing_loss_db / 10)
    per_pitch = 10 ** (-config.waveguide_loss_db_per_cm * config.pitch * 100 / 10)
    for kind, count in steps:
        for _ in range(count):
            g *= per_crossing if kind == "cross" else per_pitch
    return g


def forward_route(n, pd, port):
    # along row `port` from the left edge to column `pd`, then down column `pd`
    return [("pitch", pd + 1), ("cross", pd), ("pitch", n - port), ("cross", n - 1 - port)]


def backward_route(n, pd, port):
    # down column `pd` from the top to row `port`, then right along row `port`
    return [("pitch", port + 1), ("cross", port), ("pitch", n - pd), ("cross", n - 1 - pd)]


class TestChannelPlan:
    def test_four_channel_spacing(self):
        assert plan_channels(4, DEV).delta_phi == pytest.approx(2 * math.pi / 3, abs=1e-12)

    def test_three_channel_gap_pattern(self):
        plan = plan_channels(3, DEV)
        g = plan.gaps()
        assert g == pytest.approx([plan.delta_phi, plan.delta_phi / 2])

    @pytest.mark.parametrize("n", [3, 4, 5, 8])
    def test_alternating_gaps_and_order(self, n):
        dev = DEV if n <= 4 else device_for_q(5e4)
        plan = plan_channels(n, dev)
        g = plan.gaps()
        assert np.allclose(g[0::2], plan.delta_phi)
        assert np.allclose(g[1::2], plan.delta_phi / 2)
        assert np.all(np.diff(plan.wavelengths) > 0)

    def test_channels_within_one_fsr(self):
        plan = plan_channels(4, DEV)
        span = plan.wavelengths[-1] - plan.wavelengths[0]
        assert span < free_spectral_range(DEV)
        centre = 0.5 * (plan.wavelengths[0] + plan.wavelengths[-1])
        assert centre == pytest.approx(DEV.geometry.resonance_wavelength, rel=1e-12)

    def test_insufficient_q(self):
        with pytest.raises(InsufficientQ):
            plan_channels(100, DEV, 8)

    def test_leakage_bound_at_n100(self):
        from mrrxbar.benchmark import required_device
        dev = required_device(100, 8)
        plan = plan_channels(100, dev, 8)
        ratio = drop_transmission(dev, plan.delta_phi / 2) / drop_transmission(dev, 0.0)
        assert ratio < 2 ** -8

    @pytest.mark.parametrize("n", [2, 4, 16, 100])
    def test_finesse_exceeds_channel_count(self, n):
        from mrrxbar.benchmark import required_device
        dev = DEV if n <= 4 else required_device(n, 8)
        plan = plan_channels(n, dev)
        finesse = free_spectral_range(dev) * quality_factor(dev) / dev.geometry.resonance_wavelength
        assert finesse > n
        assert plan.wavelengths[-1] - plan.wavelengths[0] < free_spectral_range(dev)

    def test_directions_alternate(self):
        assert plan_channels(4, DEV).directions == (1, -1, 1, -1)


class TestConfig:
    def test_ideal_has_no_losses(self):
        assert IDEAL.crossing_loss_db == 0 and IDEAL.thermal_coupling_kappa == 0
        assert np.all(path_gain_forward(IDEAL) == 1)

    @pytest.mark.parametrize("kw", [
        dict(size_N=0), dict(crossing_loss_db=-1), dict(pd_responsivity=0),
        dict(pd_floor_current=-1e-6), dict(thermal_coupling_kappa=1.0),
        dict(summation_mode="other"), dict(additive_noise_sigma=-0.1),
    ])
    def test_invariants(self, kw):
        with pytest.raises(ConfigError):
            CrossbarConfig(**kw)

    def test_round_trip(self):
        cfg = DEFAULT.replace(thermal_coupling_kappa=0.02, summation_mode="coherent")
        back = CrossbarConfig.from_dict(cfg.to_dict())
        assert back == cfg

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="crossing_los"):
            CrossbarConfig.from_dict({"crossing_los": 0.1})

    def test_device_from_q(self):
        dev = device_from_dict({"q": 20000})
        assert quality_factor(dev) == pytest.approx(20000, rel=1e-9)
        with pytest.raises(ConfigError):
            device_from_dict({"q": 1e4, "r1": 0.9})
        with pytest.raises(ConfigError, match="radius"):
            device_from_dict({"radius": 1})

    def test_replace_replans(self):
        cfg = DEFAULT.replace(size_N=3)
        assert cfg.plan.size == 3


class TestEffectivePhases:
    def test_kappa_zero_identity(self, rng):
        p = random_phases(rng)
        assert np.array_equal(effective_phases(IDEAL, p).phases, p.phases)

    def test_single_source_stencil(self):
        cfg = CrossbarConfig(size_N=3, thermal_coupling_kappa=0.01)
        h = np.zeros((3, 3))
        h[0, 0] = np.pi
        e = effective_phases(cfg, PhaseMatrix(h)).phases
        assert e[0, 1] == pytest.approx(0.01 * np.pi) and e[1, 0] == pytest.approx(0.01 * np.pi)
        assert e[1, 1] == 0 and e[0, 0] == pytest.approx(np.pi)

    def test_transpose_commutes(self, rng):
        p = random_phases(rng)
        a = effective_phases(DEFAULT, PhaseMatrix(p.phases.T)).phases
        b = effective_phases(DEFAULT, p).phases.T
        assert np.allclose(a, b, atol=1e-14)


class TestWeightOf:
    def test_on_resonance_is_one(self):
        assert weight_of(IDEAL, PhaseMatrix.zeros(4), 2, 1) == pytest.approx(1.0, abs=1e-12)

    def test_half_spacing_is_below_bound(self):
        h = np.full((4, 4), IDEAL.plan.delta_phi / 2)
        assert weight_of(IDEAL, PhaseMatrix(h), 0, 0) <= 2 ** -8

    def test_pi_is_off(self):
        assert weight_of(IDEAL, PhaseMatrix(np.full((4, 4), np.pi)), 1, 1) < 3e-3


class TestForward:
    def test_identity_program(self):
        phases = PhaseMatrix(initial_phases(IDEAL, np.eye(4)))
        x = np.array([1.0, 0, 0, 0])
        cur = forward_propagate(IDEAL, phases, WdmFrame.from_vector(x)).currents
        sc = readout_scale(IDEAL)
        assert sc.to_weight(cur) == pytest.approx([1, 0, 0, 0], abs=1e-9)

    def test_ideal_equals_matvec(self, rng):
        for _ in range(20):
            phases = random_phases(rng)
            W = np.array([[weight_of(IDEAL, phases, i, j) for j in range(4)] for i in range(4)])
            x = rng.uniform(0, 1, 4)
            cur = forward_propagate(IDEAL, phases, WdmFrame.from_vector(x)).currents
            assert cur == pytest.approx(W @ x, abs=1e-10)

    def test_floor_and_responsivity(self, rng):
        cfg = IDEAL.replace(pd_responsivity=0.8, pd_floor_current=5e-6)
        phases = random_phases(rng)
        x = rng.uniform(0, 1, 4)
        base = forward_propagate(IDEAL, phases, WdmFrame.from_vector(x)).currents
        cur = forward_propagate(cfg, phases, WdmFrame.from_vector(x)).currents
        assert cur == pytest.approx(0.8 * base + 5e-6, rel=1e-12)

    def test_linearity(self, rng):
        phases = random_phases(rng)
        x1, x2 = rng.uniform(0, 1, 4), rng.uniform(0, 1, 4)
        cfg = DEFAULT.replace(pd_floor_current=1e-7)
        f = lambda x: forward_propagate(cfg, phases, WdmFrame.from_vector(x, 1e-5)).currents
        assert f(x1 + x2) == pytest.approx(f(x1) + f(x2) - cfg.pd_floor_current, abs=1e-16)

    @given(st.integers(0, 3), st.floats(0.0, 1.0))
    def test_monotone_in_input(self, port, extra):
        phases = PhaseMatrix(np.tile([0.3, 1.0, 2.0, 4.0], (4, 1)))
        x = np.full(4, 0.25)
        lo = forward_propagate(DEFAULT, phases, WdmFrame.from_vector(x)).currents
        x[port] += extra
        hi = forward_propagate(DEFAULT, phases, WdmFrame.from_vector(x)).currents
        assert np.all(hi >= lo - 1e-18)

    def test_leakage_off_channel_bound(self):
        cfg = CrossbarConfig(size_N=4, crossing_loss_db=0, waveguide_loss_db_per_cm=0)
        leak = leak_tensor(cfg, PhaseMatrix.zeros(4))
        peak = leak[np.arange(4), :, np.arange(4)]
        for i in range(4):
            others = np.delete(leak[i], i, axis=1)
            assert np.all(others < 2 ** -8 * peak[i][:, None])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            forward_propagate(IDEAL, PhaseMatrix.zeros(3), WdmFrame.from_vector(np.ones(4)))
        with pytest.raises(DimensionMismatch):
            forward_propagate(IDEAL, PhaseMatrix.zeros(4), WdmFrame.from_vector(np.ones(3)))

    def test_negative_power_rejected(self):
        with pytest.raises(ValueError):
            WdmFrame(-np.ones((4, 4)))

    def test_noise_is_seeded(self):
        cfg = DEFAULT.replace(additive_noise_sigma=1e-2)
        f = lambda s: forward_propagate(cfg, PhaseMatrix.zeros(4), WdmFrame.from_vector(np.ones(4)), rng=s).currents
        assert np.array_equal(f(3), f(3))
        assert not np.array_equal(f(3), f(4))


class TestBackward:
    def test_lossless_transpose_duality(self, rng):
        for _ in range(20):
            phases = random_phases(rng)
            delta = rng.uniform(0, 1, 4)
            fwd = transfer_matrix(IDEAL, phases)
            out = backward_propagate(IDEAL, phases, WdmFrame.from_vector(delta)).currents
            assert out == pytest.approx(fwd.T @ delta, abs=1e-10)

    def test_unit_probe_gives_first_row(self, rng):
        phases = random_phases(rng)
        W = transfer_matrix(IDEAL, phases)
        out = backward_propagate(IDEAL, phases, WdmFrame.from_vector([1.0, 0, 0, 0])).currents
        assert out == pytest.approx(W[0], abs=1e-12)

    @pytest.mark.parametrize("n", [2, 4])
    def test_route_gains_match_path_walk(self, n):
        cfg = (DEFAULT if n == 4 else DEFAULT.replace(size_N=2))
        gf, gb = path_gain_forward(cfg), path_gain_backward(cfg)
        for i in range(n):
            for j in range(n):
                assert gf[i, j] == pytest.approx(walk_gain(cfg, forward_route(n, i, j)), rel=1e-12)
                assert gb[i, j] == pytest.approx(walk_gain(cfg, backward_route(n, i, j)), rel=1e-12)

    def test_lossy_identity_is_diag_scaled(self):
        cfg = IDEAL.replace(crossing_loss_db=0.1)
        phases = PhaseMatrix(initial_phases(cfg, np.eye(4)))
        raw_lossless = transfer_matrix(IDEAL.replace(), phases)
        bwd = transfer_matrix(cfg, phases, "backward").T
        gb = path_gain_backward(cfg)
        # separable: G_b(i, j) = A_i · B_j with A from the column leg and B from the row leg
        A = gb[:, 0] / gb[0, 0]
        B = gb[0, :]
        assert bwd == pytest.approx(np.diag(B) @ raw_lossless.T @ np.diag(A), rel=1e-12, abs=1e-15)

    def test_loss_ratio_is_separable(self):
        ratio = path_gain_backward(DEFAULT) / path_gain_forward(DEFAULT)
        assert np.linalg.matrix_rank(np.log(ratio) - np.log(ratio[0:1, :]) - np.log(ratio[:, 0:1]) + np.log(ratio[0, 0]), tol=1e-12) == 0


class TestCoherent:
    def test_coherent_variance_exceeds_incoherent(self):
        phases = PhaseMatrix(np.full((4, 4), 0.2))
        frame = WdmFrame.from_vector(np.ones(4), 1e-5)
        inc = [forward_propagate(DEFAULT, phases, frame, rng=s).currents for s in range(50)]
        coh_cfg = DEFAULT.replace(summation_mode="coherent")
        coh = [forward_propagate(coh_cfg, phases, frame, rng=s).currents for s in range(50)]
        assert np.var(coh, axis=0).sum() > np.var(inc, axis=0).sum()

    def test_single_port_coherent_equals_incoherent(self):
        phases = PhaseMatrix(np.full((4, 4), 0.2))
        frame = WdmFrame.from_vector([1.0, 0, 0, 0])
        a = forward_propagate(IDEAL, phases, frame).currents
        b = forward_propagate(IDEAL.replace(summation_mode="coherent"), phases, frame, rng=1).currents
        assert b == pytest.approx(a, rel=1e-12)


class TestSpectrum:
    def test_one_peak_per_pd_at_its_channel(self):
        phases = PhaseMatrix.zeros(4)
        lam, cur = spectrum_scan(DEFAULT, phases, 0, steps=8001)
        plan = DEFAULT.plan
        lo, hi = plan.wavelengths[0], plan.wavelengths[-1]
        pad = 0.25 * (plan.wavelengths[1] - plan.wavelengths[0])
        for i in range(4):
            c = cur[i]
            peaks = np.flatnonzero((c[1:-1] > c[:-2]) & (c[1:-1] > c[2:])) + 1
            # the scan margin reaches the neighbouring orders; count inside the plan window
            peaks = peaks[(lam[peaks] > lo - pad) & (lam[peaks] < hi + pad) & (c[peaks] > 0.5 * c.max())]
            assert len(peaks) == 1
            assert lam[peaks[0]] == pytest.approx(plan.wavelengths[i], abs=2 * (lam[1] - lam[0]))

    def test_fwhm_matches_q(self):
        phases = PhaseMatrix.zeros(4)
        lam, cur = spectrum_scan(IDEAL, phases, 0, steps=40001)
        c = cur[0]
        above = lam[c >= c.max() / 2]
        # restrict to the first peak's neighbourhood
        above = above[np.abs(above - IDEAL.plan.wavelengths[0]) < 1e-9]
        fwhm = above[-1] - above[0]
        assert DEV.geometry.resonance_wavelength / fwhm == pytest.approx(quality_factor(DEV), rel=0.02)

    def test_single_ring_reduces_to_drop(self):
        cfg = CrossbarConfig.ideal(size_N=1)
        lam, cur = spectrum_scan(cfg, PhaseMatrix.zeros(1), 0, steps=101)
        from mrrxbar.physics import round_trip_phase
        assert cur[0] == pytest.approx(drop_transmission(DEV, round_trip_phase(DEV, lam)), abs=1e-12)

    def test_csv_header(self):
        lam, cur = spectrum_scan(IDEAL, PhaseMatrix.zeros(4), 1, steps=3)
        text = spectrum_csv(lam, cur)
        assert text.splitlines()[0] == "wavelength_nm,pd1,pd2,pd3,pd4"
        assert len(text.splitlines()) == 4

    def test_steps_validated(self):
        with pytest.raises(ValueError):
            spectrum_scan(IDEAL, PhaseMatrix.zeros(4), 0, steps=1)
