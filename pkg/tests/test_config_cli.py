from pathlib import Path

import numpy as np
import pytest

from constructal.cli import main
from constructal.config import build_run_config, load_config, parse_config_text, write_config
from constructal.dynamics import ProjectedGradient, SignDescent
from constructal.errors import ConfigError

REPO = Path(__file__).resolve().parents[1]
CANONICAL = REPO / "configs" / "canonical.cfg"
BRANCHING = REPO / "configs" / "branching.cfg"


def canonical_data(**overrides):
    data = {
        "costs.K": [1.0, 0.5, 0.25, 0.125],
        "assembly.A1": 1.0,
        "assembly.gamma": 1.0,
        "assembly.kappa": [1.0, 1.0],
        "mode.kind": "projected_gradient",
        "mode.mobility": 1.0,
        "run.h": 1e-3,
        "run.t_end": 1.0,
        "run.x0": [1.3, 0.8, 0.3, 12.0, 20.0],
        "run.seed": 0,
    }
    data.update(overrides)
    return {k: v for k, v in data.items() if v is not None}


class TestParsing:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "run.cfg"
        write_config(canonical_data(), path)
        rc = load_config(path)
        assert rc.costs.K == (1.0, 0.5, 0.25, 0.125)
        assert isinstance(rc.mode, ProjectedGradient)
        assert rc.h == 1e-3 and rc.t_end == 1.0

    def test_comments_and_blanks(self):
        data = parse_config_text("# hello\n\ncosts.K = [1.0, 0.5]\nrun.seed = 3\n")
        assert data["costs.K"] == [1.0, 0.5]
        assert data["run.seed"] == 3

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text("costs.J = [1.0, 0.5]")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("run.seed = 1\nrun.seed = 2")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("costs.K [1.0, 0.5]")


class TestValidation:
    def test_nonmonotone_ladder(self):
        with pytest.raises(ConfigError):
            build_run_config(canonical_data(**{"costs.K": [1.0, 0.5, 0.6, 0.125]}))

    def test_nonpositive_tolerance(self):
        with pytest.raises(ConfigError, match="tol.event"):
            build_run_config(canonical_data(**{"tol.event": 0.0}))

    def test_nonpositive_t_end(self):
        with pytest.raises(ConfigError, match="t_end"):
            build_run_config(canonical_data(**{"run.t_end": 0.0}))

    def test_x0_outside_box(self):
        with pytest.raises(ConfigError, match="run.x0"):
            build_run_config(canonical_data(**{"run.x0": [9.0, 0.8, 0.3, 12.0, 20.0]}))

    def test_x0_wrong_dimension(self):
        with pytest.raises(ConfigError, match="run.x0"):
            build_run_config(canonical_data(**{"run.x0": [1.0, 0.8, 0.3]}))

    def test_sign_descent_gain_lengths(self):
        data = canonical_data(
            **{"mode.kind": "sign_descent", "mode.eta": [1.0, 1.0], "mode.zeta": [1.0, 1.0]}
        )
        with pytest.raises(ConfigError):
            build_run_config(data)

    def test_zero_sampling_count(self):
        with pytest.raises(ConfigError, match="sampling.count"):
            build_run_config(canonical_data(**{"sampling.count": 0}))

    def test_subbox_needs_both_bounds(self):
        with pytest.raises(ConfigError, match="subbox"):
            build_run_config(canonical_data(**{"sampling.subbox_lo": [1, 1, 1, 2, 2]}))

    def test_alpha_beta_must_pair(self):
        with pytest.raises(ConfigError, match="alpha"):
            build_run_config(canonical_data(**{"assembly.alpha": [0.3, 0.5, 0.5]}))

    def test_sign_descent_built(self):
        rc = build_run_config(
            canonical_data(**{"mode.kind": "sign_descent", "mode.sliding": "equivalent_control"})
        )
        assert isinstance(rc.mode, SignDescent)
        assert rc.mode.sliding == "equivalent_control"


class TestCliTable:
    def test_canonical_passes(self, capsys):
        assert main(["table", "--config", str(CANONICAL)]) == 0
        out = capsys.readouterr().out
        assert "max_deviation" in out
        assert out.count("\n") >= 5

    def test_single_level_has_no_branching_columns(self, tmp_path, capsys):
        path = tmp_path / "p1.cfg"
        write_config(
            {
                "costs.K": [1.0, 0.5],
                "run.t_end": 1.0,
                "run.x0": [2.0],
            },
            path,
        )
        assert main(["table", "--config", str(path)]) == 0
        out = capsys.readouterr().out
        assert "n_opt" not in out

    def test_bad_config_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("costs.K = [1.0, 2.0]\n")
        assert main(["table", "--config", str(path)]) == 2

    def test_missing_file_exits_2(self):
        assert main(["table", "--config", "/nonexistent/x.cfg"]) == 2


class TestCliSimulate:
    def test_writes_outputs_and_summary(self, tmp_path, capsys):
        cfgp = tmp_path / "run.cfg"
        write_config(canonical_data(**{"run.t_end": 2.0}), cfgp)
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(cfgp), "--out", str(out)]) == 0
        csv = (out / "trajectory.csv").read_text().splitlines()
        assert csv[0] == "t,r_1,r_2,r_3,n_2,n_3,R,Psi,regime_mask,event"
        assert len(csv) == 2 + 2000
        summary = (out / "summary.txt").read_text()
        assert "schema_version = 1" in summary
        assert "dissipation_violations = 0" in summary
        assert "resistance_functional = decoupled_surrogate" in summary

    def test_requires_t_end(self, tmp_path):
        cfgp = tmp_path / "run.cfg"
        write_config(canonical_data(**{"run.t_end": None}), cfgp)
        assert main(["simulate", "--config", str(cfgp), "--out", str(tmp_path / "o")]) == 2

    def test_sign_descent_logs_slide_events(self, tmp_path):
        cfgp = tmp_path / "sd.cfg"
        write_config(
            canonical_data(
                **{
                    "mode.kind": "sign_descent",
                    "mode.sliding": "equivalent_control",
                    "run.t_end": 6.0,
                }
            ),
            cfgp,
        )
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(cfgp), "--out", str(out)]) == 0
        summary = (out / "summary.txt").read_text()
        assert "events.SlideEnter = 5" in summary

    def test_validation_failure_leaves_no_partial_output(self, tmp_path):
        cfgp = tmp_path / "bad.cfg"
        write_config(canonical_data(**{"run.t_end": -1.0}), cfgp)
        out = tmp_path / "fresh"
        assert main(["simulate", "--config", str(cfgp), "--out", str(out)]) == 2
        assert not out.exists()


class TestCliCertify:
    def test_branching_certificate(self, tmp_path):
        out = tmp_path / "out"
        assert main(["certify", "--config", str(BRANCHING), "--out", str(out)]) == 0
        cert = (out / "certificate.txt").read_text()
        assert "overall_pass = true" in cert
        assert "nu_estimate = 1.0" in cert

    def test_coupled_certificate_fails_exit_1(self, tmp_path):
        cfgp = tmp_path / "coupled.cfg"
        write_config(
            canonical_data(**{"mode.gradient": "coupled", "sampling.count": 512, "run.t_end": 2.0}),
            cfgp,
        )
        out = tmp_path / "out"
        assert main(["certify", "--config", str(cfgp), "--out", str(out)]) == 1
        cert = (out / "certificate.txt").read_text()
        assert "contraction_pass = false" in cert
        assert "witness_0 = [" in cert

    def test_sign_descent_rejected(self, tmp_path):
        cfgp = tmp_path / "sd.cfg"
        write_config(canonical_data(**{"mode.kind": "sign_descent", "run.t_end": 1.0}), cfgp)
        assert main(["certify", "--config", str(cfgp), "--out", str(tmp_path / "o")]) == 2


class TestCliConverge:
    def test_identical_pair_degenerate_exit_0(self, tmp_path):
        cfgp = tmp_path / "same.cfg"
        x = [1.3, 0.8, 0.3, 12.0, 20.0]
        write_config(canonical_data(**{"run.x1": x, "run.t_end": 1.0}), cfgp)
        out = tmp_path / "out"
        assert main(["converge", "--config", str(cfgp), "--out", str(out)]) == 0
        report = (out / "convergence.txt").read_text()
        assert "degenerate = true" in report

    def test_branching_pair_rate(self, tmp_path):
        out = tmp_path / "out"
        assert main(["converge", "--config", str(BRANCHING), "--out", str(out)]) == 0
        report = dict(
            line.split(" = ") for line in (out / "convergence.txt").read_text().splitlines()
        )
        assert abs(float(report["rate"]) - 1.0) <= 1e-3
        assert float(report["prefactor"]) >= 1.0
        assert float(report["r_squared"]) >= 0.999


class TestCliErrorMapping:
    def test_integration_failure_exits_1(self, tmp_path, monkeypatch):
        from constructal import cli
        from constructal.errors import StepFailureError

        def boom(*args, **kwargs):
            raise StepFailureError("chattering detected", time=0.5)

        monkeypatch.setattr(cli, "integrate", boom)
        cfgp = tmp_path / "run.cfg"
        write_config(canonical_data(), cfgp)
        assert main(["simulate", "--config", str(cfgp), "--out", str(tmp_path / "o")]) == 1


class TestSingleLevel:
    def test_integrates_to_scalar_optimum(self):
        from constructal import (
            ProjectedGradient,
            TransportCosts,
            integrate,
            optimum_state,
            state_box,
        )
        from constructal.hierarchy import AssemblyConfig

        costs = TransportCosts(K=(1.0, 0.5))
        cfg = AssemblyConfig.bejan(costs)
        box = state_box(costs, cfg)
        traj = integrate(ProjectedGradient(), costs, cfg, box, np.array([2.5]), 40.0, 1e-3)
        assert traj.converged
        assert traj.final_state[0] == pytest.approx(optimum_state(costs, cfg).r[0], abs=1e-5)


class TestSeedGeneratedStates:
    def test_states_in_box_and_seed_dependent(self, tmp_path):
        from constructal.cli import _initial_state

        cfgp = tmp_path / "run.cfg"
        write_config(canonical_data(**{"run.x0": None, "run.t_end": 1.0}), cfgp)
        rc = load_config(cfgp)
        a = _initial_state(rc, "x0")
        b = _initial_state(rc, "x1")
        assert rc.box.contains(a) and rc.box.contains(b)
        assert not np.allclose(a, b)
        rc.seed = 99
        c = _initial_state(rc, "x0")
        assert not np.allclose(a, c)


class TestDeterminism:
    def test_simulate_byte_identical(self, tmp_path):
        cfgp = tmp_path / "run.cfg"
        write_config(canonical_data(**{"run.t_end": 1.5}), cfgp)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["simulate", "--config", str(cfgp), "--out", str(out1), "--seed", "7"]) == 0
        assert main(["simulate", "--config", str(cfgp), "--out", str(out2), "--seed", "7"]) == 0
        assert (out1 / "trajectory.csv").read_bytes() == (out2 / "trajectory.csv").read_bytes()
        assert (out1 / "summary.txt").read_bytes() == (out2 / "summary.txt").read_bytes()
