import csv
import math

import numpy as np
import pytest

from spacetime_ocp import experiments as ex
from spacetime_ocp import operator as opm
from spacetime_ocp import spatial, temporal


def test_builtin_targets():
    g = ex.builtin_target("sine")
    assert g(np.array([[0.5, 0.5, 0.5]]), 0.5)[0] == pytest.approx(1.0)
    assert g(np.array([[0.51, 0.51, 0.51]]), 0.5)[0] == pytest.approx(0.9985204, abs=1e-7)
    assert g(np.array([[0.0, 0.3, 0.7], [0.2, 1.0, 0.4]]), 0.3) == pytest.approx(0.0, abs=1e-15)
    assert ex.builtin_target("one")(np.zeros((4, 2)), 0.1).tolist() == [1.0] * 4
    with pytest.raises(KeyError):
        ex.builtin_target("gauss")


def test_run_config_defaults_and_validation():
    cfg = ex.RunConfig()
    assert (cfg.dim, cfg.nx, cfg.n_t(), cfg.lower, cfg.upper) == (3, 8, 8, 0.0, 0.8)
    assert cfg.rho_value() == pytest.approx(1 / 64)
    assert ex.RunConfig(nx=4, ht_rule="hx2").n_t() == 16
    assert ex.RunConfig(dim=1, point=(0.51, 0.51, 0.51)).point == (0.51,)
    assert ex.RunConfig(dim=2, point=(0.3,)).point == (0.3, 0.3)
    for bad in (dict(rho=-1.0), dict(dim=4), dict(lower=0.1), dict(lower=None),
                dict(target="nope"), dict(point=(1.2, 0.5, 0.5)), dict(nx=1)):
        with pytest.raises(ValueError):
            ex.RunConfig(**bad)


def test_convergence_record_row():
    rec = ex.ConvergenceRecord(4, 108, 37, 666)
    assert rec.row() == [4, 108, 37, 666, "18.0"]
    assert ex.ConvergenceRecord(2, 2, 0, 0).rel_cg == 0.0


def _small_op(d, n):
    return opm.build_operator(temporal.TemporalMesh(1.0, n),
                              spatial.build_structured_mesh(d, n), 1.0 / n**2)


@pytest.mark.parametrize("d", [1, 2])
def test_l2q_error_of_constants(d):
    op = _small_op(d, 4)
    one = ex.builtin_target("one")
    assert ex.l2q_error(op, np.zeros(op.size), one) == pytest.approx(1.0, abs=1e-12)
    assert ex.l2q_error(op, np.zeros(op.size), one, (0.0, 0.8)) == pytest.approx(0.8, abs=1e-12)
    with pytest.raises(ValueError):
        ex.l2q_error(op, np.zeros(op.size), one, quad_order=9)


def test_l2q_error_of_interpolant_is_second_order():
    g = ex.builtin_target("sine")
    errs = []
    for n in (8, 16, 32, 64):
        op = _small_op(1, n)
        x = op.smesh.vertices[op.smesh.vertex_of_dof]
        t = op.tmesh.nodes[1:]
        u = np.concatenate([g(x, tk) for tk in t])
        errs.append(ex.l2q_error(op, u, g))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    np.testing.assert_allclose(ratios, 4.0, rtol=0.05)


def test_trajectory_of_interpolant():
    n = 16
    tmesh = temporal.TemporalMesh(1.0, n)
    smesh = spatial.build_structured_mesh(3, n)
    g = ex.builtin_target("sine")
    x = smesh.vertices[smesh.vertex_of_dof]
    u = np.concatenate([g(x, tk) for tk in tmesh.nodes[1:]])
    traj = ex.extract_trajectory(tmesh, smesh, u, (0.51, 0.51, 0.51))
    assert traj.shape == (n + 1, 2)
    assert tuple(traj[0]) == (0.0, 0.0)
    exact = math.sin(0.51 * math.pi) ** 3 * np.sin(np.pi * traj[:, 0])
    assert np.abs(traj[:, 1] - exact).max() < 3.0 / n**2
    zero = ex.extract_trajectory(tmesh, smesh, np.zeros_like(u), (0.51, 0.51, 0.51))
    assert np.all(zero[:, 1] == 0)
    with pytest.raises(ValueError):
        ex.extract_trajectory(tmesh, smesh, u, (0.5, 1.0, 0.5))


def test_unconstrained_zero_target():
    cfg = ex.RunConfig(dim=1, nx=4, lower=None, upper=None, target="zero")
    u, rep = ex.solve_unconstrained(cfg)
    assert rep.converged and np.all(u == 0)


def test_unconstrained_matches_direct_solve():
    cfg = ex.RunConfig(dim=1, nx=4, lower=None, upper=None)
    problem = ex.setup_problem(cfg)
    u, rep = ex.solve_unconstrained(cfg, problem)
    ref = np.linalg.solve(opm.assemble_dense_oracle(problem.op, "K"), problem.f)
    np.testing.assert_allclose(u, ref, atol=1e-8)


def test_unconstrained_rates():
    cfg = ex.RunConfig(dim=1, lower=None, upper=None)
    rows = ex.run_unconstrained_convergence(cfg, [8, 16, 32, 64])
    assert rows[0][2] is None
    assert 1.7 <= rows[-1][2] <= 2.3
    flat = ex.RunConfig(dim=1, lower=None, upper=None, rho=0.0)
    rows = ex.run_unconstrained_convergence(flat, [16, 32, 64])
    assert rows[-1][2] == pytest.approx(2.0, abs=0.1)
    single = ex.run_unconstrained_convergence(cfg, [8])
    assert len(single) == 1 and single[0][2] is None


def test_constrained_smoke_run(tmp_path):
    cfg = ex.RunConfig(dim=3, levels=[2, 4], out=str(tmp_path))
    records, trajs, results = ex.run_constrained_experiment(cfg)
    assert [r.dof for r in records] == [2, 108]
    for traj, (_, res) in zip(trajs, results):
        assert res.converged
        assert traj[0, 1] == 0.0
        assert np.all(traj[:, 1] >= -1e-8) and np.all(traj[:, 1] <= 0.8 + 1e-8)
    with open(tmp_path / "convergence_hist.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ex.CONVERGENCE_HEADER
    for row in rows[1:]:
        n_it, total, rel = int(row[2]), int(row[3]), float(row[4])
        assert abs(rel * n_it - total) <= 0.05 * n_it
    with open(tmp_path / ex.trajectory_filename(3, 1)) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "t,u" and len(lines) == 4 + 2


def test_huge_bounds_take_one_undamped_step(tmp_path):
    cfg = ex.RunConfig(dim=1, lower=-1e6, upper=1e6, omega=1.0, levels=[8],
                       out=str(tmp_path))
    records, _, results = ex.run_constrained_experiment(cfg)
    assert records[0].newton_iterations == 1
    problem, res = results[0]
    u, _ = ex.solve_unconstrained(cfg.at_level(8), problem)
    np.testing.assert_allclose(res.u, u, atol=1e-10)


def test_csv_output_is_reproducible(tmp_path):
    outs = []
    for name in ("a", "b"):
        cfg = ex.RunConfig(dim=2, levels=[2, 4], out=str(tmp_path / name))
        ex.run_constrained_experiment(cfg)
        outs.append([(tmp_path / name / f).read_bytes() for f in
                     ("convergence_hist.csv", ex.trajectory_filename(2, 0),
                      ex.trajectory_filename(2, 1))])
    assert outs[0] == outs[1]


def test_constrained_experiment_needs_bounds():
    with pytest.raises(ValueError):
        ex.run_constrained_experiment(ex.RunConfig(lower=None, upper=None), write=False)
