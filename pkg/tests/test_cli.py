import json

import numpy as np
import pytest

from motionprior import io, synth
from motionprior.cli import build_parser, main
from motionprior.gp import LatentSequence
from motionprior.kernels import KernelSpec, Matern32Params
from motionprior.so3 import GyroLog

SUBCOMMANDS = ["distances", "covariance", "fuse", "fit", "quat2gyro", "sample", "synth",
               "eval-disparity", "eval-warp"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("ds")
    spec = synth.TrajectorySpec(seed=3, duration=6, profile="stopgo")
    synth.make_dataset(spec, KernelSpec("gyro", Matern32Params(1.0, 0.5)), 0.5, d, dims=4)
    return d


@pytest.fixture(scope="module")
def moving(tmp_path_factory):
    # rotation never stops, so gyro arclengths are distinct and exact interpolation is possible
    d = tmp_path_factory.mktemp("mv")
    spec = synth.TrajectorySpec(seed=4, duration=6, profile="constant", omega_max=1.0)
    synth.make_dataset(spec, KernelSpec("gyro", Matern32Params(1.0, 0.5)), 0.5, d, dims=4)
    return d


def _args(data, *extra):
    return ["--frames", str(data / "frames.csv"), "--gyro", str(data / "gyro.csv"),
            "--poses", str(data / "poses.csv"), *extra]


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as e:
        main([cmd, "--help"])
    assert e.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_unknown_flag_is_usage_error(data, tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["distances", "--kind", "time", "--frames", str(data / "frames.csv"),
              "--out", str(tmp_path / "d.csv"), "--bogus"])
    assert e.value.code == 1


def test_no_command():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1


@pytest.mark.parametrize("kind", ["time", "gyro", "pose"])
def test_distances_symmetric(data, tmp_path, kind):
    out = tmp_path / "d.csv"
    assert main(["distances", "--kind", kind, *_args(data), "--out", str(out)]) == 0
    D = io.read_matrix_csv(out)
    n = len(io.read_frames_csv(data / "frames.csv"))
    assert D.shape == (n, n)
    np.testing.assert_array_equal(D, D.T)
    assert not np.diag(D).any()


def test_distances_stationary(tmp_path):
    t = np.arange(101) * 0.01
    io.write_gyro_csv(tmp_path / "g.csv", GyroLog(t, np.zeros((101, 3))))
    (tmp_path / "f.csv").write_text("frame_id,t\n0,0.0\n1,0.3\n2,0.9\n")
    out = tmp_path / "d.csv"
    assert main(["distances", "--kind", "gyro", "--frames", str(tmp_path / "f.csv"),
                 "--gyro", str(tmp_path / "g.csv"), "--out", str(out)]) == 0
    assert not io.read_matrix_csv(out).any()


def test_missing_gyro_exit_1(data, tmp_path, capsys):
    rc = main(["distances", "--kind", "gyro", "--frames", str(data / "frames.csv"),
               "--out", str(tmp_path / "d.csv")])
    assert rc == 1
    assert "--gyro" in capsys.readouterr().err


def test_bad_data_exit_2(data, tmp_path, capsys):
    bad = tmp_path / "g.csv"
    bad.write_text("time,wx,wy,wz\n0,0,0,0\n")
    rc = main(["distances", "--kind", "gyro", "--frames", str(data / "frames.csv"),
               "--gyro", str(bad), "--out", str(tmp_path / "d.csv")])
    assert rc == 2
    assert "t,wx,wy,wz" in capsys.readouterr().err
    rc = main(["quat2gyro", "--poses", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_coverage_gap_exit_2(data, tmp_path):
    g = io.read_gyro_csv(data / "gyro.csv")
    keep = (g.t < 2.0) | (g.t > 3.0)
    io.write_gyro_csv(tmp_path / "g.csv", GyroLog(g.t[keep], g.omega[keep]))
    rc = main(["distances", "--kind", "gyro", "--frames", str(data / "frames.csv"),
               "--gyro", str(tmp_path / "g.csv"), "--out", str(tmp_path / "d.csv")])
    assert rc == 2


@pytest.mark.parametrize("kind", ["time", "gyro", "pose", "product"])
def test_covariance(data, tmp_path, kind):
    out = tmp_path / "c.csv"
    extra = ["--gamma2-t", "1", "--ell-t", "2"] if kind == "product" else []
    assert main(["covariance", "--kind", kind, *_args(data), "--gamma2", "2", "--ell", "0.5",
                 *extra, "--out", str(out)]) == 0
    C = io.read_matrix_csv(out)
    np.testing.assert_allclose(np.diag(C), 2.0)
    assert np.linalg.eigvalsh(C).min() > -1e-10


def test_covariance_product_needs_time_factor(data, tmp_path):
    assert main(["covariance", "--kind", "product", *_args(data), "--gamma2", "1",
                 "--ell", "1", "--out", str(tmp_path / "c.csv")]) == 1


def _fuse(data, tmp_path, *extra, name="o.lseq"):
    out = tmp_path / name
    rc = main(["fuse", *_args(data), "--latents", str(data / "noisy.lseq"),
               "--out", str(out), *extra])
    return rc, out


@pytest.mark.parametrize("kernel", ["time", "gyro", "pose", "product"])
def test_fuse_interpolation_limit(moving, tmp_path, kernel):
    data = moving
    extra = ["--gamma2-t", "1", "--ell-t", "2"] if kernel == "product" else []
    rc, out = _fuse(data, tmp_path, "--kernel", kernel, "--gamma2", "1", "--ell", "0.5",
                    "--sigma2", "1e-12", *extra)
    assert rc == 0
    Y = io.read_latents(data / "noisy.lseq").Y
    Z = io.read_latents(out).Y
    assert np.max(np.abs(Z - Y)) <= 1e-6 * np.max(np.abs(Y))


def test_fuse_solvers_agree(data, tmp_path):
    hyp = ["--kernel", "gyro", "--gamma2", "1", "--ell", "0.5", "--sigma2", "0.25"]
    _, a = _fuse(data, tmp_path, *hyp, "--solver", "batch", name="a.lseq")
    _, b = _fuse(data, tmp_path, *hyp, "--solver", "statespace", name="b.lseq")
    A, B = io.read_latents(a).Y, io.read_latents(b).Y
    # outputs are stored as float32; compare at that precision floor
    assert np.max(np.abs(A - B)) <= max(1e-8, 2 * np.finfo(np.float32).eps) * np.max(np.abs(A))


def test_fuse_statespace_pose_exit_1(data, tmp_path, capsys):
    rc, _ = _fuse(data, tmp_path, "--kernel", "pose", "--solver", "statespace", "--fit")
    assert rc == 1
    assert "unsupported combination" in capsys.readouterr().err


def test_fuse_hyper_flag_errors(data, tmp_path):
    assert _fuse(data, tmp_path, "--kernel", "gyro", "--gamma2", "1", "--ell", "1")[0] == 1
    assert _fuse(data, tmp_path, "--kernel", "gyro", "--fit", "--sigma2", "1")[0] == 1
    with pytest.raises(SystemExit) as e:
        _fuse(data, tmp_path, "--kernel", "gyro", "--fit", "--window", "3", "--lag", "2")
    assert e.value.code == 1


def test_fuse_report_and_plot(data, tmp_path):
    rep, png = tmp_path / "r.json", tmp_path / "f.png"
    rc, out = _fuse(data, tmp_path, "--kernel", "gyro", "--fit", "--lag", "5",
                    "--report", str(rep), "--plot", str(png))
    assert rc == 0
    r = json.loads(rep.read_text())
    assert r["mode"] == "fixed-lag(5)" and r["solver"] == "statespace"
    assert r["kernel"] == "gyro" and r["dims"] == 4
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_fuse_misaligned_exit_2(data, tmp_path):
    lat = io.read_latents(data / "noisy.lseq")
    t = lat.timestamps.copy()
    t[1] += 1e-4
    io.write_latents(tmp_path / "bad.lseq", LatentSequence(t, lat.Y))
    rc = main(["fuse", *_args(data), "--latents", str(tmp_path / "bad.lseq"), "--kernel", "time",
               "--gamma2", "1", "--ell", "1", "--sigma2", "0.1", "--out", str(tmp_path / "o")])
    assert rc == 2


def test_distances_plot(data, tmp_path):
    png = tmp_path / "d.png"
    assert main(["distances", "--kind", "gyro", *_args(data), "--out", str(tmp_path / "d.csv"),
                 "--plot", str(png)]) == 0
    assert png.stat().st_size > 0


def test_fit_prints_json(data, capsys):
    assert main(["fit", "--kernel", "time", *_args(data), "--latents", str(data / "noisy.lseq")]) == 0
    h = json.loads(capsys.readouterr().out)
    assert {"gamma2", "ell", "sigma2", "nlml", "degraded"} <= set(h)
    assert h["gamma2"] > 0 and h["sigma2"] > 0


def test_quat2gyro(data, tmp_path):
    out = tmp_path / "g.csv"
    assert main(["quat2gyro", "--poses", str(data / "poses.csv"), "--out", str(out)]) == 0
    g = io.read_gyro_csv(out)
    ref = io.read_gyro_csv(data / "gyro.csv")
    assert g.t.tobytes() == ref.t.tobytes()
    # away from the rate switches the finite-difference rates match the log
    inner = np.all(np.abs(np.diff(ref.omega, axis=0)) == 0, axis=1)
    ok = np.zeros(len(ref.t), bool)
    ok[1:-1] = inner[:-1] & inner[1:]
    np.testing.assert_allclose(g.omega[ok], ref.omega[ok], atol=1e-4)


def test_sample_deterministic(data, tmp_path):
    outs = []
    for name in ("a.lseq", "b.lseq"):
        out = tmp_path / name
        assert main(["sample", "--kernel", "gyro", *_args(data), "--gamma2", "1", "--ell", "0.5",
                     "--dims", "3", "--seed", "7", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_synth(tmp_path, capsys):
    out = tmp_path / "ds"
    assert main(["synth", "--profile", "random", "--duration", "2", "--seed", "1",
                 "--gamma2", "1", "--ell", "0.5", "--dims", "3", "--out", str(out)]) == 0
    man = json.loads(capsys.readouterr().out)
    assert man["dims"] == 3 and (out / "noisy.lseq").exists()


def test_eval_disparity(tmp_path, capsys):
    gt = np.full((2, 2), 10.0, np.float32)
    pred = gt.copy()
    pred[0, 0] = 14.0
    io.write_pfm(tmp_path / "p.pfm", pred)
    io.write_disparity_pgm(tmp_path / "g.pgm", gt)
    assert main(["eval-disparity", "--pred", str(tmp_path / "p.pfm"),
                 "--gt", str(tmp_path / "g.pgm")]) == 0
    r = json.loads(capsys.readouterr().out)
    assert r == {"epe": 1.0, "d1_all": 25.0, "valid_pixels": 4}


def test_eval_disparity_mismatch_exit_2(tmp_path):
    io.write_pfm(tmp_path / "p.pfm", np.ones((2, 3)))
    io.write_pfm(tmp_path / "g.pfm", np.ones((3, 2)))
    assert main(["eval-disparity", "--pred", str(tmp_path / "p.pfm"),
                 "--gt", str(tmp_path / "g.pfm")]) == 2


def test_eval_warp(tmp_path, capsys, rng):
    H, W, d = 32, 48, 3
    scene = (rng.uniform(size=(H, W + d)) * 255).astype(np.uint8)
    io.write_gray_image(tmp_path / "l.pgm", scene[:, :W])
    io.write_gray_image(tmp_path / "r.pgm", scene[:, d:])
    io.write_pfm(tmp_path / "d.pfm", np.full((H, W), float(d)))
    assert main(["eval-warp", "--left", str(tmp_path / "l.pgm"), "--right", str(tmp_path / "r.pgm"),
                 "--disp", str(tmp_path / "d.pfm")]) == 0
    r = json.loads(capsys.readouterr().out)
    assert r["psnr"] == "inf"
    assert r["ssim"] == pytest.approx(1.0, abs=1e-12)
    assert r["valid_fraction"] == pytest.approx((W - d) / W)


def test_threads_env(monkeypatch):
    monkeypatch.setenv("MOTIONPRIOR_THREADS", "3")
    args = build_parser().parse_args(["quat2gyro", "--poses", "p", "--out", "o"])
    assert args.threads == 3
