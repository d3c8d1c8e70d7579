"""``motionprior`` command line.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical failure.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import fusion, gp, io, kernels, metrics, so3, synth
from .exceptions import ConfigError, DataError, NumericalError
from .kernels import KernelKind, KernelSpec, Matern32Params

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

log = logging.getLogger("motionprior")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_threads():
    env = os.environ.get("MOTIONPRIOR_THREADS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            pass
    return os.cpu_count() or 1


def _json_value(x):
    if isinstance(x, float) and not np.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


def _emit(obj, path=None):
    text = json.dumps({k: _json_value(v) for k, v in obj.items()}, indent=2)
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)


# -- shared argument groups ----------------------------------------------------

def _sensor_args(p, frames=True):
    if frames:
        p.add_argument("--frames", required=True, help="frames CSV (frame_id,t)")
    p.add_argument("--gyro", help="gyro CSV (t,wx,wy,wz)")
    p.add_argument("--poses", help="pose CSV (t,px,py,pz,qw,qx,qy,qz)")
    p.add_argument("--max-gap", type=float, default=kernels.DEFAULT_MAX_GAP,
                   help="largest tolerated gap between gyro samples [s] (default %(default)s)")


def _hyper_args(p, sigma=False):
    p.add_argument("--gamma2", type=float, help="kernel magnitude (gyro factor for product)")
    p.add_argument("--ell", type=float, help="kernel length-scale (gyro factor for product)")
    p.add_argument("--gamma2-t", type=float, help="time-factor magnitude (product kernel)")
    p.add_argument("--ell-t", type=float, help="time-factor length-scale (product kernel)")
    if sigma:
        p.add_argument("--sigma2", type=float, help="observation noise variance")


def _load_sensors(args, kind):
    frames = io.read_frames_csv(args.frames)
    need_gyro = kind in (KernelKind.GYRO, KernelKind.PRODUCT)
    if need_gyro and not args.gyro:
        raise UsageError(f"--gyro is required for kind '{kind.value}'")
    if kind is KernelKind.POSE and not args.poses:
        raise UsageError("--poses is required for kind 'pose'")
    gyro = io.read_gyro_csv(args.gyro) if args.gyro else None
    poses = io.read_pose_csv(args.poses) if args.poses else None
    return frames, gyro, poses


def _kernel_from_args(args, kind):
    if args.gamma2 is None or args.ell is None:
        raise UsageError("--gamma2 and --ell are required")
    params = Matern32Params(args.gamma2, args.ell)
    if kind is KernelKind.PRODUCT:
        if args.gamma2_t is None or args.ell_t is None:
            raise UsageError("--gamma2-t and --ell-t are required for the product kernel")
        return KernelSpec(kind, params, Matern32Params(args.gamma2_t, args.ell_t))
    if args.gamma2_t is not None or args.ell_t is not None:
        raise UsageError("--gamma2-t/--ell-t only apply to the product kernel")
    return KernelSpec(kind, params)


# -- subcommands -----------------------------------------------------------------

def cmd_distances(args):
    kind = KernelKind(args.kind)
    frames, gyro, poses = _load_sensors(args, kind)
    D = kernels.distance_matrix(kind, frames, gyro, poses, args.max_gap)
    io.write_matrix_csv(args.out, D)
    if args.plot:
        from .plotting import distance_figure
        mats = {f"{kind.value} distance": D}
        # add whichever other distances the provided streams allow, for comparison
        for other, ok in ((KernelKind.TIME, True), (KernelKind.GYRO, gyro is not None),
                          (KernelKind.POSE, poses is not None)):
            if ok and other is not kind:
                mats[f"{other.value} distance"] = kernels.distance_matrix(
                    other, frames, gyro, poses, args.max_gap)
        distance_figure(args.plot, mats)


def cmd_covariance(args):
    kind = KernelKind(args.kind)
    frames, gyro, poses = _load_sensors(args, kind)
    kernel = _kernel_from_args(args, kind)
    C = kernels.build_covariance(kernel, frames, gyro, poses, args.max_gap)
    io.write_matrix_csv(args.out, C)


def _hyper_for_fuse(args, kind):
    explicit = args.gamma2 is not None or args.ell is not None or args.sigma2 is not None
    if args.fit and explicit:
        raise UsageError("--fit cannot be combined with explicit hyperparameters")
    if args.fit:
        return "fit"
    if args.sigma2 is None:
        raise UsageError("give --gamma2, --ell and --sigma2, or --fit")
    return gp.GPHyper(_kernel_from_args(args, kind), args.sigma2)


def cmd_fuse(args):
    kind = KernelKind(args.kernel)
    hyper = _hyper_for_fuse(args, kind)
    try:
        config = fusion.FusionConfig(kind, hyper, args.solver, args.window, args.lag,
                                     args.max_gap, args.threads)
    except ConfigError as e:
        raise UsageError(str(e)) from e
    frames, gyro, poses = _load_sensors(args, kind)
    latents = io.read_latents(args.latents)
    out, report = fusion.fuse_sequence(config, frames, latents, gyro, poses)
    io.write_latents(args.out, out)
    rep = report.to_dict()
    if args.report:
        _emit(rep, args.report)
    if args.plot:
        from .plotting import fusion_figure
        var = np.array(rep["posterior_variance"]["per_frame"])
        fusion_figure(args.plot, latents.timestamps, latents.Y, out.Y, var)


def cmd_fit(args):
    kind = KernelKind(args.kernel)
    frames, gyro, poses = _load_sensors(args, kind)
    latents = io.read_latents(args.latents)
    fusion.check_alignment(frames, latents)
    hyper = gp.fit_hyperparams(kind, frames, latents.Y, gyro, poses,
                               max_workers=args.threads)
    _emit(hyper.to_dict())


def cmd_quat2gyro(args):
    poses = io.read_pose_csv(args.poses)
    io.write_gyro_csv(args.out, so3.quats_to_gyro(poses))


def cmd_sample(args):
    kind = KernelKind(args.kernel)
    frames, gyro, poses = _load_sensors(args, kind)
    kernel = _kernel_from_args(args, kind)
    C = kernels.build_covariance(kernel, frames, gyro, poses, args.max_gap)
    Z = synth.sample_gp(C, args.dims, args.seed)
    io.write_latents(args.out, gp.LatentSequence(frames.t, Z.astype(np.float32)))


def cmd_synth(args):
    spec = synth.TrajectorySpec(seed=args.seed, duration=args.duration,
                                gyro_rate=args.gyro_rate, frame_rate=args.frame_rate,
                                profile=args.profile, omega_max=args.omega_max)
    kernel = _kernel_from_args(args, KernelKind(args.kernel))
    manifest = synth.make_dataset(spec, kernel, args.noise, args.out, args.dims)
    _emit(manifest)


def cmd_eval_disparity(args):
    pred = io.read_disparity(args.pred)
    gt = io.read_disparity(args.gt)
    _emit({"epe": metrics.epe(pred, gt), "d1_all": metrics.d1_all(pred, gt),
           "valid_pixels": metrics.valid_pixels(gt)})


def cmd_eval_warp(args):
    left = io.read_gray_image(args.left)
    right = io.read_gray_image(args.right)
    disp = io.read_disparity(args.disp)
    synth_left, valid = metrics.warp_right_to_left(right, disp, sign=args.sign)
    _emit({"ssim": metrics.ssim(synth_left, left, mask=valid),
           "psnr": metrics.psnr(synth_left, left, mask=valid),
           "valid_fraction": float(np.mean(valid))})


def build_parser():
    p = _Parser(prog="motionprior", description="Movement-induced GP priors for temporal latent fusion.")
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help="worker cap (default: $MOTIONPRIOR_THREADS or CPU count)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("distances", help="frame-to-frame distance matrix as CSV")
    s.add_argument("--kind", required=True, choices=["time", "gyro", "pose"])
    _sensor_args(s)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", help="also render the available distance matrices to this image")
    s.set_defaults(func=cmd_distances)

    s = sub.add_parser("covariance", help="Matérn-3/2 covariance matrix as CSV")
    s.add_argument("--kind", required=True, choices=[k.value for k in KernelKind])
    _sensor_args(s)
    _hyper_args(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_covariance)

    s = sub.add_parser("fuse", help="fuse a latent sequence with a motion prior")
    s.add_argument("--kernel", required=True, choices=[k.value for k in KernelKind])
    _sensor_args(s)
    s.add_argument("--latents", required=True)
    _hyper_args(s, sigma=True)
    s.add_argument("--fit", action="store_true", help="fit hyperparameters by marginal likelihood")
    s.add_argument("--solver", default="auto", choices=list(fusion.SOLVERS))
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--window", type=int)
    mode.add_argument("--lag", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.add_argument("--plot", help="render observed vs fused latents to this image")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("fit", help="fit hyperparameters and print them as JSON")
    s.add_argument("--kernel", required=True, choices=[k.value for k in KernelKind])
    _sensor_args(s)
    s.add_argument("--latents", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("quat2gyro", help="angular rates from an orientation track")
    s.add_argument("--poses", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_quat2gyro)

    s = sub.add_parser("sample", help="draw latents from the GP prior")
    s.add_argument("--kernel", required=True, choices=[k.value for k in KernelKind])
    _sensor_args(s)
    _hyper_args(s)
    s.add_argument("--dims", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--profile", required=True, choices=["constant", "stopgo", "random"])
    s.add_argument("--duration", type=float, default=10.0)
    s.add_argument("--gyro-rate", type=float, default=100.0)
    s.add_argument("--frame-rate", type=float, default=10.0)
    s.add_argument("--omega-max", type=float, default=1.0)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--kernel", default="gyro", choices=[k.value for k in KernelKind])
    _hyper_args(s)
    s.add_argument("--noise", type=float, default=0.5, help="noise standard deviation")
    s.add_argument("--dims", type=int, default=8)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("eval-disparity", help="EPE and D1-all against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.set_defaults(func=cmd_eval_disparity)

    s = sub.add_parser("eval-warp", help="SSIM/PSNR of the disparity-warped right view")
    s.add_argument("--left", required=True)
    s.add_argument("--right", required=True)
    s.add_argument("--disp", required=True)
    s.add_argument("--sign", type=int, default=1, choices=[1, -1])
    s.set_defaults(func=cmd_eval_warp)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"motionprior {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"motionprior {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as e:
        print(f"motionprior {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
