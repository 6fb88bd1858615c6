"""Command-line front end.

Subcommands: ``init``, ``pretrain``, ``train <task>``, ``ntk``, ``compare``.
Every run writes ``config.resolved.txt`` into its output directory; passing
that file back with ``--config`` reproduces the run.

Exit codes: 0 success, 2 configuration error, 3 numeric/resource failure.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import formats, nets, ntk, tasks
from .errors import (
    ConfigError,
    FormatError,
    NumericError,
    ParameterError,
    ResourceError,
    ShapeError,
    UnsupportedConfigurationError,
)
from .tensor import Rng, avg_pool

BUILTIN_PREFIX = "builtin:"
DEFAULT_SIZE = 64

# downstream (iterations, lr) when not configured
TRAIN_DEFAULTS = {
    "represent": (200, 1e-4),
    "superres": (2000, 1e-2),
    "denoise": (2000, 1e-2),
    "inpaint": (2000, 1e-2),
}


# --------------------------------------------------------------------------
# helpers


def _image_path(ref: str):
    if ref.startswith(BUILTIN_PREFIX):
        name = ref[len(BUILTIN_PREFIX) :]
        path = resources.files("noiseinit") / "data" / f"{name}64.pgm"
        if not path.is_file():
            raise ConfigError(f"unknown builtin image {name!r}")
        return path
    path = Path(ref)
    if not path.is_file():
        raise ConfigError(f"image not found: {ref}")
    return path


def load_gray(ref: str) -> np.ndarray:
    with resources.as_file(_image_path(ref)) as path:
        return formats.load_image(path).grayscale()


def load_mask(ref: str) -> np.ndarray:
    return (load_gray(ref) > 0.5).astype(np.float64)


def resolve_net(cfg: cfgmod.RunConfig) -> str:
    net = cfg["net"]
    if net == "auto":
        net = "siren" if cfg["task"] in (None, "represent") else "cnn"
    if net not in ("siren", "cnn"):
        raise ConfigError(f"net must be siren, cnn or auto, got {net!r}")
    cfg.update({"net": net})
    return net


def build_spec(cfg: cfgmod.RunConfig, hw: tuple[int, int]):
    if resolve_net(cfg) == "siren":
        return nets.MlpSpec(
            in_dim=2,
            hidden_dim=cfg["hidden_dim"],
            num_hidden_layers=cfg["num_hidden_layers"],
            out_dim=1,
            omega0=cfg["omega0"],
        )
    return nets.CnnSpec(
        input_channels=cfg["input_channels"],
        input_hw=hw,
        encoder_channels=cfg["encoder_channels"],
        decoder_channels=cfg["decoder_channels"],
        skip_channels=cfg["skip_channels"],
        output_channels=1,
    )


def output_hw(cfg: cfgmod.RunConfig) -> tuple[int, int]:
    """Spatial size of the network output (the high-resolution grid for superres)."""
    if cfg["image"] is not None:
        h, w = load_gray(cfg["image"]).shape
        if cfg["task"] == "superres" and cfg.command == "train":
            return h * cfg["factor"], w * cfg["factor"]
        return h, w
    size = cfg["size"] or DEFAULT_SIZE
    cfg.update({"size": size})
    return size, size


def initial_params(cfg, spec, plan: tasks.SeedPlan) -> nets.ParamVector:
    if cfg["params"] is not None:
        return formats.load_params(cfg["params"], spec)
    return nets.init_params(spec, Rng(plan.init))


def pretrain_config(cfg, spec, plan: tasks.SeedPlan, require_noise: bool) -> tasks.PretrainConfig:
    recipe_task = cfg["task"] or ("represent" if isinstance(spec, nets.MlpSpec) else "denoise")
    noise, iters, lr = tasks.PRETRAIN_RECIPES[recipe_task]
    if require_noise:
        cfg.require("noise")
    if cfg["noise"] is not None:
        noise = tasks.parse_noise(cfg["noise"])
    iters = iters if cfg["pretrain_iters"] is None else cfg["pretrain_iters"]
    lr = lr if cfg["pretrain_lr"] is None else cfg["pretrain_lr"]
    cfg.update({"noise": str(noise), "pretrain_iters": iters, "pretrain_lr": lr})
    return tasks.PretrainConfig(noise, iters, lr, cfg["resample_each_iter"], plan.noise_target)


def train_settings(cfg) -> tuple[int, float]:
    iters, lr = TRAIN_DEFAULTS[cfg["task"]]
    iters = iters if cfg["iters"] is None else cfg["iters"]
    lr = lr if cfg["lr"] is None else cfg["lr"]
    cfg.update({"iters": iters, "lr": lr})
    return iters, lr


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(cfg, out: Path) -> None:
    cfg.write(out / "config.resolved.txt")


def _net_input(spec, hw, plan):
    return tasks.network_input(spec, hw, plan.net_input)


# --------------------------------------------------------------------------
# commands


def cmd_init(cfg) -> int:
    hw = output_hw(cfg)
    spec = build_spec(cfg, hw)
    plan = tasks.SeedPlan.from_master(cfg["seed"])
    out = _out_dir(cfg)
    formats.save_params(nets.init_params(spec, Rng(plan.init)), spec, out / "init.params")
    _write_config(cfg, out)
    return 0


def cmd_pretrain(cfg) -> int:
    hw = output_hw(cfg)
    spec = build_spec(cfg, hw)
    plan = tasks.SeedPlan.from_master(cfg["seed"])
    pcfg = pretrain_config(cfg, spec, plan, require_noise=True)
    params0 = initial_params(cfg, spec, plan)
    params, trace = tasks.pretrain(spec, params0, pcfg, _net_input(spec, hw, plan))
    out = _out_dir(cfg)
    formats.save_params(params, spec, out / "pretrained.params")
    formats.write_trace_csv(trace, out / "pretrain_trace.csv")
    _write_config(cfg, out)
    return 0


def _task_data(cfg, task: str):
    """Load (target, mask, reference) for ``train`` from the configured files."""
    cfg.require("image")
    target = load_gray(cfg["image"])
    mask = None
    if task == "inpaint":
        cfg.require("mask")
        mask = load_mask(cfg["mask"])
        if mask.shape != target.shape:
            raise ConfigError(f"mask {mask.shape} does not match image {target.shape}")
    reference = load_gray(cfg["reference"]) if cfg["reference"] is not None else None
    return target, mask, reference


def _run(spec, params, task, target, mask, reference, iters, lr, net_input, factor, log_every):
    if task == "represent":
        return tasks.run_represent(spec, params, target, iters, lr, log_every=log_every)
    if task == "superres":
        return tasks.run_superres(spec, params, target, factor, iters, lr, reference,
                                  net_input=net_input, log_every=log_every)
    if task == "denoise":
        return tasks.run_denoise(spec, params, target, iters, lr, reference,
                                 net_input=net_input, log_every=log_every)
    return tasks.run_inpaint(spec, params, target, mask, iters, lr, reference,
                             net_input=net_input, log_every=log_every)


def _estimate_image(spec, params, net_input, hw):
    out = nets.forward(spec, params, net_input)
    return out.reshape(hw)


def cmd_train(cfg) -> int:
    task = cfg["task"]
    target, mask, reference = _task_data(cfg, task)
    hw = output_hw(cfg)
    spec = build_spec(cfg, hw)
    plan = tasks.SeedPlan.from_master(cfg["seed"])
    iters, lr = train_settings(cfg)
    params0 = initial_params(cfg, spec, plan)
    net_input = _net_input(spec, hw, plan)
    params, trace = _run(spec, params0, task, target, mask, reference, iters, lr, net_input,
                         cfg["factor"], cfg["log_every"])
    out = _out_dir(cfg)
    formats.save_params(params, spec, out / "final.params")
    formats.write_trace_csv(trace, out / "trace.csv")
    formats.save_image(_estimate_image(spec, params, net_input, hw), out / "output.pgm")
    _write_config(cfg, out)
    return 0


def write_ntk_outputs(spec, params, cfg, hw, out: Path) -> ntk.SpectralReport:
    out.mkdir(parents=True, exist_ok=True)
    p = cfg["probe_size"]
    probes = ntk.probe_grid(hw, (p, p))
    kernel, spectrum, report = ntk.analyze(
        spec, params, probes, (p, p), method=cfg["eig_method"], cap=cfg["probe_cap"],
        centroid_modes=cfg["centroid_modes"],
    )
    formats.save_matrix(kernel.k, out / "K.mat")
    formats.save_matrix(spectrum.eigenvalues, out / "eigenvalues.mat")
    formats.save_matrix(spectrum.eigenvectors, out / "eigenvectors.mat")
    formats.write_rows_csv(out / "eigenvalues.csv", ["index", "eigenvalue"],
                           [(i + 1, float(v)) for i, v in enumerate(spectrum.eigenvalues)])
    formats.write_rows_csv(out / "report.csv", ["metric", "value"], report_rows(report, kernel.n))
    formats.write_rows_csv(out / "centroids.csv", ["mode", "freq_centroid"],
                           [(i + 1, float(c)) for i, c in enumerate(report.eigvec_freq_centroids)])
    for i in range(min(cfg["top_modes"], spectrum.n)):
        power = ntk.eigvec_spectrum(spectrum, i)
        formats.save_image(power / power.max(), out / f"mode_{i + 1:03d}_power.pgm")
    return report


def report_rows(report: ntk.SpectralReport, n: int):
    rows = [("n", n)]
    rows += [(f"decay_ratio_{k}", float(v)) for k, v in report.decay_ratios.items()]
    rows += [("effective_rank", report.effective_rank), ("band_width", report.band_width)]
    return rows


def cmd_ntk(cfg) -> int:
    hw = output_hw(cfg)
    spec = build_spec(cfg, hw)
    if not isinstance(spec, nets.MlpSpec):
        raise ConfigError("ntk analysis needs net = siren (scalar-output coordinate network)")
    plan = tasks.SeedPlan.from_master(cfg["seed"])
    params = initial_params(cfg, spec, plan)
    out = _out_dir(cfg)
    write_ntk_outputs(spec, params, cfg, hw, out)
    _write_config(cfg, out)
    return 0


def synthesize(cfg, clean: np.ndarray, plan: tasks.SeedPlan):
    """Observation, mask and PSNR reference derived from a clean image for ``compare``."""
    task = cfg["task"]
    if task == "represent":
        return clean, None, clean
    if task == "superres":
        return avg_pool(clean, cfg["factor"]), None, clean
    if task == "denoise":
        return tasks.add_gaussian_noise(clean, cfg["noise_sigma"], plan.corruption), None, clean
    if cfg["mask"] is not None:
        mask = load_mask(cfg["mask"])
    else:
        mask = tasks.rect_mask(clean.shape, tasks.default_rects(clean.shape))
    return clean * mask, mask, clean


def cmd_compare(cfg) -> int:
    cfg.require("task")
    if cfg["image"] is None:
        cfg.update({"image": "builtin:camera"})
    task = cfg["task"]
    clean = load_gray(cfg["image"])
    hw = clean.shape
    spec = build_spec(cfg, hw)
    plan = tasks.SeedPlan.from_master(cfg["seed"])
    pcfg = pretrain_config(cfg, spec, plan, require_noise=False)
    iters, lr = train_settings(cfg)
    target, mask, reference = synthesize(cfg, clean, plan)
    net_input = _net_input(spec, hw, plan)
    params_init = initial_params(cfg, spec, plan)
    out = _out_dir(cfg)
    _write_config(cfg, out)

    params_pre, pre_trace = tasks.pretrain(spec, params_init, pcfg, net_input)
    branches = {"A": params_init, "B": params_pre}
    traces = {}
    for name, start in branches.items():
        bdir = out / name
        bdir.mkdir(exist_ok=True)
        formats.save_matrix(target, bdir / "target.mat")
        formats.save_params(start, spec, bdir / "start.params")
        params, trace = _run(spec, start, task, target, mask, reference, iters, lr, net_input,
                             cfg["factor"], cfg["log_every"])
        traces[name] = trace
        formats.write_trace_csv(trace, bdir / "trace.csv")
        formats.save_params(params, spec, bdir / "final.params")
        formats.save_image(_estimate_image(spec, params, net_input, hw), bdir / "output.pgm")
    formats.write_trace_csv(pre_trace, out / "B" / "pretrain_trace.csv")

    rows = [("task", task), ("net", cfg["net"])]
    rows.append(("crossover_iter", tasks.crossover_iter(traces["A"], traces["B"])))
    for name in branches:
        t = traces[name]
        rows += [
            (f"peak_psnr_iter_{name}", t.peak_iter()),
            (f"peak_psnr_{name}", float(np.nanmax(t.psnrs))),
            (f"final_psnr_{name}", float(t.psnrs[-1])),
        ]
    if isinstance(spec, nets.MlpSpec):
        for name, label in (("A", "init"), ("B", "pretrained")):
            report = write_ntk_outputs(spec, branches[name], cfg, hw, out / name / "ntk")
            rows += [(f"{k}_{label}", v) for k, v in report_rows(report, 0)[1:]]
    formats.write_rows_csv(out / "summary.csv", ["metric", "value"], rows)
    return 0


COMMANDS = {
    "init": cmd_init,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "ntk": cmd_ntk,
    "compare": cmd_compare,
}


# --------------------------------------------------------------------------
# argument parsing

_NET_FLAGS = ("net", "seed", "image", "size", "hidden_dim", "num_hidden_layers", "omega0",
              "input_channels", "encoder_channels", "decoder_channels", "skip_channels", "out")
_PROBE_FLAGS = ("probe_size", "probe_cap", "eig_method", "top_modes", "centroid_modes")


def _add(parser, key: str, flag: str | None = None, dest: str | None = None):
    flag = flag or "--" + key.replace("_", "-")
    parser.add_argument(flag, dest=dest or key, default=None, metavar=key.upper(),
                        help=cfgmod.KEYS[key][2])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noiseinit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key = value configuration file")
        for k in _NET_FLAGS:
            _add(p, k)
        _add(p, "log_every")

    p = sub.add_parser("init", help="write freshly initialized parameters")
    common(p)

    p = sub.add_parser("pretrain", help="fit the network to a noise target")
    common(p)
    _add(p, "pretrain_iters", "--iters")
    _add(p, "pretrain_lr", "--lr")
    for k in ("noise", "resample_each_iter", "params", "task"):
        _add(p, k)

    p = sub.add_parser("train", help="run one image task")
    common(p)
    p.add_argument("task", choices=tasks.TASK_KINDS)
    for k in ("iters", "lr", "mask", "reference", "factor", "params"):
        _add(p, k)
    _add(p, "params", "--init-params", dest="init_params")

    p = sub.add_parser("ntk", help="empirical NTK spectrum of a SIREN")
    common(p)
    _add(p, "params")
    for k in _PROBE_FLAGS:
        _add(p, k)

    p = sub.add_parser("compare", help="random init vs noise-pretrained init, same seeds")
    common(p)
    for k in ("task", "iters", "lr", "pretrain_iters", "pretrain_lr", "noise", "resample_each_iter",
              "mask", "factor", "noise_sigma", *_PROBE_FLAGS):
        _add(p, k)
    return parser


def resolve_config(args: argparse.Namespace) -> cfgmod.RunConfig:
    flags = {}
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        if key == "init_params":
            key = "params"
        flags[key] = cfgmod.parse_value(key, value)
    file_values = cfgmod.load(args.config) if args.config else None
    cfg = cfgmod.resolve(file_values, flags)
    cfg.command = args.command
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        code = COMMANDS[args.command](cfg)
    except (ConfigError, ParameterError, ShapeError, FormatError, UnsupportedConfigurationError) as exc:
        print(f"noiseinit: configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, ResourceError, FloatingPointError) as exc:
        print(f"noiseinit: numeric failure: {exc}", file=sys.stderr)
        return 3
    return code


if __name__ == "__main__":
    sys.exit(main())
