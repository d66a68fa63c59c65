"""Command-line interface: ``catbsi {train,sample,eval,trajectories,stability,plot-data}``.

Exit codes: 0 success, 2 usage/configuration/input errors, 3 numerical
failure (non-finite loss).
"""

import argparse
import os
import sys

import numpy as np

from catbsi import graphs as G
from catbsi.belief import sample_prior
from catbsi.config import ConfigError, RunConfig
from catbsi.model import CheckpointError, ReconNet, load_checkpoint, save_checkpoint
from catbsi.rng import CounterRNG
from catbsi.samplers import (SamplerConfig, SamplerError, Scheme, max_stable_gamma,
                             min_stability_ratio, read_trajectory_dump, run_sde,
                             stability_table, write_trajectory_dump)
from catbsi.schedule import PrecisionSchedule, ScheduleError, beta
from catbsi.training import DivergenceError, train, write_loss_curve

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _class_frequencies(graphs):
    node = np.zeros(graphs[0].node_classes)
    edge = np.zeros(graphs[0].edge_classes)
    for g in graphs:
        node += g.node_target().sum(0)
        edge += g.edge_target()[_active_pairs(g)].sum(0)
    return node, edge


def _active_pairs(g):
    I, J = G.pair_index(g.n_max)
    return (I < g.n) & (J < g.n)


def _schedule_meta(prefix, s):
    return {f"{prefix}.beta_start": repr(s.beta_start), f"{prefix}.beta_end": repr(s.beta_end),
            f"{prefix}.beta0": repr(s.beta0)}


def _schedule_from_meta(meta, extra, channel):
    p = f"schedule.{channel}"
    return PrecisionSchedule(float(meta[f"{p}.beta_start"]), float(meta[f"{p}.beta_end"]),
                             float(meta[f"{p}.beta0"]), extra[f"mu0_{channel}"])


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg["training.seed"] = args.seed
    out_dir = args.out or cfg["paths.out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    params = cfg.dataset_params()
    family = params.pop("family")
    dataset, counts = G.dataset_generate(family, params, np.random.default_rng(params["seed"]))
    node_freq, edge_freq = _class_frequencies(dataset)
    sn = cfg.schedule("node", dataset[0].node_classes, node_freq)
    se = cfg.schedule("edge", dataset[0].edge_classes, edge_freq)
    net = ReconNet(dataset[0].node_classes, dataset[0].edge_classes, cfg["model.hidden"],
                   cfg["model.layers"], cfg["model.n_freqs"],
                   (cfg["model.freq_min"], cfg["model.freq_max"]), seed=cfg["model.seed"])
    tcfg = cfg.training()
    try:
        # overflow on the way to a non-finite loss is reported as DivergenceError
        with np.errstate(over="ignore", invalid="ignore"):
            net, losses = train(net, dataset, tcfg, sn, se)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    meta = {"dataset.family": family, **_schedule_meta("schedule.node", sn),
            **_schedule_meta("schedule.edge", se),
            **{k: v for k, v in cfg.items() if k.startswith(("training.", "sampler."))}}
    extra = {"mu0_node": sn.mu0, "mu0_edge": se.mu0, "node_counts": counts.probs}
    save_checkpoint(os.path.join(out_dir, "model.ckpt"), net, meta, extra)
    write_loss_curve(os.path.join(out_dir, "losses.txt"), losses)
    G.write_graphs(os.path.join(out_dir, "train.graphs"), dataset, family=family)
    tail = losses[-min(100, len(losses)):] if len(losses) else np.array([np.nan])
    print(f"final loss {tail.mean():.6f} (mean of last {tail.size} steps)")
    return EXIT_OK


def _sampler_from_args(args, meta):
    scheme = args.scheme or meta.get("sampler.scheme", "ou")
    steps = args.steps if args.steps is not None else int(meta.get("sampler.steps", 100))
    gamma = args.gamma if args.gamma is not None else float(meta.get("sampler.gamma", 5.0))
    rho = args.rho if args.rho is not None else float(meta.get("sampler.rho", 1.0))
    return SamplerConfig(scheme, steps, gamma, rho)


def cmd_sample(args):
    try:
        net, meta, extra = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror}") from None
    config = _sampler_from_args(args, meta)
    sn = _schedule_from_meta(meta, extra, "node")
    se = _schedule_from_meta(meta, extra, "edge")
    if config.scheme is Scheme.EM:
        limit = min(max_stable_gamma(s, 1.0 / config.steps) for s in (sn, se))
        if config.gamma > limit:
            print(f"warning: gamma={config.gamma:g} exceeds the Euler-Maruyama stability limit "
                  f"{limit:.6f} for {config.steps} steps; trajectories may diverge",
                  file=sys.stderr)
    counts = G.NodeCountDistribution(extra["node_counts"])
    if args.count < 0:
        raise UsageError("--count must be nonnegative")
    samples = G.sample_graphs(net, sn, se, config, counts, CounterRNG(args.seed), args.count)
    G.write_graphs(args.out, samples, node_classes=net.node_classes,
                   edge_classes=net.edge_classes, n_max=counts.n_max,
                   family=meta.get("dataset.family", "AllTreesN"))
    print(f"wrote {len(samples)} graphs to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    samples, s_head = G.read_graphs(args.samples)
    train_set, t_head = G.read_graphs(args.train)
    if not samples:
        raise UsageError(f"{args.samples}: no graphs")
    family = args.family or t_head.get("family") or s_head.get("family") or "AllTreesN"
    metrics = G.eval_metrics(samples, train_set, family)
    for k, v in metrics.items():
        print(f"{k}={v:.6f}")
    return EXIT_OK


def cmd_trajectories(args):
    if args.classes < 2 or not 0 <= args.target < args.classes:
        raise UsageError("need --classes >= 2 and 0 <= --target < --classes")
    if not args.gamma or args.runs < 1:
        raise UsageError("need at least one gamma and --runs >= 1")
    sched = PrecisionSchedule(args.beta_start, args.beta_end, args.beta0, np.zeros(args.classes))
    target = np.eye(args.classes)[args.target][None]
    os.makedirs(args.out, exist_ok=True)
    for gamma in args.gamma:
        cfg = SamplerConfig(args.scheme, args.steps, gamma, args.rho)
        rng = CounterRNG(args.seed)
        init = None
        if args.shared_prior:
            # every run starts from the same draw, so gamma = 0 gives identical paths
            init = np.tile(sample_prior(sched, 1, rng).logits, (args.runs, 1, 1))
        _, rec = run_sde(lambda z, t: np.broadcast_to(target, z.shape), sched, cfg, 1, rng,
                         lanes=args.runs, record=True, init=init)
        path = os.path.join(args.out, f"trajectories_{cfg.scheme.value}_gamma{gamma:g}.txt")
        write_trajectory_dump(path, rec, {"scheme": cfg.scheme.value, "gamma": gamma,
                                          "steps": cfg.steps, "runs": args.runs,
                                          "target": args.target, "seed": args.seed,
                                          "shared_prior": int(args.shared_prior)})
        print(f"wrote {path}")
    times = np.asarray(rec.times)
    mean = sched.mu0[None, :] + beta(sched, times)[:, None] * target
    var = sched.beta0 + beta(sched, times)
    side = os.path.join(args.out, "marginal.txt")
    with open(side, "w") as fh:
        fh.write("# analytic marginal of the logits: N(mean, var I)\n")
        fh.write("t," + ",".join(f"mean_{c}" for c in range(args.classes)) + ",var\n")
        for t, m, v in zip(times, mean, var):
            fh.write(f"{t:.17g}," + ",".join(f"{x:.17g}" for x in m) + f",{v:.17g}\n")
    print(f"wrote {side}")
    return EXIT_OK


def cmd_stability(args):
    sched = PrecisionSchedule(args.beta_start, args.beta_end, args.beta0)
    print("steps,dt,max_stable_gamma")
    for k, dt, g in stability_table(sched, args.steps, args.method):
        print(f"{k},{dt:.6f},{g:.6f}")
    print(f"min_ratio_finite_difference={min_stability_ratio(sched, 'finite-difference'):.6f}")
    print(f"min_ratio_analytic={min_stability_ratio(sched, 'analytic'):.6f}")
    return EXIT_OK


def cmd_plot_data(args):
    """Per-time empirical moments of a trajectory dump next to the analytic marginal."""
    header, times, logits = read_trajectory_dump(args.dump)
    sched = PrecisionSchedule(args.beta_start, args.beta_end, args.beta0,
                              np.zeros(logits.shape[-1]))
    target = int(header.get("target", args.target))
    c = logits.shape[-1]
    with open(args.out, "w") as fh:
        fh.write("t," + ",".join(f"emp_mean_{k}" for k in range(c))
                 + ",emp_var,analytic_mean_target,analytic_var\n")
        for t, z in zip(times, logits):
            b = beta(sched, t)
            fh.write(f"{t:.10g}," + ",".join(f"{m:.10g}" for m in z.mean(0))
                     + f",{z.var(0, ddof=1).mean() if len(z) > 1 else 0.0:.10g}"
                     + f",{sched.mu0[target] + b:.10g},{sched.beta0 + b:.10g}\n")
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _gamma_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad gamma list {text!r}") from None


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="catbsi", description="Categorical Bayesian sample inference for graphs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a reconstructor from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (default paths.out_dir)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate graphs from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--scheme", choices=[m.value for m in Scheme])
    s.add_argument("--steps", type=int)
    s.add_argument("--gamma", type=float)
    s.add_argument("--rho", type=float)
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="validity/uniqueness/novelty/degree TV of a graph file")
    e.add_argument("samples")
    e.add_argument("train")
    e.add_argument("--family", choices=[f.value for f in G.Family])
    e.set_defaults(func=cmd_eval)

    for name, func, helptext in (("trajectories", cmd_trajectories,
                                  "frozen-reconstructor trajectory dumps"),
                                 ("stability", cmd_stability,
                                  "Euler-Maruyama maximum stable gamma table"),
                                 ("plot-data", cmd_plot_data,
                                  "moments of a trajectory dump vs the analytic marginal")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--beta-start", type=float, default=3.0)
        c.add_argument("--beta-end", type=float, default=12.0)
        c.add_argument("--beta0", type=float, default=1.0)
        c.set_defaults(func=func)
        if name == "trajectories":
            c.add_argument("--scheme", choices=["em", "ou"], default="ou")
            c.add_argument("--gamma", type=_gamma_list, default=[1.5, 5.0, 20.0])
            c.add_argument("--steps", type=int, default=512)
            c.add_argument("--rho", type=float, default=1.0)
            c.add_argument("--classes", type=int, default=3)
            c.add_argument("--target", type=int, default=1)
            c.add_argument("--runs", type=int, default=100)
            c.add_argument("--seed", type=int, default=0)
            c.add_argument("--shared-prior", action="store_true",
                           help="start every run from one shared prior draw")
            c.add_argument("--out", default=".")
        elif name == "stability":
            c.add_argument("--steps", type=_int_list, default=(25, 50, 100, 200, 500))
            c.add_argument("--method", choices=["finite-difference", "analytic"],
                           default="finite-difference")
        else:
            c.add_argument("dump")
            c.add_argument("--target", type=int, default=1)
            c.add_argument("--out", required=True)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError, SamplerError, ScheduleError, CheckpointError,
            G.GraphFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
