"""Command line interface.

Stages mirror the library workflow: simulate a scene, extract per-sensor
sub-trajectories, train the appearance embedding, then link either in one
batch (match) or window by window (stream). Exit codes: 0 success, 1 usage
error, 2 broken or missing input data.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np
import yaml

from .config import PipelineConfig, load_config
from .embedding import aggregate_embedding, aggregate_height, load_model, save_model
from .evaluation import evaluate, label_subtrajectories, truth_pairs
from .experiments import (
    EXPERIMENTS,
    PipelineOutput,
    exterior_ids,
    extract_from_frames,
    learn_models,
    run_experiment,
    train_p1_model,
    uniform_models,
)
from .geometry import Frame
from .io import (
    read_frames,
    read_match_results,
    read_subtrajectories,
    read_truth,
    load_state,
    save_state,
    write_frames,
    write_match_results,
    write_subtrajectories,
    write_truth,
)
from .matching import ModelBundle, OnlineMatcher, build_graph, solve_matching
from .simulator import (
    calibration_scenario,
    corridor_map,
    corridor_traffic,
    scenario_1a,
    simulate_stream,
    square_route_map,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

_MAPS = {"square": square_route_map, "corridor": corridor_map}


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad arguments; this project reserves 2 for
    data errors, so usage problems exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _build_parser() -> _Parser:
    p = _Parser(prog="trajlink", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="YAML config overriding pipeline defaults")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--p1", choices=("fv", "height"), default=None,
                   help="appearance similarity: embedding (fv) or height fallback")
    p.add_argument("--update", choices=("on", "off"), default="off",
                   help="learn transition/travel-time models from the processed data")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    sp = sub.add_parser("simulate", help="render a scenario to frame/truth files")
    sp.add_argument("--map", choices=sorted(_MAPS), required=True)
    sp.add_argument("--subjects", type=int, default=4, help="square map: walkers on the loop")
    sp.add_argument("--interval", type=float, default=10.0, help="square map: start stagger, s")
    sp.add_argument("--pedestrians", type=int, default=26, help="corridor: transits in the session")
    sp.add_argument("--gap", type=float, default=9.0, help="corridor: start stagger, s")
    sp.add_argument("--frames", required=True, help="output JSONL of sensor frames")
    sp.add_argument("--calib", help="output JSONL of empty-scene calibration frames")
    sp.add_argument("--truth", help="output JSONL of true per-person tracks")

    ep = sub.add_parser("extract", help="sub-trajectories from recorded frames")
    ep.add_argument("--map", choices=sorted(_MAPS), required=True)
    ep.add_argument("--frames", required=True)
    ep.add_argument("--calib", required=True, help="empty-scene frames for the background model")
    ep.add_argument("--model", help="embedding model; omitted = height descriptors")
    ep.add_argument("--out", required=True, help="output JSONL of sub-trajectories")

    tp = sub.add_parser("train", help="train the appearance embedding")
    tp.add_argument("--map", choices=sorted(_MAPS), required=True)
    tp.add_argument("--frames", required=True)
    tp.add_argument("--calib", required=True)
    tp.add_argument("--truth", required=True)
    tp.add_argument("--model-out", required=True)

    mp = sub.add_parser("match", help="link sub-trajectories in one batch")
    mp.add_argument("--subs", required=True)
    mp.add_argument("--map", choices=sorted(_MAPS), help="gate set when no state file is given")
    mp.add_argument("--state", help="warm-start transition/travel-time state (YAML)")
    mp.add_argument("--state-out", help="where to write updated state (with --update on)")
    mp.add_argument("--out", required=True, help="output JSONL of match results")

    vp = sub.add_parser("eval", help="score match results against ground truth")
    vp.add_argument("--matches", required=True)
    vp.add_argument("--subs", required=True)
    vp.add_argument("--truth", required=True)
    vp.add_argument("--max-dist", type=float, default=0.75,
                    help="max mean distance when labeling sub-trajectories")
    vp.add_argument("--label", default="eval")

    xp = sub.add_parser("experiment", help="run a named built-in experiment")
    xp.add_argument("--name", choices=sorted(EXPERIMENTS), required=True)
    xp.add_argument("--outdir", help="directory for plot data files")

    wp = sub.add_parser("stream", help="link sub-trajectories window by window")
    wp.add_argument("--subs", required=True)
    wp.add_argument("--map", choices=sorted(_MAPS), help="gate set when no state file is given")
    wp.add_argument("--state", help="warm-start transition/travel-time state (YAML)")
    wp.add_argument("--state-out", help="where to write updated state (with --update on)")
    wp.add_argument("--out", required=True, help="output JSONL, one record per window")
    return p


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.training.seed = args.seed
    if args.p1 is not None:
        cfg.matcher.p1_mode = args.p1
    return cfg


def _scenario(args, cfg):
    if args.map == "square":
        return scenario_1a(args.subjects, interval=args.interval, seed=cfg.seed)
    return corridor_traffic(args.pedestrians, mean_gap=args.gap, seed=cfg.seed)


def _cmd_simulate(args, cfg) -> int:
    map_spec = _MAPS[args.map]()
    scenario = _scenario(args, cfg)
    positions: dict = {}
    n = 0
    with open(args.frames, "w") as fh:
        for t, clouds, truth in simulate_stream(map_spec, scenario):
            for pid, (x, y) in truth.items():
                positions.setdefault(pid, []).append((t, x, y))
            for sid in sorted(clouds):
                rec = {"sensor_id": sid, "t": t, "points": np.round(clouds[sid], 6).tolist()}
                fh.write(json.dumps(rec) + "\n")
                n += 1
    if args.calib:
        calib = calibration_scenario(scenario, cfg.segmentation.bg_frames)
        frames = [
            Frame(sensor_id=sid, t=t, points=pts)
            for t, clouds, _ in simulate_stream(map_spec, calib)
            for sid, pts in sorted(clouds.items())
        ]
        write_frames(args.calib, frames)
    if args.truth:
        write_truth(args.truth, {p: np.asarray(v) for p, v in positions.items()})
    print(f"wrote {n} frames over {scenario.duration:g} s to {args.frames}")
    return EXIT_OK


def _cmd_extract(args, cfg) -> int:
    map_spec = _MAPS[args.map]()
    frames = read_frames(args.frames)
    calib = read_frames(args.calib)
    trs = extract_from_frames(map_spec, frames, calib, cfg)
    if args.model:
        net, grid = load_model(args.model)
        desc = {
            tr.id: aggregate_embedding(list(tr.segments), grid, net, cfg.matcher.stride)
            for tr in trs
        }
    else:
        desc = {tr.id: aggregate_height(list(tr.segments), cfg.matcher.stride) for tr in trs}
    write_subtrajectories(args.out, trs, desc)
    print(f"extracted {len(trs)} sub-trajectories to {args.out}")
    return EXIT_OK


def _cmd_train(args, cfg) -> int:
    map_spec = _MAPS[args.map]()
    frames = read_frames(args.frames)
    calib = read_frames(args.calib)
    positions = read_truth(args.truth)
    trs = extract_from_frames(map_spec, frames, calib, cfg)
    labels = label_subtrajectories(trs, positions)
    out = PipelineOutput(
        map_spec=map_spec,
        scenario=None,
        trs=trs,
        labels=labels,
        truth=truth_pairs(trs, labels),
        positions=positions,
    )
    net, grid, auc = train_p1_model([out], cfg)
    save_model(args.model_out, net, grid)
    n_labeled = sum(1 for v in labels.values() if v is not None)
    print(f"trained on {n_labeled} labeled sub-trajectories; held-out pair AUC {auc:.3f}")
    print(f"wrote model to {args.model_out}")
    return EXIT_OK


def _bundle_from_files(args, cfg):
    """Models plus descriptor cache for file-driven matching."""
    trs, desc = read_subtrajectories(args.subs)
    if args.state:
        q, tt = load_state(args.state)
        ext = frozenset()
    elif args.map:
        map_spec = _MAPS[args.map]()
        q, tt = uniform_models(map_spec, cfg)
        ext = exterior_ids(map_spec)
    else:
        raise ValueError("need --state or --map to know the gate set")

    missing = [tr.id for tr in trs if tr.id not in desc]
    if not desc:
        use_p1, mode = False, "height"
    elif missing:
        raise ValueError(f"descriptors missing for {len(missing)} sub-trajectories, e.g. {missing[0]!r}")
    else:
        scalar = {bool(np.ndim(d) == 0) for d in desc.values()}
        if len(scalar) != 1:
            raise ValueError("descriptor file mixes heights and embeddings")
        use_p1, mode = True, ("height" if scalar.pop() else "fv")
    bundle = ModelBundle(
        q=q,
        tt=tt,
        p1_mode=mode,
        sigma_h=cfg.matcher.sigma_h,
        stride=cfg.matcher.stride,
        use_p1=use_p1,
        exterior_gates=ext,
    )
    return trs, desc, bundle, (q, tt)


def _maybe_update(args, cfg, trs, q, tt, bundle) -> None:
    if args.update != "on":
        return
    out_path = args.state_out or args.state
    if not out_path:
        raise ValueError("--update on needs --state-out (or --state to overwrite)")
    q2, tt2, samples = learn_models(trs, q, tt, cfg, exterior=bundle.exterior_gates)
    save_state(out_path, q2, tt2)
    print(f"{len(samples)} high-confidence transits folded into {out_path}")


def _cmd_match(args, cfg) -> int:
    trs, desc, bundle, (q, tt) = _bundle_from_files(args, cfg)
    graph = build_graph(trs, bundle, cfg.matcher.tau_nomatch, descriptor_cache=dict(desc))
    res = solve_matching(graph)
    write_match_results(args.out, [res])
    print(f"{len(res.pairs)} links, {len(res.terminals)} terminals -> {args.out}")
    _maybe_update(args, cfg, trs, q, tt, bundle)
    return EXIT_OK


def _cmd_stream(args, cfg) -> int:
    trs, desc, bundle, (q, tt) = _bundle_from_files(args, cfg)
    om = OnlineMatcher(
        bundle=bundle,
        tau=cfg.matcher.tau_nomatch,
        count_trigger=cfg.matcher.count_trigger,
        expiry=cfg.matcher.window_expiry,
        _cache=dict(desc),
    )
    results = []
    for tr in sorted(trs, key=lambda tr: (tr.t_end, tr.id)):
        r = om.push(tr)
        if r is not None:
            results.append(r)
            print(f"window {len(results) - 1}: {len(r.pairs)} links at t={tr.t_end:.1f}")
    r = om.flush()
    if r is not None:
        results.append(r)
        print(f"window {len(results) - 1} (flush): {len(r.pairs)} links")
    write_match_results(args.out, results)
    total = sum(len(r.pairs) for r in results)
    print(f"{total} links over {len(results)} windows -> {args.out}")
    _maybe_update(args, cfg, trs, q, tt, bundle)
    return EXIT_OK


def _cmd_eval(args, cfg) -> int:
    trs, _ = read_subtrajectories(args.subs)
    positions = read_truth(args.truth)
    labels = label_subtrajectories(trs, positions, max_dist=args.max_dist)
    truth = truth_pairs(trs, labels)
    results = read_match_results(args.matches)
    rep = evaluate(results, truth, known_ids={tr.id for tr in trs}, label=args.label)
    print(rep)
    return EXIT_OK


def _cmd_experiment(args, cfg) -> int:
    result = run_experiment(args.name, cfg, outdir=args.outdir)
    for rep in result["reports"]:
        print(rep)
    if "auc" in result and not np.isnan(result["auc"]):
        print(f"held-out embedding pair AUC: {result['auc']:.3f}")
    if "n_samples" in result:
        print(f"high-confidence transits: {result['n_samples']}")
    for path in result.get("files", ()):
        print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "match": _cmd_match,
    "eval": _cmd_eval,
    "experiment": _cmd_experiment,
    "stream": _cmd_stream,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("trajlink: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _load_cfg(args)
        return _COMMANDS[args.command](args, cfg)
    except (OSError, ValueError, KeyError, json.JSONDecodeError, yaml.YAMLError) as exc:
        print(f"trajlink: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
