"""Command-line front end: synth / track / eval / render subcommands.

Exit codes: 0 success, 1 usage, 2 bad input or file format, 3 numerical
failure (message carries the frame index).
"""
from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import os
import sys

import numpy as np

from . import bench
from .config import TrackerConfig
from .errors import InputError, NumericalError, TrackingAborted
from .flow import estimate_flow, read_flo_file, write_flo_file
from .mesh_gen import MeshGenParams, generate_reference_mesh, read_off, write_off
from .render import render_sequence
from .silhouette import read_mask, write_mask
from .tracker import (read_trajectories, track_sequence, write_diagnostics,
                      write_trajectories)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshtrack",
        description="Dense long-range point tracking on silhouette sequences")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic ground-truth sequence")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("track", help="track a silhouette sequence")
    p.add_argument("in_dir", help="directory with mask_%%05d.pgm frames")
    p.add_argument("out_dir")
    p.add_argument("--config", help="tracker config JSON")
    p.add_argument("--flows", help="directory with flow_%%05d.flo fields")
    p.add_argument("--theta", type=float, help="stopping threshold override")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="regularization blend override")
    p.add_argument("--vertices", type=int, help="target vertex count override")

    p = sub.add_parser("eval", help="score trajectories against ground truth")
    p.add_argument("trajectories", help="trajectory CSV from 'track'")
    p.add_argument("truth_dir", help="directory containing truth.json")

    p = sub.add_parser("render", help="write trajectory overlay images")
    p.add_argument("trajectories")
    p.add_argument("masks_dir")
    p.add_argument("out_dir")
    p.add_argument("--stride", type=int, default=1)
    return parser


def _sorted_frames(directory: str, pattern: str) -> list[str]:
    return sorted(glob.glob(os.path.join(directory, pattern)))


def _load_masks(directory: str):
    paths = _sorted_frames(directory, "mask_*.pgm") or \
        _sorted_frames(directory, "mask_*.png")
    if len(paths) < 2:
        raise InputError(f"found {len(paths)} masks in {directory}; need >= 2")
    return [read_mask(p) for p in paths], paths


def _load_flows(directory: str, n_pairs: int):
    paths = _sorted_frames(directory, "flow_*.flo")
    if not paths:
        return None
    if len(paths) != n_pairs:
        raise InputError(f"found {len(paths)} flow files in {directory}; "
                         f"need exactly {n_pairs}")
    return [read_flo_file(p) for p in paths]


def _cmd_synth(args) -> int:
    with open(args.scenario) as fh:
        scenario = bench.SynthScenario.from_json(fh.read())
    truth = bench.generate_scenario(scenario, seed=args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    for t, mask in enumerate(truth.masks, start=1):
        write_mask(mask, os.path.join(args.out_dir, f"mask_{t:05d}.pgm"))
    for t, fl in enumerate(truth.flows, start=1):
        write_flo_file(fl, os.path.join(args.out_dir, f"flow_{t:05d}.flo"))
    for t, img in enumerate(truth.textured_frames, start=1):
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
        with open(os.path.join(args.out_dir, f"frame_{t:05d}.pgm"), "wb") as fh:
            fh.write(header + img.tobytes())
    payload = {
        "scenario": scenario.to_dict(),
        "sample_tracks": truth.sample_tracks.tolist(),
        "marker_limbs": truth.marker_limbs.tolist(),
        "occlusion_frames": list(truth.occlusion_frames),
        "overlap_boxes": {str(t): list(box)
                          for t, box in truth.overlap_boxes.items()},
        "limbs": [[[c.a[0], c.a[1], c.b[0], c.b[1], c.width] for c in caps]
                  for caps in truth.limbs_per_frame],
    }
    with open(os.path.join(args.out_dir, "truth.json"), "w") as fh:
        json.dump(payload, fh)
    print(f"wrote {len(truth.masks)} frames to {args.out_dir} "
          f"({len(truth.occlusion_frames)} with limb overlap)")
    return EXIT_OK


def _cmd_track(args) -> int:
    config = TrackerConfig.load(args.config) if args.config else TrackerConfig()
    if args.theta is not None:
        config = dataclasses.replace(
            config, deform=dataclasses.replace(config.deform, theta=args.theta))
    if args.lam is not None:
        config = dataclasses.replace(
            config, deform=dataclasses.replace(config.deform, lam=args.lam))
    if args.vertices is not None:
        config = dataclasses.replace(
            config, mesh=dataclasses.replace(
                config.mesh, target_vertex_count=args.vertices))

    masks, _ = _load_masks(args.in_dir)
    flows = None
    if config.flow_source != "builtin":
        flow_dir = args.flows or args.in_dir
        flows = _load_flows(flow_dir, len(masks) - 1)
        if flows is None and config.flow_source == "external":
            raise InputError(f"no flow_*.flo files in {flow_dir} "
                             "(flow source is 'external')")
    if flows is None:
        frame_paths = _sorted_frames(args.in_dir, "frame_*.pgm")
        if len(frame_paths) == len(masks):
            from .silhouette import _parse_pgm
            imgs = []
            for p in frame_paths:
                with open(p, "rb") as fh:
                    imgs.append(_parse_pgm(fh.read()).astype(float))
            flows = [estimate_flow(imgs[i], imgs[i + 1], levels=config.flow_levels)
                     for i in range(len(imgs) - 1)]
    matrix, diagnostics = track_sequence(masks, flows, config)

    os.makedirs(args.out_dir, exist_ok=True)
    write_trajectories(matrix, os.path.join(args.out_dir, "trajectories.csv"))
    write_diagnostics(diagnostics, os.path.join(args.out_dir, "diagnostics.csv"))
    write_off(matrix.topology, _ref_state(matrix),
              os.path.join(args.out_dir, "reference_mesh.off"))
    with open(os.path.join(args.out_dir, "config_used.json"), "w") as fh:
        fh.write(config.to_json())
    occluded_frames = sum(1 for d in diagnostics if d.occluded_vertex_count)
    print(f"tracked {matrix.n_points} points over {matrix.n_frames} frames "
          f"({occluded_frames} frames with self-occlusion) -> {args.out_dir}")
    return EXIT_OK


def _ref_state(matrix):
    from .geometry import MeshState
    return MeshState(matrix.topology, matrix.frame(1))


def _cmd_eval(args) -> int:
    matrix = read_trajectories(args.trajectories)
    truth_path = os.path.join(args.truth_dir, "truth.json")
    if not os.path.exists(truth_path):
        raise InputError(f"no truth.json in {args.truth_dir}")
    with open(truth_path) as fh:
        truth = json.load(fh)
    tracks = np.asarray(truth["sample_tracks"], dtype=float)
    if tracks.shape[1] != matrix.n_frames:
        raise InputError(f"truth has {tracks.shape[1]} frames, trajectories "
                         f"have {matrix.n_frames}")
    pct = bench.tracking_length_percentage(
        [matrix.n_frames] * matrix.n_points, matrix.n_frames)
    print(f"tracking_length_pct,{pct:.6f}")
    idx = bench.match_markers(matrix.frame(1), tracks[:, 0])
    est = matrix.positions[idx]
    stds = bench.offset_std(est, tracks)
    print("frame,offset_std")
    for t, s in enumerate(stds, start=1):
        print(f"{t},{s:.6f}")
    return EXIT_OK


def _cmd_render(args) -> int:
    matrix = read_trajectories(args.trajectories)
    masks, _ = _load_masks(args.masks_dir)
    if len(masks) != matrix.n_frames:
        raise InputError(f"{len(masks)} masks but {matrix.n_frames} trajectory "
                         "frames")
    off_path = os.path.join(os.path.dirname(os.path.abspath(args.trajectories)),
                            "reference_mesh.off")
    if os.path.exists(off_path):
        topo, _ = read_off(off_path)
        if topo.vertex_count == matrix.n_points:
            matrix.topology = topo
    limbs = None
    truth_path = os.path.join(args.masks_dir, "truth.json")
    if os.path.exists(truth_path):
        with open(truth_path) as fh:
            truth = json.load(fh)
        limbs = [((c[0], c[1]), (c[2], c[3]), c[4]) for c in truth["limbs"][0]]
    paths = render_sequence(matrix, masks, args.out_dir, stride=args.stride,
                            limbs_frame1=limbs)
    print(f"wrote {len(paths)} overlays to {args.out_dir}")
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "track": _cmd_track,
    "eval": _cmd_eval,
    "render": _cmd_render,
}


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except TrackingAborted as exc:
        print(f"error: tracking aborted at {exc}", file=sys.stderr)
        if isinstance(exc.__cause__, InputError):
            return EXIT_INPUT
        return EXIT_NUMERICAL
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
