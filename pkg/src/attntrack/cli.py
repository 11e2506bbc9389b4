"""Command-line interface.

Subcommands:
  gradcheck     finite-difference verification of all differentiable ops
  synth         render a seeded synthetic sequence to a directory
  train-toy     fit the model to one sequence and write a checkpoint
  track         run the tracker over a sequence directory
  eval          score a results file against ground truth
  dump-attn     export an attention weight map as CSV / PGM
  dump-heatmap  export the classification maps for one frame
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .pipeline import (SequenceSpec, Tracker, TrackerConfig, TrainSettings,
                       build_model, evaluate, generate_synthetic_sequence,
                       load_model, load_sequence, read_rect_file, save_model,
                       save_sequence, train_toy, write_csv, write_pgm,
                       write_rect_file)
from .transformer import AttentionTrace


def _onoff(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on|off, got {value!r}")
    return value == "on"


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--template-size", type=int, default=64)
    p.add_argument("--search-size", type=int, default=128)
    p.add_argument("--d", type=int, default=32, help="transformer width")
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--enc-layers", type=int, default=1)
    p.add_argument("--dec-layers", type=int, default=1)
    p.add_argument("--pe-mask", type=_onoff, default=True,
                   help="zero positional codes over padded area (on|off)")
    p.add_argument("--c-mid", type=int, default=32)


def _add_seq_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--image-size", type=int, default=112)
    p.add_argument("--distractor", action="store_true")
    p.add_argument("--drift", type=float, default=0.0,
                   help="total brightness drop by the final frame")


def _make_spec(args) -> SequenceSpec:
    size = args.image_size
    return SequenceSpec(image_size=(size, size),
                        start_box=(size / 2.0, size / 2.0, size * 0.22, size * 0.18),
                        distractor=args.distractor,
                        brightness_drift=args.drift)


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck
    results = run_gradcheck(seed=args.seed)
    ok = True
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{r.name:<14s} worst rel err {r.worst_rel_error:.3e}  "
              f"failures {r.failures:3d}  [{status}]")
        ok = ok and r.ok
    return 0 if ok else 1


def _cmd_synth(args) -> int:
    frames, boxes = generate_synthetic_sequence(args.seed, args.frames,
                                                _make_spec(args))
    save_sequence(args.out, frames, boxes)
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def _cmd_train_toy(args) -> int:
    if args.seq:
        frames, boxes = load_sequence(args.seq)
    else:
        frames, boxes = generate_synthetic_sequence(args.seed, args.frames,
                                                    _make_spec(args))
    config = TrackerConfig(template_size=args.template_size,
                           search_size=args.search_size,
                           d=args.d, n_heads=args.heads,
                           n_encoder_layers=args.enc_layers,
                           n_decoder_layers=args.dec_layers,
                           pe_mask=args.pe_mask, c_mid=args.c_mid)
    model = build_model(np.random.default_rng(args.seed), config)
    settings = TrainSettings(steps=args.steps, lr=args.lr, seed=args.seed)
    history = train_toy(model, config, frames, boxes, settings,
                        log=lambda msg: print(msg))
    save_model(args.out, model, config)
    print(f"final loss {history[-1]:.4f} (start {history[0]:.4f}); "
          f"checkpoint -> {args.out}")
    if args.loss_log:
        with open(args.loss_log, "w") as fh:
            for v in history:
                fh.write(f"{v!r}\n")
    return 0


def _apply_overrides(config: TrackerConfig, args) -> TrackerConfig:
    overrides = {}
    if args.search_size is not None:
        overrides["search_size"] = args.search_size
    if args.online is not None:
        overrides["online"] = args.online
    if args.pe_mask is not None:
        overrides["pe_mask"] = args.pe_mask
    return dataclasses.replace(config, **overrides) if overrides else config


def _cmd_track(args) -> int:
    model, config = load_model(args.ckpt)
    config = _apply_overrides(config, args)
    frames, boxes = load_sequence(args.seq)
    if not boxes:
        print("sequence has no ground truth; cannot initialize", file=sys.stderr)
        return 1
    tracker = Tracker(model, config)
    tracker.init(frames[0], boxes[0])
    results = [boxes[0]]
    for frame in frames[1:]:
        box, _ = tracker.track(frame)
        results.append(box)
    write_rect_file(args.out, results)
    print(f"wrote {len(results)} boxes to {args.out}")
    if args.metrics:
        metrics = evaluate(results, boxes[:len(results)])
        with open(args.metrics, "w") as fh:
            json.dump(metrics.to_dict(), fh, indent=2)
        print(f"mean IoU {metrics.mean_iou:.4f}  AUC {metrics.auc:.4f}")
    return 0


def _cmd_eval(args) -> int:
    pred = read_rect_file(args.pred)
    truth = read_rect_file(args.truth)
    metrics = evaluate(pred, truth)
    payload = json.dumps(metrics.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(payload + "\n")
    print(payload)
    return 0


def _run_to_frame(args):
    """Shared tail for the dump commands: track up to --frame with a trace."""
    model, config = load_model(args.ckpt)
    config = _apply_overrides(config, args)
    frames, boxes = load_sequence(args.seq)
    if not boxes:
        raise SystemExit("sequence has no ground truth; cannot initialize")
    target = max(1, min(args.frame, len(frames) - 1))
    tracker = Tracker(model, config)
    init_trace = AttentionTrace()
    tracker.init(frames[0], boxes[0], trace=init_trace)
    trace = AttentionTrace()
    diag = None
    for i in range(1, target + 1):
        trace = AttentionTrace()
        _, diag = tracker.track(frames[i], trace=trace)
    # encoder attention happens once, at init
    trace.maps.update(init_trace.maps)
    return trace, diag


def _cmd_dump_attn(args) -> int:
    trace, _ = _run_to_frame(args)
    if args.site not in trace.maps:
        print(f"unknown attention site {args.site!r}; available: "
              f"{sorted(trace.maps)}", file=sys.stderr)
        return 1
    heads = trace.maps[args.site]
    if not 0 <= args.head < len(heads):
        print(f"head index out of range (0..{len(heads) - 1})", file=sys.stderr)
        return 1
    weights = heads[args.head]
    write_csv(args.out_prefix + ".csv", weights)
    write_pgm(args.out_prefix + ".pgm", weights, normalize="row")
    print(f"wrote {args.out_prefix}.csv and .pgm "
          f"({weights.shape[0]}x{weights.shape[1]})")
    return 0


def _cmd_dump_heatmap(args) -> int:
    _, diag = _run_to_frame(args)
    outputs = [("raw", diag.score_map), ("windowed", diag.windowed_map)]
    if diag.blended_map is not None:
        outputs.append(("blended", diag.blended_map))
    if diag.online_map is not None:
        outputs.append(("online", diag.online_map))
    for tag, values in outputs:
        write_csv(f"{args.out_prefix}_{tag}.csv", values)
        write_pgm(f"{args.out_prefix}_{tag}.pgm", values, normalize="global")
    print(f"wrote {len(outputs)} map(s) with prefix {args.out_prefix}_")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attntrack",
                                     description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic sequence")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_seq_args(p)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train-toy", help="train on a toy sequence")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seq", help="sequence dir (default: generate synthetic)")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss-log", help="write per-step losses to this file")
    _add_model_args(p)
    _add_seq_args(p)
    p.set_defaults(fn=_cmd_train_toy)

    p = sub.add_parser("track", help="track a sequence")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--out", required=True, help="results rectangle file")
    p.add_argument("--metrics", help="write metrics JSON here")
    p.add_argument("--online", type=_onoff, default=None)
    p.add_argument("--search-size", type=int, default=None)
    p.add_argument("--pe-mask", type=_onoff, default=None)
    p.set_defaults(fn=_cmd_track)

    p = sub.add_parser("eval", help="score results against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_eval)

    for name, fn in (("dump-attn", _cmd_dump_attn),
                     ("dump-heatmap", _cmd_dump_heatmap)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} for one frame")
        p.add_argument("--ckpt", required=True)
        p.add_argument("--seq", required=True)
        p.add_argument("--frame", type=int, default=1)
        p.add_argument("--out-prefix", required=True)
        p.add_argument("--online", type=_onoff, default=None)
        p.add_argument("--search-size", type=int, default=None)
        p.add_argument("--pe-mask", type=_onoff, default=None)
        if name == "dump-attn":
            p.add_argument("--site", default="decoder0.cross",
                           help="encoder0.self | decoder0.self | decoder0.cross ...")
            p.add_argument("--head", type=int, default=0)
        p.set_defaults(fn=fn)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
