"""Command line interface.

Subcommands: synth, degrade, train, extract, score, eval, ablate, fbank.
Exit codes: 0 success, 1 usage error, 2 data/processing error.

Global knobs: --seed, --threads (pins OMP/BLAS thread counts; applied
before numpy is first imported, which is why heavy imports live inside
the handlers), --config FILE (flat key=value lines; dotted keys address
one subcommand, e.g. "train.lr=0.01"; command line flags win; unknown
keys are rejected).  DEEPVOX_LOG=error|info|debug controls logging.
"""

import argparse
import logging
import os
import sys

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
GLOBAL_CONFIG_KEYS = ("seed", "threads")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this toolkit reserves 2 for data
    errors, so usage problems exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _apply_threads_env(argv):
    threads = None
    for i, tok in enumerate(argv):
        if tok == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif tok.startswith("--threads="):
            threads = tok.split("=", 1)[1]
    if threads is None:
        return
    try:
        n = int(threads)
    except ValueError:
        return  # argparse will complain properly later
    if n < 1:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _configure_logging():
    level = os.environ.get("DEEPVOX_LOG", "error").strip().lower()
    if level not in LOG_LEVELS:
        print(f"warning: DEEPVOX_LOG={level!r} not one of {sorted(LOG_LEVELS)}, using error",
              file=sys.stderr)
        level = "error"
    logging.basicConfig(level=LOG_LEVELS[level],
                        format="%(levelname)s %(name)s: %(message)s")


def _build_parser():
    parser = _Parser(prog="deepvox", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value config file (flags override it)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    commands = {}

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=0,
                       help="cap math library threads (0 = leave alone)")

    p = sub.add_parser("synth", help="write a synthetic speaker corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=20)
    p.add_argument("--utts", type=int, default=10)
    p.add_argument("--duration", type=float, default=2.5, help="seconds per utterance")
    p.add_argument("--min-f0-gap", type=float, default=5.0)
    p.set_defaults(func=cmd_synth)
    commands["synth"] = p

    p = sub.add_parser("degrade", help="remix a corpus with additive noise at a target SNR")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise", required=True, choices=["white", "harmonic_babble"])
    p.add_argument("--snr-db", type=float, required=True)
    p.set_defaults(func=cmd_degrade)
    commands["degrade"] = p

    p = sub.add_parser("train", help="pretrain (identification) then train (verification)")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, default=1.0, help="epoch budget scale factor")
    p.add_argument("--pretrain-epochs", type=int, default=50)
    p.add_argument("--verify-epochs", type=int, default=800)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=["adam", "sgd_momentum"], default="adam")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batches-per-epoch", type=int, default=0, help="0 = auto")
    p.add_argument("--subjects-per-batch", type=int, default=25)
    p.add_argument("--samples-per-subject", type=int, default=6)
    p.add_argument("--tau-start", type=float, default=0.4)
    p.add_argument("--tau-end", type=float, default=1.0)
    p.add_argument("--ramp-epochs", type=int, default=800)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--no-hinge", action="store_true", help="use the raw (unhinged) triplet term")
    p.add_argument("--reduction", choices=["mean", "sum"], default="mean")
    p.add_argument("--dropout", type=float, default=0.05)
    p.add_argument("--vad-floor-db", type=float, default=-30.0)
    p.add_argument("--min-segment-ms", type=float, default=100.0)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)
    commands["train"] = p

    p = sub.add_parser("extract", help="write filterbank features per frame (DVFR)")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vad-floor-db", type=float, default=-30.0)
    p.add_argument("--min-segment-ms", type=float, default=100.0)
    p.set_defaults(func=cmd_extract)
    commands["extract"] = p

    p = sub.add_parser("score", help="score a trial list with a trained model")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out", required=True, help="scored trials CSV")
    p.add_argument("--vad-floor-db", type=float, default=-30.0)
    p.add_argument("--min-segment-ms", type=float, default=100.0)
    p.set_defaults(func=cmd_score)
    commands["score"] = p

    p = sub.add_parser("eval", help="metrics from a scored trial list")
    common(p)
    p.add_argument("--scored", required=True)
    p.add_argument("--out", help="write the key=value report here too")
    p.add_argument("--det", help="write DET curve CSV here")
    p.set_defaults(func=cmd_eval)
    commands["eval"] = p

    p = sub.add_parser("ablate", help="relevance analysis for one utterance")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--utt", help="utterance id (default: first in manifest)")
    p.add_argument("--out", required=True)
    p.add_argument("--vad-floor-db", type=float, default=-30.0)
    p.add_argument("--min-segment-ms", type=float, default=100.0)
    p.set_defaults(func=cmd_ablate)
    commands["ablate"] = p

    p = sub.add_parser("fbank", help="dump learned filterbank responses (plot-ready CSV)")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fbank)
    commands["fbank"] = p

    return parser, commands


def _parse_config_file(path):
    pairs = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for ln, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{ln}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                pairs.append((key.strip(), value.strip()))
    except OSError as err:
        raise ValueError(f"cannot read config file: {err}") from err
    return pairs


def _bool_from_str(value):
    low = value.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def _apply_config(parser, commands, argv):
    cfg_path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            cfg_path = argv[i + 1]
        elif tok.startswith("--config="):
            cfg_path = tok.split("=", 1)[1]
    if cfg_path is None:
        return
    command = next((tok for tok in argv if tok in commands), None)
    try:
        pairs = _parse_config_file(cfg_path)
    except ValueError as err:
        parser.error(str(err))
    for key, value in pairs:
        if "." in key:
            cmd, _, dest = key.partition(".")
            if cmd not in commands:
                parser.error(f"config key {key!r}: unknown command {cmd!r}")
            if cmd != command:
                continue  # settings for other subcommands are fine to carry around
            target = commands[cmd]
        else:
            if key not in GLOBAL_CONFIG_KEYS:
                parser.error(f"unknown config key {key!r}")
            if command is None:
                continue
            dest, target = key, commands[command]
        action = next((a for a in target._actions if a.dest == dest.replace("-", "_")), None)
        if action is None or action.dest == "help":
            parser.error(f"config key {key!r} does not match any {command} option")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            converted = _bool_from_str(value)
        elif action.choices is not None and value not in action.choices:
            parser.error(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
            converted = value
        elif action.type is not None:
            try:
                converted = action.type(value)
            except (TypeError, ValueError):
                parser.error(f"config key {key!r}: cannot convert {value!r}")
        else:
            converted = value
        target.set_defaults(**{action.dest: converted})


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_threads_env(argv)
    _configure_logging()
    parser, commands = _build_parser()
    _apply_config(parser, commands, argv)
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except BrokenPipeError:
        return 0
    except (ValueError, OSError) as err:
        print(f"deepvox {args.command}: error: {err}", file=sys.stderr)
        return 2


# ---- handlers (heavy imports stay inside so --threads can pin BLAS first) ----

def cmd_synth(args):
    from .synth import write_corpus

    manifest = write_corpus(args.out, args.speakers, args.utts, args.duration,
                            master_seed=args.seed, min_f0_gap_hz=args.min_f0_gap)
    print(manifest)
    return 0


def cmd_degrade(args):
    from .audio import DegradationSpec, mix_noise, read_wav, write_wav
    from .io import read_manifest, write_manifest
    from .rand import stream_seed

    entries = read_manifest(args.manifest)
    root = os.path.dirname(os.path.abspath(args.manifest))
    spec = DegradationSpec(noise_kind=args.noise, snr_db=args.snr_db)
    os.makedirs(args.out, exist_ok=True)
    out_entries = []
    for rel, speaker, dur in entries:
        buf = read_wav(os.path.join(root, rel))
        mixed = mix_noise(buf, spec, seed=stream_seed(args.seed, "degrade", rel))
        dst = os.path.join(args.out, rel)
        os.makedirs(os.path.dirname(dst) or ".", exist_ok=True)
        write_wav(dst, mixed)
        out_entries.append((rel, speaker, dur))
    manifest = os.path.join(args.out, "manifest.csv")
    write_manifest(manifest, out_entries)
    print(manifest)
    return 0


def _train_configs(args):
    from .loss import TripletLossConfig
    from .mining import MiningConfig
    from .training import TrainConfig

    train_cfg = TrainConfig(
        pretrain_epochs=args.pretrain_epochs,
        verify_epochs=args.verify_epochs,
        scale_factor=args.scale,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        momentum=args.momentum,
        seed=args.seed,
        batches_per_epoch=args.batches_per_epoch,
    )
    mining_cfg = MiningConfig(
        subjects_per_batch=args.subjects_per_batch,
        samples_per_subject=args.samples_per_subject,
        tau_start=args.tau_start,
        tau_end=args.tau_end,
        ramp_epochs=args.ramp_epochs,
    )
    loss_cfg = TripletLossConfig(
        margin_alpha=args.margin,
        hinge=not args.no_hinge,
        reduction=args.reduction,
    )
    return train_cfg, mining_cfg, loss_cfg


def cmd_train(args):
    from .embedder import EmbedConfig
    from .filterbank import FilterbankConfig
    from .training import TrainingRun, load_corpus_frames

    frames, subjects, _ = load_corpus_frames(args.manifest,
                                             energy_floor_db=args.vad_floor_db,
                                             min_segment_ms=args.min_segment_ms)
    train_cfg, mining_cfg, loss_cfg = _train_configs(args)
    emb_cfg = EmbedConfig(dropout_p=args.dropout)
    run = TrainingRun(frames, subjects, train_cfg=train_cfg,
                      fb_cfg=FilterbankConfig(), emb_cfg=emb_cfg,
                      mining_cfg=mining_cfg, loss_cfg=loss_cfg, out_dir=args.out)
    lines = run.run(resume=args.resume)
    log_path = os.path.join(args.out, "training.log")
    mode = "a" if args.resume else "w"
    with open(log_path, mode, encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    for line in lines:
        print(line)
    return 0


def _load_model(checkpoint):
    from .embedder import init_embedder_params
    from .filterbank import init_filterbank_params
    from .training import checkpoint_params_into, load_checkpoint

    state = load_checkpoint(checkpoint)
    if state["fb_cfg"] is None or state["emb_cfg"] is None:
        raise ValueError(f"checkpoint {checkpoint} lacks embedded network configs")
    params = {}
    params.update(init_filterbank_params(state["fb_cfg"], seed=0))
    params.update(init_embedder_params(state["emb_cfg"], seed=0))
    checkpoint_params_into(params, state["params"])
    return params, state["fb_cfg"], state["emb_cfg"]


def cmd_extract(args):
    from .filterbank import extract_features
    from .audio import frames_from_buffer, read_wav
    from .io import read_manifest, utt_id, write_frames

    params, fb_cfg, _ = _load_model(args.checkpoint)
    entries = read_manifest(args.manifest)
    root = os.path.dirname(os.path.abspath(args.manifest))
    os.makedirs(args.out, exist_ok=True)
    count = 0
    for rel, speaker, _dur in entries:
        buf = read_wav(os.path.join(root, rel))
        uid = utt_id(rel)
        for frame in frames_from_buffer(buf, source_id=speaker, utt_id=uid,
                                        energy_floor_db=args.vad_floor_db,
                                        min_segment_ms=args.min_segment_ms):
            feat = extract_features(frame, params, fb_cfg)
            name = frame.clip_id.replace("/", "_").replace("#", "_") + ".dvfr"
            write_frames(os.path.join(args.out, name), feat.values,
                         meta={"subject": speaker, "clip": frame.clip_id})
            count += 1
    print(f"wrote {count} feature files to {args.out}")
    return 0


def _corpus_embeddings(manifest, checkpoint, vad_floor_db, min_segment_ms):
    from .metrics import utterance_embeddings
    from .training import load_corpus_frames

    params, fb_cfg, emb_cfg = _load_model(checkpoint)
    frames, _, utts = load_corpus_frames(manifest, energy_floor_db=vad_floor_db,
                                         min_segment_ms=min_segment_ms)
    return utterance_embeddings(frames, utts, params, fb_cfg, emb_cfg)


def cmd_score(args):
    from .io import read_trials, write_trials
    from .metrics import Trial, score_trials

    by_utt = _corpus_embeddings(args.manifest, args.checkpoint,
                                args.vad_floor_db, args.min_segment_ms)
    trials = [Trial(e, p, label, score) for e, p, label, score in read_trials(args.trials)]
    scored = score_trials(trials, by_utt)
    write_trials(args.out, [(t.enroll_id, t.probe_id, t.label, t.score) for t in scored])
    print(f"scored {len(scored)} trials -> {args.out}")
    return 0


def cmd_eval(args):
    from .io import read_trials
    from .metrics import Trial, evaluate, write_det_csv, write_report

    rows = read_trials(args.scored)
    trials = [Trial(e, p, label, score) for e, p, label, score in rows]
    report = evaluate(trials)
    for line in report.lines():
        print(line)
    if args.out:
        write_report(args.out, report)
    if args.det:
        write_det_csv(args.det, report.det)
    return 0


def cmd_ablate(args):
    import numpy as np

    from .ablate import (UnvoicedError, estimate_f0, flatten_relevance,
                         mean_relevance, psd_overlap)
    from .audio import frames_from_buffer, read_wav
    from .io import read_manifest, utt_id, write_frames

    params, fb_cfg, _ = _load_model(args.checkpoint)
    entries = read_manifest(args.manifest)
    root = os.path.dirname(os.path.abspath(args.manifest))
    if args.utt:
        matches = [e for e in entries if utt_id(e[0]) == args.utt]
        if not matches:
            raise ValueError(f"utterance {args.utt!r} not in manifest")
        rel, speaker, _ = matches[0]
    else:
        rel, speaker, _ = entries[0]
    buf = read_wav(os.path.join(root, rel))
    frames = frames_from_buffer(buf, source_id=speaker, utt_id=utt_id(rel),
                                energy_floor_db=args.vad_floor_db,
                                min_segment_ms=args.min_segment_ms)
    if not frames:
        raise ValueError(f"no voiced frames in utterance {utt_id(rel)!r}")
    frame = frames[0]
    os.makedirs(args.out, exist_ok=True)

    rel_signal = mean_relevance(frame, params, fb_cfg)
    write_frames(os.path.join(args.out, "mean_relevance.dvfr"), rel_signal.values,
                 meta={"subject": speaker, "clip": frame.clip_id, "feature": "mean"})

    flat_rel = flatten_relevance(rel_signal.values)
    flat_in = flatten_relevance(frame.units)
    overlaps = psd_overlap(flat_in, flat_rel)
    with open(os.path.join(args.out, "psd_overlap.csv"), "w", encoding="utf-8") as fh:
        fh.write("band_lo_hz,band_hi_hz,overlap\n")
        for lo, hi, score in overlaps:
            fh.write(f"{lo:g},{hi:g},{score:.6f}\n")

    lines = [f"utt={utt_id(rel)}", f"clip={frame.clip_id}"]
    for name, signal in (("input", flat_in), ("relevance", flat_rel)):
        try:
            lines.append(f"f0_{name}_hz={estimate_f0(signal):.2f}")
        except UnvoicedError:
            lines.append(f"f0_{name}_hz=unvoiced")
    for lo, hi, score in overlaps:
        lines.append(f"psd_overlap_{lo:g}_{hi:g}={score:.4f}")
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0


def cmd_fbank(args):
    from .filterbank import effective_filterbank, layer_frequency_response

    params, fb_cfg, _ = _load_model(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    eff = effective_filterbank(params, fb_cfg)
    with open(os.path.join(args.out, "impulse_responses.csv"), "w", encoding="utf-8") as fh:
        fh.write("filter," + ",".join(f"t{t}" for t in range(eff.shape[1])) + "\n")
        for i, row in enumerate(eff):
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")
    for li in range(len(fb_cfg.layers)):
        freqs, mag = layer_frequency_response(params, fb_cfg, li)
        with open(os.path.join(args.out, f"response_layer{li}.csv"), "w", encoding="utf-8") as fh:
            fh.write("freq_hz,magnitude\n")
            for f, m in zip(freqs, mag):
                fh.write(f"{f!r},{m!r}\n")
    print(f"wrote filterbank data for {eff.shape[0]} filters to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
