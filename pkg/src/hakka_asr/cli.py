"""Command-line entry point: ``hakka-asr <subcommand> [options]``.

Options may also come from a JSON config file (``--config``): top-level
keys apply to every subcommand, and a key named after a subcommand holds
options for that subcommand only.  Precedence: command line > config file >
built-in defaults.  Logs go to stderr as JSON lines; the level comes from
``--log-level`` or the ``HAKKA_ASR_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import corpus as corpus_mod
from . import dcae, decoding, plotting, scoring, toy
from . import features as F
from . import network as nw
from .chain import GraphError
from .lm import lattice as lat
from .lm import ngram as ng
from .lm import rescore as rs
from .lm import rnnlm

log = logging.getLogger("hakka_asr")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PATH = 3
EXIT_CONFIG = 4
EXIT_DATA = 5
EXIT_RUNTIME = 6

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "data")
TABLE1_FIXTURE = os.path.join(FIXTURE_DIR, "table1_manifest.jsonl.gz")


class CliError(Exception):
    def __init__(self, code, kind, message):
        super().__init__(message)
        self.code = code
        self.kind = kind


class JsonFormatter(logging.Formatter):
    def format(self, record):
        entry = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        entry.update(getattr(record, "fields", {}))
        return json.dumps(entry, ensure_ascii=False, sort_keys=True)


def setup_logging(level):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        emit_error(EXIT_USAGE, "usage", message)
        sys.exit(EXIT_USAGE)


def emit_error(code, kind, message):
    sys.stderr.write("error " + json.dumps({"code": code, "kind": kind, "message": str(message)},
                                           ensure_ascii=False) + "\n")


def require_file(path, what):
    if path is None:
        raise CliError(EXIT_USAGE, "usage", f"missing required {what}")
    if not os.path.isfile(path):
        raise CliError(EXIT_PATH, "path", f"{what} not readable: {path}")
    return path


def require_dir(path, what):
    if path is None:
        raise CliError(EXIT_USAGE, "usage", f"missing required {what}")
    if not os.path.isdir(path):
        raise CliError(EXIT_PATH, "path", f"{what} is not a directory: {path}")
    return path


def sidecar(path, suffix):
    root, _ = os.path.splitext(path)
    return root + suffix


def write_tsv(path, header, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(header) + "\n")
        for row in rows:
            f.write("\t".join(str(x) for x in row) + "\n")


def resolve_audio(manifest, record):
    path = record.audio_path
    if path and not os.path.isabs(path):
        path = os.path.join(os.path.dirname(os.path.abspath(manifest)), path)
    return path


def parallel_map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- stats

def cmd_stats(args):
    path = TABLE1_FIXTURE if args.table1_fixture else require_file(args.manifest, "--manifest")
    records = corpus_mod.load_manifest(path)
    rows, totals = corpus_mod.compute_stats(records, group_by_source=not args.no_group)
    print(corpus_mod.format_stats_table(rows, totals))
    if args.out:
        write_tsv(args.out, ["source", "hours", "num_utts", "spu"],
                  [(r.source, f"{r.hours:.2f}", r.num_utts, f"{r.spu:.2f}") for r in rows + [totals]])
        plotting.plot_corpus_stats(rows, totals, args.plot or sidecar(args.out, ".png"))
    elif args.plot:
        plotting.plot_corpus_stats(rows, totals, args.plot)
    if args.max_duration:
        kept, dropped = corpus_mod.filter_by_duration(records, args.max_duration)
        print(f"\nmax duration {args.max_duration:g} s: kept {len(kept):,}, dropped {len(dropped):,}")


# ---------------------------------------------------------------- featurize

def featurize_record(record, manifest, args, cfg):
    from scipy.io import wavfile

    audio = resolve_audio(manifest, record)
    if not audio or not os.path.isfile(audio):
        raise CliError(EXIT_PATH, "path", f"audio for {record.utt_id} not readable: {audio}")
    sr, data = wavfile.read(audio)
    if data.dtype.kind == "i":
        data = data / float(np.iinfo(data.dtype).max + 1)
    if data.ndim > 1:
        data = data.mean(axis=1)
    mfcc = F.compute_mfcc(F.Waveform(data, sr), cfg)
    if args.ssl_dir:
        ssl = F.load_ssl_embeddings(os.path.join(args.ssl_dir, record.utt_id + ".feat"), mfcc.num_frames)
    else:
        ssl = F.stub_ssl_embeddings(record.utt_id, mfcc, args.seed)
    fused = F.fuse(mfcc, ssl, tolerance=2)
    if not args.no_cmvn:
        fused = F.cmvn(fused)
    out = os.path.join(args.out_dir, record.utt_id + ".feat")
    F.write_matrix(out, fused)
    return record.utt_id, out, fused.num_frames


def cmd_featurize(args):
    manifest = require_file(args.manifest, "--manifest")
    if args.ssl_dir:
        require_dir(args.ssl_dir, "--ssl-dir")
    elif not args.stub_ssl:
        raise CliError(EXIT_USAGE, "usage", "give --ssl-dir or --stub-ssl")
    cfg = F.MfccConfig(window_s=args.window_ms / 1000.0, shift_s=args.shift_ms / 1000.0,
                       num_mel_bins=args.mel_bins)
    try:
        cfg.validate(16000)
    except F.FeatureConfigError as exc:
        raise CliError(EXIT_CONFIG, "config", str(exc)) from None
    os.makedirs(args.out_dir, exist_ok=True)
    records = corpus_mod.load_manifest(manifest)
    results = parallel_map(lambda r: featurize_record(r, manifest, args, cfg), records, args.jobs)
    with open(os.path.join(args.out_dir, "feats.scp"), "w", encoding="utf-8") as f:
        for utt, path, frames in results:
            f.write(f"{utt} {os.path.basename(path)} {frames}\n")
    log.info("featurized", extra={"fields": {"utterances": len(results), "out_dir": args.out_dir}})
    if args.plot and results:
        plotting.plot_features(F.read_matrix(results[0][1]).frames, args.plot, title=results[0][0])
    print(f"wrote {len(results)} feature files to {args.out_dir}")


# ---------------------------------------------------------------- train-am

def parse_weights(text):
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError:
        raise CliError(EXIT_CONFIG, "config", f"--weights must be 4 comma-separated numbers, got {text!r}") from None
    if len(parts) != 4:
        raise CliError(EXIT_CONFIG, "config", "--weights needs mmi,ce,recon,enh")
    return dcae.LossWeights(*parts)


def load_examples(manifest, feat_dir, alignments):
    records = corpus_mod.load_manifest(manifest)
    ali = toy.read_alignments(alignments)
    examples = []
    for r in records:
        path = os.path.join(feat_dir, r.utt_id + ".feat")
        if not os.path.isfile(path):
            raise CliError(EXIT_PATH, "path", f"features for {r.utt_id} not found: {path}")
        feats = F.read_matrix(path).frames
        if r.utt_id not in ali:
            log.warning("no alignment for %s; skipped", r.utt_id)
            continue
        labels = ali[r.utt_id]
        if labels.shape[0] != feats.shape[0]:
            raise CliError(EXIT_DATA, "data", f"{r.utt_id}: {labels.shape[0]} alignment frames vs "
                                              f"{feats.shape[0]} feature frames")
        examples.append(dcae.Example(r.utt_id, feats, labels))
    return examples


def cmd_train_am(args):
    manifest = require_file(args.manifest, "--manifest")
    feat_dir = require_dir(args.feat_dir, "--feat-dir")
    alignments = require_file(args.alignments, "--alignments")
    weights = parse_weights(args.weights)
    examples = load_examples(manifest, feat_dir, alignments)
    if not examples:
        raise CliError(EXIT_DATA, "data", "no trainable utterances")
    num_pdfs = args.num_pdfs or int(max(int(ex.frame_labels.max()) for ex in examples)) + 1
    if args.network_spec:
        with open(require_file(args.network_spec, "--network-spec"), encoding="utf-8") as f:
            spec_dict = json.load(f)
    else:
        spec_dict = {}
    spec_dict.setdefault("input_dim", int(examples[0].feats.shape[1]))
    spec_dict.setdefault("num_pdf_targets", num_pdfs)
    spec = nw.NetworkSpec.from_dict(spec_dict)
    variant = dcae.Variant.parse(args.variant)
    if variant is not dcae.Variant.C:
        rng = np.random.Generator(np.random.PCG64(args.seed))
        examples = [dcae.Example(ex.utt_id, dcae.add_noise(ex.feats, args.snr, rng), ex.frame_labels, ex.feats)
                    for ex in examples]
    den = dcae.denominator_from_examples(examples, spec.num_pdf_targets, spec.subsample_rate)
    ready = dcae.prepare_examples(examples, den, spec.subsample_rate)
    n_held = int(round(len(ready) * args.heldout_fraction))
    train_set, heldout = ready[:len(ready) - n_held], ready[len(ready) - n_held:] or None
    model = dcae.build_dcae(variant, spec, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    config = dcae.TrainConfig(epochs=args.epochs, learning_rate=args.lr, momentum=args.momentum,
                              lr_decay=args.lr_decay, seed=args.seed)
    ckpt = os.path.join(args.out_dir, "model.ckpt")
    loss_log = os.path.join(args.out_dir, "loss_log.jsonl")
    result = dcae.train(model, train_set, weights, config, den, heldout, ckpt, loss_log)
    with open(os.path.join(args.out_dir, "den.graph"), "w", encoding="utf-8") as f:
        from .chain import dump_graph
        f.write(dump_graph(den))
    write_tsv(os.path.join(args.out_dir, "loss.tsv"), ["epoch", "total", "mmi", "ce", "recon_input", "recon_clean"],
              [(h["epoch"],) + tuple("" if h["train"][k] is None else repr(h["train"][k])
                                     for k in ("total", "mmi", "ce", "recon_input", "recon_clean"))
               for h in result.history])
    plotting.plot_loss_curve(result.history, os.path.join(args.out_dir, "loss.png"))
    for h in result.history:
        t = h["train"]
        print(f"epoch {h['epoch']:>3}  total {t['total']:.6f}  mmi {t['mmi']:.6f}  ce {t['ce']:.6f}")
    print(f"best epoch {result.best_epoch}; checkpoint {ckpt}")


# ---------------------------------------------------------------- decode

def cmd_decode(args):
    ckpt = require_file(args.checkpoint, "--checkpoint")
    feat_dir = require_dir(args.feat_dir, "--feat-dir")
    with open(require_file(args.lexicon, "--lexicon"), encoding="utf-8") as f:
        lexicon = json.load(f)
    model, _ = dcae.load_model(ckpt)
    words = sorted({w for w in lexicon["pdf_to_word"] if w is not None})
    pdf_to_unit = [None if w is None else words.index(w) for w in lexicon["pdf_to_word"]]
    scp = os.path.join(feat_dir, "feats.scp")
    utts = [line.split()[0] for line in open(require_file(scp, "feats.scp"), encoding="utf-8") if line.strip()]
    os.makedirs(args.out_dir, exist_ok=True)
    for utt in utts:
        feats = F.read_matrix(os.path.join(feat_dir, utt + ".feat")).frames
        out = dcae.dcae_forward(model.variant, model, feats)
        lattice = decoding.posterior_sausage(out.pdf_logits.data, pdf_to_unit, words, args.width)
        lat.write_lattice(lattice, os.path.join(args.out_dir, utt + ".lat"))
    print(f"wrote {len(utts)} lattices to {args.out_dir}")


# ---------------------------------------------------------------- train-lm

def read_corpus(path, mode):
    with open(path, encoding="utf-8") as f:
        return [scoring.tokenize(line, mode) for line in f if line.strip()]


def cmd_train_lm(args):
    sentences = read_corpus(require_file(args.corpus, "--corpus"), args.mode)
    model = ng.train_ngram(sentences, args.order, args.discount)
    ng.write_arpa(model, args.out)
    print(f"{args.order}-gram model over {len(model.vocab)} words -> {args.out}")
    if args.heldout:
        held = read_corpus(require_file(args.heldout, "--heldout"), args.mode)
        print(f"held-out perplexity {ng.perplexity(model, held):.4f}")
    if args.rnn_out:
        rnn, losses = rnnlm.train_rnnlm(sentences, vocab=model.vocab, hidden_dim=args.rnn_hidden,
                                        epochs=args.rnn_epochs, seed=args.seed)
        rnn.save(args.rnn_out)
        print(f"recurrent LM -> {args.rnn_out} (final epoch loss {losses[-1]:.4f})")


# ---------------------------------------------------------------- rescore

def lattice_paths(args):
    if args.lattice_dir:
        d = require_dir(args.lattice_dir, "--lattice-dir")
        return [os.path.join(d, n) for n in sorted(os.listdir(d)) if n.endswith(".lat")]
    return [require_file(p, "--lattice") for p in args.lattice or []]


def cmd_rescore(args):
    paths = lattice_paths(args)
    if not paths:
        raise CliError(EXIT_USAGE, "usage", "give --lattice or --lattice-dir")
    model = ng.read_arpa(require_file(args.lm, "--lm"))
    rnn = rnnlm.RnnLm.load(require_file(args.rnnlm, "--rnnlm")) if args.rnnlm else None
    lam = args.lam if rnn is not None else 0.0
    pron = None
    if args.lexicon:
        with open(require_file(args.lexicon, "--lexicon"), encoding="utf-8") as f:
            pron = json.load(f).get("pronunciation")

    def one(path):
        lattice = lat.read_lattice(path)
        if args.expand:
            lattice = lat.expand_with_ngram(lattice, model)
        best, _ = rs.rescore(lattice, model, rnn, lam, args.k, args.acoustic_scale)
        return os.path.splitext(os.path.basename(path))[0], best.words

    results = parallel_map(one, paths, args.jobs)
    joiner = "" if args.mode == "character" else " "
    with open(args.out, "w", encoding="utf-8") as f:
        for utt, words in results:
            f.write(f"{utt} {joiner.join(words)}\n")
    if args.pinyin_out:
        if pron is None:
            raise CliError(EXIT_USAGE, "usage", "--pinyin-out needs --lexicon")
        with open(args.pinyin_out, "w", encoding="utf-8") as f:
            for utt, words in results:
                f.write(f"{utt} {' '.join(pron.get(w, w) for w in words)}\n")
    print(f"rescored {len(results)} lattices -> {args.out}")


# ---------------------------------------------------------------- score

def cmd_score(args):
    refs = scoring.read_transcripts(require_file(args.ref, "--ref"))
    hyps = scoring.read_transcripts(require_file(args.hyp, "--hyp"))
    styles = {}
    if args.manifest:
        styles = {r.utt_id: r.style for r in corpus_mod.load_manifest(require_file(args.manifest, "--manifest"))}
    pairs = scoring.score_transcripts(refs, hyps, args.mode, styles, args.intersect)
    report = scoring.error_rate(pairs, args.mode, macro=args.macro)
    baseline = {report.track: args.baseline} if args.baseline else None
    print(scoring.format_report([report], baseline))
    if args.out:
        write_tsv(args.out, ["track", "read", "spont", "average", "utts", "ref_tokens", "sub", "del", "ins"],
                  [(report.track, _opt(report.rate_read), _opt(report.rate_spont), f"{report.rate_average:.2f}",
                    report.utt_count, report.ref_tokens, report.counts["sub"], report.counts["del"],
                    report.counts["ins"])])
        plotting.plot_error_report([report], args.plot or sidecar(args.out, ".png"))
    elif args.plot:
        plotting.plot_error_report([report], args.plot)
    return report


def _opt(x):
    return "" if x is None else f"{x:.2f}"


# ---------------------------------------------------------------- demo / toy data

def cmd_toy_data(args):
    manifest = toy.make_toy_corpus(args.workdir, args.num_utts, args.seed)
    print(f"toy corpus written; manifest {manifest}")


def cmd_demo(args):
    w = args.workdir
    os.makedirs(w, exist_ok=True)
    j = lambda *p: os.path.join(w, *p)  # noqa: E731
    seed = str(args.seed)
    spec = {"num_layers": 2, "embed_dim": 32, "bottleneck_dim": 12, "final_projection_dim": 48}
    with open(j("network.json"), "w", encoding="utf-8") as f:
        json.dump(spec, f, indent=1)
    steps = [
        ["toy-data", "--workdir", w, "--num-utts", str(args.num_utts), "--seed", seed],
        ["featurize", "--manifest", j("manifest.jsonl"), "--out-dir", j("feats"), "--stub-ssl", "--seed", seed],
        ["train-am", "--manifest", j("manifest.jsonl"), "--feat-dir", j("feats"), "--alignments",
         j("alignments.txt"), "--variant", args.variant, "--epochs", str(args.epochs), "--seed", seed,
         "--network-spec", j("network.json"), "--out-dir", j("am")],
        ["decode", "--checkpoint", j("am", "model.ckpt"), "--feat-dir", j("feats"), "--lexicon",
         j("lexicon.json"), "--out-dir", j("lattices")],
        ["train-lm", "--corpus", j("lm_corpus.txt"), "--out", j("lm.arpa"), "--rnn-out", j("rnnlm.ckpt"),
         "--seed", seed],
        ["rescore", "--lattice-dir", j("lattices"), "--lm", j("lm.arpa"), "--rnnlm", j("rnnlm.ckpt"),
         "--expand", "--lexicon", j("lexicon.json"), "--out", j("hyp_char.txt"),
         "--pinyin-out", j("hyp_pinyin.txt")],
        ["score", "--ref", j("ref_char.txt"), "--hyp", j("hyp_char.txt"), "--manifest", j("manifest.jsonl"),
         "--mode", "character", "--out", j("score_char.tsv")],
        ["score", "--ref", j("ref_pinyin.txt"), "--hyp", j("hyp_pinyin.txt"), "--manifest", j("manifest.jsonl"),
         "--mode", "syllable", "--out", j("score_pinyin.tsv")],
    ]
    parser = build_parser()
    reports = []
    for step in steps:
        print(f"\n== {' '.join(step[:1])}")
        result = dispatch(parser.parse_args(step))
        if step[0] == "score":
            reports.append(result)
    print("\n== final error report")
    print(scoring.format_report(reports))
    plotting.plot_error_report(reports, j("error_report.png"))


# ---------------------------------------------------------------- parser

COMMANDS = {}


def command(name, func, help_text):
    COMMANDS[name] = func
    return name, help_text


def build_parser():
    p = ArgumentParser(prog="hakka-asr", description="Desk-scale Hakka ASR toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="JSON config file (CLI flags override it)")
    p.add_argument("--log-level", default=os.environ.get("HAKKA_ASR_LOG_LEVEL", "warning"),
                   help="log level (default from HAKKA_ASR_LOG_LEVEL, else warning)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    s = sub.add_parser("stats", help="corpus statistics table (hours, #utt, SPU)")
    s.add_argument("--manifest", help="utterance manifest (JSON lines, .gz allowed)")
    s.add_argument("--table1-fixture", action="store_true", help="use the bundled corpus-statistics fixture")
    s.add_argument("--no-group", action="store_true", help="only print the totals row")
    s.add_argument("--max-duration", type=float, help="also report the split at this duration cutoff (s)")
    s.add_argument("--out", help="write a TSV table here and a figure next to it")
    s.add_argument("--plot", help="figure path (default: --out with .png)")

    s = sub.add_parser("featurize", help="MFCC + SSL fused features per utterance")
    s.add_argument("--manifest", required=False)
    s.add_argument("--out-dir", help="output directory")
    s.add_argument("--window-ms", type=float, default=25.0)
    s.add_argument("--shift-ms", type=float, default=10.0)
    s.add_argument("--mel-bins", type=int, default=40)
    s.add_argument("--ssl-dir", help="directory of <utt_id>.feat ssl1024 files")
    s.add_argument("--stub-ssl", action="store_true", help="generate deterministic stand-in SSL embeddings")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-cmvn", action="store_true", help="skip per-utterance mean/variance normalization")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--plot", help="heat-map of the first utterance's features")

    s = sub.add_parser("train-am", help="train a c/hc/pc-DcAE acoustic model")
    s.add_argument("--manifest")
    s.add_argument("--feat-dir")
    s.add_argument("--alignments", help="lines of 'utt_id pdf pdf ...' at the feature frame rate")
    s.add_argument("--variant", choices=["c", "hc", "pc"], default="c")
    s.add_argument("--weights", default="1.0,0.2,0.2,0.2", help="mmi,ce,recon,enh loss weights")
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--lr", type=float, default=0.002)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--lr-decay", type=float, default=0.9)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--snr", type=float, default=10.0, help="feature-domain SNR (dB) of the hc/pc corruption")
    s.add_argument("--num-pdfs", type=int, help="output targets (default: from alignments)")
    s.add_argument("--network-spec", help="JSON network spec (fields of NetworkSpec)")
    s.add_argument("--heldout-fraction", type=float, default=0.0)
    s.add_argument("--out-dir", help="output directory")

    s = sub.add_parser("decode", help="acoustic model -> sausage lattices")
    s.add_argument("--checkpoint")
    s.add_argument("--feat-dir")
    s.add_argument("--lexicon", help="JSON with pdf_to_word (and pronunciation)")
    s.add_argument("--width", type=int, default=3, help="alternatives per slot")
    s.add_argument("--out-dir", help="output directory")

    s = sub.add_parser("train-lm", help="n-gram (ARPA) and optional recurrent LM")
    s.add_argument("--corpus")
    s.add_argument("--mode", choices=["character", "syllable"], default="character")
    s.add_argument("--order", type=int, default=4)
    s.add_argument("--discount", type=float, default=0.75)
    s.add_argument("--out", help="ARPA output path")
    s.add_argument("--heldout", help="text for a perplexity report")
    s.add_argument("--rnn-out", help="also train a recurrent LM and save it here")
    s.add_argument("--rnn-hidden", type=int, default=32)
    s.add_argument("--rnn-epochs", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("rescore", help="n-best rescoring of word lattices")
    s.add_argument("--lattice", nargs="*")
    s.add_argument("--lattice-dir")
    s.add_argument("--lm", help="ARPA n-gram model")
    s.add_argument("--rnnlm", help="recurrent LM checkpoint")
    s.add_argument("--lambda", dest="lam", type=float, default=0.5, help="recurrent LM interpolation weight")
    s.add_argument("--k", type=int, default=50)
    s.add_argument("--acoustic-scale", type=float, default=1.0)
    s.add_argument("--expand", action="store_true", help="re-score lattice LM arcs with the n-gram first")
    s.add_argument("--mode", choices=["character", "syllable"], default="character")
    s.add_argument("--lexicon", help="JSON with a word -> pinyin 'pronunciation' map")
    s.add_argument("--pinyin-out", help="also write pinyin hypotheses here")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", help="hypothesis transcripts")

    s = sub.add_parser("score", help="character / syllable error rates")
    s.add_argument("--ref")
    s.add_argument("--hyp")
    s.add_argument("--mode", choices=["character", "syllable"], default="character")
    s.add_argument("--manifest", help="manifest supplying read/spontaneous styles")
    s.add_argument("--intersect", action="store_true", help="drop references that have no hypothesis")
    s.add_argument("--macro", action="store_true", help="average per-utterance rates instead of pooling")
    s.add_argument("--baseline", type=float, help="baseline average rate for a relative-improvement row")
    s.add_argument("--out", help="write a TSV report here and a figure next to it")
    s.add_argument("--plot")

    s = sub.add_parser("toy-data", help="write the synthetic tone-speech corpus")
    s.add_argument("--workdir", help="working directory")
    s.add_argument("--num-utts", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("demo-e2e", help="toy-data -> featurize -> train-am -> decode -> train-lm -> rescore -> score")
    s.add_argument("--workdir", help="working directory")
    s.add_argument("--num-utts", type=int, default=20)
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--variant", choices=["c", "hc", "pc"], default="c")
    s.add_argument("--seed", type=int, default=0)
    return p


HANDLERS = {
    "stats": cmd_stats, "featurize": cmd_featurize, "train-am": cmd_train_am, "decode": cmd_decode,
    "train-lm": cmd_train_lm, "rescore": cmd_rescore, "score": cmd_score, "toy-data": cmd_toy_data,
    "demo-e2e": cmd_demo,
}


# Checked after the config file is merged, so these may come from either.
REQUIRED = {
    "featurize": ["out_dir"], "train-am": ["out_dir"], "decode": ["out_dir"], "train-lm": ["out"],
    "rescore": ["out"], "toy-data": ["workdir"], "demo-e2e": ["workdir"],
}


def dispatch(args):
    for dest in REQUIRED.get(args.command, []):
        if getattr(args, dest) is None:
            raise CliError(EXIT_USAGE, "usage", f"{args.command}: --{dest.replace('_', '-')} is required")
    return HANDLERS[args.command](args)


def apply_config(parser, argv):
    """Re-parse with config-file values installed as defaults."""
    pre = parser.parse_args(argv)
    if not pre.config:
        return pre
    path = require_file(pre.config, "--config")
    try:
        with open(path, encoding="utf-8") as f:
            cfg = json.load(f)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, "config", f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise CliError(EXIT_CONFIG, "config", f"{path}: top level must be an object")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sub = subparsers.choices[pre.command]
    def dests(p):
        return {a.dest for a in p._actions} | {a.dest for a in parser._actions}

    known = dests(sub)
    anywhere = set().union(*(dests(p) for p in subparsers.choices.values()))
    shared = {k.replace("-", "_"): v for k, v in cfg.items() if k not in subparsers.choices}
    own = {k.replace("-", "_"): v for k, v in (cfg.get(pre.command) or {}).items()}
    # shared keys only need to mean something to some subcommand
    unknown = sorted([k for k in shared if k not in anywhere] + [k for k in own if k not in known])
    if unknown:
        raise CliError(EXIT_CONFIG, "config", f"{path}: unknown options {unknown}")
    values = {k: v for k, v in shared.items() if k in known}
    values.update(own)
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def config_hash(args):
    items = {k: v for k, v in sorted(vars(args).items()) if k not in ("log_level",)}
    return nw.spec_hash(json.loads(json.dumps(items, default=str)))


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = apply_config(parser, argv)
        setup_logging(args.log_level)
        log.info("run", extra={"fields": {"command": args.command, "config_hash": config_hash(args),
                                          "seed": getattr(args, "seed", None)}})
        dispatch(args)
        return EXIT_OK
    except CliError as exc:
        emit_error(exc.code, exc.kind, exc)
        return exc.code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        emit_error(EXIT_PATH, "path", exc)
        return EXIT_PATH
    except (dcae.ConfigError, nw.SpecError, F.FeatureConfigError) as exc:
        emit_error(EXIT_CONFIG, "config", exc)
        return EXIT_CONFIG
    except dcae.DivergenceError as exc:
        emit_error(EXIT_RUNTIME, "divergence", exc)
        return EXIT_RUNTIME
    except (corpus_mod.ManifestError, F.FeatureError, GraphError, lat.LatticeError, nw.CheckpointError,
            ValueError, KeyError) as exc:
        emit_error(EXIT_DATA, "data", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
