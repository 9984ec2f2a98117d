"""Command-line pipeline: clean text in, trained model and scored summaries out.

Stages are separate subcommands (normalize, build-corpus, split, stats,
train-tokenizer, train, generate, evaluate) so each intermediate file can be
inspected or re-run. A JSON config file can preset any flag (--config);
explicit flags always win. Every command finishes by printing one JSON
summary line to stdout; failures print one JSON error line to stderr and
exit 1 (argparse usage errors exit 2).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import decoding, model, optim, report, scoring, textnorm, tokenizer, training


def _emit(record: dict) -> None:
    print(json.dumps(record, ensure_ascii=False))


def _fail(message: str) -> int:
    print(json.dumps({"error": message}, ensure_ascii=False), file=sys.stderr)
    return 1


def _read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: malformed record: {e}") from e
    return rows


def _write_jsonl(path: str, rows) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
            n += 1
    return n


def _parse_ratios(text: str) -> corpus_mod.SplitRatios:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise ValueError("ratios must be three comma-separated fractions")
    return corpus_mod.SplitRatios(*parts)


def _rules_from_args(args) -> textnorm.NormalizationRules:
    kwargs = {
        "min_line_tokens": args.min_line_tokens,
        "persian_threshold": args.persian_threshold,
    }
    if args.char_map:
        kwargs["char_map"] = textnorm.load_char_map(args.char_map)
    if args.markers:
        kwargs["front_matter_markers"] = tuple(args.markers.split(","))
    return textnorm.NormalizationRules(**kwargs)


def _load_tokenizer(tok_dir: str) -> tokenizer.TokenizerModel:
    d = Path(tok_dir)
    return tokenizer.load_model(d / "vocab.txt", d / "merges.txt")


# --- subcommand bodies ----------------------------------------------------


def _cmd_normalize(args) -> int:
    rules = _rules_from_args(args)
    accepted, rejected = [], []
    for row in _read_jsonl(args.input):
        doc = textnorm.RawDocument(
            id=str(row["id"]), body=row.get("body", ""), summary=row.get("summary", ""),
            title=row.get("title"), category=row.get("category"),
        )
        result = textnorm.normalize_document(doc, rules)
        if isinstance(result, textnorm.Rejection):
            rejected.append(result.as_record())
        else:
            accepted.append({
                "id": result.id, "body": result.body, "summary": result.summary,
                "title": result.title, "category": result.category,
            })
    _write_jsonl(args.output, accepted)
    if args.rejected:
        _write_jsonl(args.rejected, rejected)
    _emit({"command": "normalize", "read": len(accepted) + len(rejected),
           "accepted": len(accepted), "rejected": len(rejected),
           "output": args.output})
    return 0


def _cmd_build_corpus(args) -> int:
    records, skipped = [], 0
    for row in _read_jsonl(args.input):
        doc = textnorm.RawDocument(
            id=str(row["id"]), body=row.get("body", ""), summary=row.get("summary", ""),
            title=row.get("title"), category=row.get("category"),
        )
        try:
            records.append(corpus_mod.make_record(doc))
        except ValueError:
            skipped += 1
    count = corpus_mod.write_corpus(records, args.output)
    _emit({"command": "build-corpus", "records": count, "skipped": skipped,
           "output": args.output})
    return 0


def _cmd_split(args) -> int:
    ratios = _parse_ratios(args.ratios)
    records = corpus_mod.read_corpus(args.input)
    splits = corpus_mod.split_corpus(records, seed=args.seed, ratios=ratios)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name in corpus_mod.SPLIT_NAMES:
        path = out_dir / f"{name}.jsonl"
        corpus_mod.write_corpus(splits[name], path)
        counts[name] = len(splits[name])
    _emit({"command": "split", "seed": args.seed, "counts": counts,
           "output_dir": str(out_dir)})
    return 0


def _cmd_stats(args) -> int:
    records = corpus_mod.read_corpus(args.input)
    stats = corpus_mod.compute_stats(records)
    record = {"command": "stats", **stats.as_dict()}
    if args.figure:
        record["figure"] = str(report.save_length_histogram(stats, args.figure))
    _emit(record)
    return 0


def _cmd_train_tokenizer(args) -> int:
    records = corpus_mod.read_corpus(args.input)
    texts = [r.article for r in records] + [r.summary for r in records]
    tok = tokenizer.train_bpe(texts, vocab_size=args.vocab_size)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tokenizer.save_model(tok, out_dir / "vocab.txt", out_dir / "merges.txt")
    _emit({"command": "train-tokenizer", "vocab_size": len(tok),
           "merges": len(tok.merges), "output_dir": str(out_dir)})
    return 0


def _cmd_train(args) -> int:
    tok = _load_tokenizer(args.tokenizer_dir)
    data_dir = Path(args.data_dir)
    train_records = corpus_mod.read_corpus(data_dir / "train.jsonl")
    val_path = data_dir / "validation.jsonl"
    val_records = corpus_mod.read_corpus(val_path) if val_path.exists() else []

    mcfg = model.ModelConfig(
        vocab_size=len(tok), d_model=args.d_model, n_heads=args.n_heads,
        n_enc_layers=args.enc_layers, n_dec_layers=args.dec_layers,
        d_ff=args.d_ff, window_size=args.window_size,
        max_enc_len=args.max_input_len, max_dec_len=args.max_output_len,
        dropout=args.dropout,
    )
    tcfg = training.TrainingConfig(
        learning_rate=args.learning_rate, batch_size=args.batch_size,
        max_input_len=args.max_input_len, max_output_len=args.max_output_len,
        eval_steps=args.eval_steps, patience=args.patience,
        max_steps=args.max_steps, checkpointing=args.gradient_checkpointing,
        seed=args.seed,
    )
    params = model.init_parameters(mcfg, seed=args.seed)
    _, log = training.train(
        params, mcfg, train_records, val_records, tok, tcfg,
        optim.OptimConfig(learning_rate=args.learning_rate),
        out_dir=args.output_dir, resume=args.resume, log_every=args.log_every,
    )
    out_dir = Path(args.output_dir)
    figure = report.save_loss_curve(log.losses, log.evals, out_dir / "loss_curve.png")
    record = {
        "command": "train", "steps": len(log.losses), "stop_reason": log.stop_reason,
        "final_loss": log.losses[-1] if log.losses else None,
        "best_val_loss": min((e.val_loss for e in log.evals), default=None),
        "checkpoint": str(out_dir / "model_best.npz"), "figure": str(figure),
    }
    _emit(record)
    return 0


def _cmd_generate(args) -> int:
    params, mcfg = model.load_checkpoint(args.checkpoint)
    tok = _load_tokenizer(args.tokenizer_dir)
    if len(tok) != mcfg.vocab_size:
        raise ValueError(
            f"tokenizer vocab {len(tok)} does not match checkpoint vocab {mcfg.vocab_size}"
        )
    gcfg = decoding.GenConfig(
        beam_size=args.beam_size, max_output_len=args.max_output_len,
        length_penalty=args.length_penalty,
    )
    records = corpus_mod.read_corpus(args.input)
    if args.limit:
        records = records[: args.limit]
    max_in = min(args.max_input_len, mcfg.max_enc_len)
    rows = []
    for rec in records:
        enc = tokenizer.encode(tok, rec.article, max_in)
        hyp = decoding.decode_with_score(params, mcfg, enc, gcfg)
        rows.append({
            "id": rec.id, "summary": tokenizer.decode(tok, hyp.ids),
            "token_count": len(hyp.ids), "score": hyp.score,
        })
    count = _write_jsonl(args.output, rows)
    _emit({"command": "generate", "documents": count, "beam_size": args.beam_size,
           "output": args.output})
    return 0


def _cmd_evaluate(args) -> int:
    tok = _load_tokenizer(args.tokenizer_dir)
    cands = {str(r["id"]): r["summary"] for r in _read_jsonl(args.candidates)}
    refs = {str(r["id"]): r["summary"] for r in _read_jsonl(args.references)}
    ids = sorted(set(cands) & set(refs))
    if not ids:
        raise ValueError("candidate and reference files share no document ids")

    max_len = args.max_output_len
    enc_pairs = [
        (tokenizer.encode(tok, cands[i], max_len), tokenizer.encode(tok, refs[i], max_len))
        for i in ids
    ]
    if args.embeddings:
        table = scoring.EmbeddingTable.from_file(args.embeddings, tok)
    elif args.checkpoint:
        params, mcfg = model.load_checkpoint(args.checkpoint)
        all_encs = [e for pair in enc_pairs for e in pair]
        table = scoring.EmbeddingTable.from_encoder(params, mcfg, all_encs)
    else:
        raise ValueError("evaluate needs --checkpoint or --embeddings for token vectors")

    # a side with no content tokens (e.g. a model that emitted EOS straight
    # away) scores zero instead of aborting the whole evaluation
    reports = [
        scoring.score_pair(c.real_ids, r.real_ids, table)
        if scoring.strip_special(c.real_ids) and scoring.strip_special(r.real_ids)
        else scoring.ScoreReport(0.0, 0.0, 0.0)
        for c, r in enc_pairs
    ]
    mean_p = float(np.mean([r.precision for r in reports]))
    mean_r = float(np.mean([r.recall for r in reports]))
    overall = scoring.ScoreReport(mean_p, mean_r, scoring.f1(mean_p, mean_r))
    record = {"command": "evaluate", "pairs": len(ids),
              "embedding_source": table.source, **overall.as_dict()}
    if args.figure:
        record["figure"] = str(report.save_score_histogram(
            [r.f1 for r in reports], args.figure))
    if args.output:
        Path(args.output).write_text(
            json.dumps({**record, "per_pair": [
                {"id": i, **r.as_dict()} for i, r in zip(ids, reports)
            ]}, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        record["output"] = args.output
    _emit(record)
    return 0


# --- parser ---------------------------------------------------------------


def _build_parser(preset: dict) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parsum",
        description="Long-document Persian summarization pipeline.",
    )
    parser.add_argument("--config", help="JSON file presetting any flag by name")
    sub = parser.add_subparsers(dest="command", required=True)

    def arg(p, *names, **kw):
        dest = kw.get("dest") or names[-1].lstrip("-").replace("-", "_")
        if dest in preset:
            kw["default"] = preset[dest]
            kw.pop("required", None)
        p.add_argument(*names, **kw)

    p = sub.add_parser("normalize", help="clean raw documents and drop non-Persian ones")
    arg(p, "--input", required=True)
    arg(p, "--output", required=True)
    arg(p, "--rejected", default=None, help="where to write rejection records")
    arg(p, "--min-line-tokens", type=int, default=10)
    arg(p, "--persian-threshold", type=float, default=0.6)
    arg(p, "--char-map", default=None, help="override character-map file")
    arg(p, "--markers", default=None, help="comma-separated front-matter headings")
    p.set_defaults(func=_cmd_normalize)

    p = sub.add_parser("build-corpus", help="turn cleaned documents into corpus records")
    arg(p, "--input", required=True)
    arg(p, "--output", required=True)
    p.set_defaults(func=_cmd_build_corpus)

    p = sub.add_parser("split", help="deterministic train/validation/test split")
    arg(p, "--input", required=True)
    arg(p, "--output-dir", required=True)
    arg(p, "--ratios", default="0.9,0.05,0.05")
    arg(p, "--seed", type=int, default=0)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("stats", help="corpus length statistics and histogram figure")
    arg(p, "--input", required=True)
    arg(p, "--figure", default=None, help="write a length-histogram PNG here")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("train-tokenizer", help="learn a subword vocabulary")
    arg(p, "--input", required=True)
    arg(p, "--output-dir", required=True)
    arg(p, "--vocab-size", type=int, default=8000)
    p.set_defaults(func=_cmd_train_tokenizer)

    p = sub.add_parser("train", help="fine-tune the summarization model")
    arg(p, "--data-dir", required=True, help="directory with train/validation files")
    arg(p, "--tokenizer-dir", required=True)
    arg(p, "--output-dir", required=True)
    arg(p, "--learning-rate", type=float, default=1e-4)
    arg(p, "--batch-size", type=int, default=1)
    arg(p, "--max-input-len", type=int, default=8192)
    arg(p, "--max-output-len", type=int, default=512)
    arg(p, "--eval-steps", type=int, default=4000)
    arg(p, "--gradient-checkpointing", action=argparse.BooleanOptionalAction,
        default=True)
    arg(p, "--patience", type=int, default=3)
    arg(p, "--max-steps", type=int, default=100_000)
    arg(p, "--seed", type=int, default=0)
    arg(p, "--resume", action="store_true", default=False)
    arg(p, "--log-every", type=int, default=50)
    arg(p, "--d-model", type=int, default=512)
    arg(p, "--n-heads", type=int, default=8)
    arg(p, "--enc-layers", type=int, default=6)
    arg(p, "--dec-layers", type=int, default=6)
    arg(p, "--d-ff", type=int, default=2048)
    arg(p, "--window-size", type=int, default=64)
    arg(p, "--dropout", type=float, default=0.0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="decode summaries for a corpus file")
    arg(p, "--checkpoint", required=True)
    arg(p, "--tokenizer-dir", required=True)
    arg(p, "--input", required=True)
    arg(p, "--output", required=True)
    arg(p, "--beam-size", type=int, default=2)
    arg(p, "--max-output-len", type=int, default=512)
    arg(p, "--max-input-len", type=int, default=8192)
    arg(p, "--length-penalty", type=float, default=0.0)
    arg(p, "--limit", type=int, default=0, help="only decode the first N documents")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", help="score candidate summaries against references")
    arg(p, "--candidates", required=True)
    arg(p, "--references", required=True)
    arg(p, "--tokenizer-dir", required=True)
    arg(p, "--checkpoint", default=None, help="model supplying token embeddings")
    arg(p, "--embeddings", default=None, help="external embedding file")
    arg(p, "--max-output-len", type=int, default=512)
    arg(p, "--figure", default=None, help="write an F1-histogram PNG here")
    arg(p, "--output", default=None, help="write a detailed JSON report here")
    p.set_defaults(func=_cmd_evaluate)

    return parser


def _load_preset(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    with open(known.config, encoding="utf-8") as f:
        preset = json.load(f)
    if not isinstance(preset, dict):
        raise ValueError(f"{known.config}: config must be a JSON object")
    return preset


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        preset = _load_preset(argv)
        args = _build_parser(preset).parse_args(argv)
        return args.func(args)
    except (ValueError, OSError, KeyError, training.TrainingAbortError,
            model.LayerNonFiniteError) as e:
        return _fail(str(e))


if __name__ == "__main__":
    sys.exit(main())
