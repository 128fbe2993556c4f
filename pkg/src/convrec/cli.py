"""Command-line surface for the full pipeline.

Subcommands: make-demo, build-kg, preprocess, train, eval, plot, serve, chat.
All paths are resolved against --workdir. Flag values beat config-file values
beat defaults. Exit codes: 0 ok, 1 usage/config, 2 data/validation, 3 numeric.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import kg as kg_mod
from . import synth
from .errors import ConfigError, ConvRecError
from .training import TrainConfig

log = logging.getLogger("convrec")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="convrec", description=__doc__)
    parser.add_argument("--workdir", default=".", help="base directory for relative paths")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-demo", help="write a synthetic demo corpus + movie dump")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--movies", type=int, default=24)
    p.add_argument("--conversations", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("build-kg", help="build the knowledge graph from an offline dump")
    p.add_argument("--dump", required=True, help="JSONL movie dump")
    p.add_argument("--mentions", required=True, help="JSONL {name, year} mentioned movies")
    p.add_argument("--out-nodes", required=True)
    p.add_argument("--out-edges", required=True)
    p.add_argument("--report", help="optional coverage report JSON path")

    p = sub.add_parser("preprocess", help="corpus -> train/valid/test triplet files")
    p.add_argument("--corpus", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-augment", action="store_true", help="skip descriptive-entity augmentation")

    p = sub.add_parser("train", help="joint training run")
    p.add_argument("--data", required=True, help="directory with train/valid/test.jsonl")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--out", required=True, help="run directory (checkpoints + logs)")
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--profile", choices=["desk", "pretrained"], default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-node-loss", action="store_true", default=None)
    p.add_argument("--no-data-aug", action="store_true", default=None)
    p.add_argument("--no-node-init", action="store_true", default=None)
    p.add_argument("--no-corg", action="store_true", default=None)

    p = sub.add_parser("eval", help="compute the metric report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="triplet JSONL file or directory with test.jsonl")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--k", default="1,5,10,50")

    p = sub.add_parser("plot", help="epoch log -> two-panel curve data (R@5, rec loss)")
    p.add_argument("--log", required=True, help="epoch log JSONL")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--png", help="optional rendered image (needs matplotlib)")

    p = sub.add_parser("serve", help="start the HTTP chat service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--cors", action="store_true", help="permissive cross-origin policy for UI dev")

    p = sub.add_parser("chat", help="interactive terminal chat against a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--top-k", type=int, default=5)
    return parser


def _resolve(workdir: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else workdir / path


def cmd_make_demo(args, workdir: Path) -> int:
    out = _resolve(workdir, args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump = synth.make_demo_dump(args.movies)
    with open(out / "dump.jsonl", "w", encoding="utf-8") as fh:
        for rec in dump:
            fh.write(json.dumps(rec) + "\n")
    with open(out / "mentions.jsonl", "w", encoding="utf-8") as fh:
        for name, year in synth.make_demo_mentions(args.movies):
            fh.write(json.dumps({"name": name, "year": year}) + "\n")
    conversations = synth.make_demo_corpus(args.conversations, args.movies, args.seed)
    corpus_mod.save_corpus(conversations, out / "corpus.jsonl")
    print(f"wrote {len(dump)} dump records, {len(conversations)} conversations to {out}")
    return 0


def _read_mentions(path: Path) -> list[tuple[str, int]]:
    mentions = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                mentions.append((rec["name"], int(rec["year"])))
    return mentions


def cmd_build_kg(args, workdir: Path) -> int:
    dump_path = _resolve(workdir, args.dump)
    records = []
    with open(dump_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    mentions = _read_mentions(_resolve(workdir, args.mentions))
    graph, report = kg_mod.build_graph(records, mentions)
    kg_mod.save_graph(graph, _resolve(workdir, args.out_nodes), _resolve(workdir, args.out_edges))
    payload = {
        "coverage": report.coverage.to_dict(),
        "unmatched_mentions": report.unmatched_mentions,
        "warnings": report.warnings,
    }
    if args.report:
        _resolve(workdir, args.report).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(json.dumps(payload["coverage"], indent=2))
    return 0


def cmd_preprocess(args, workdir: Path) -> int:
    graph = kg_mod.load_graph(_resolve(workdir, args.nodes), _resolve(workdir, args.edges))
    parsed = corpus_mod.load_corpus(_resolve(workdir, args.corpus), item_ids=graph.item_set)
    triplets = []
    filtered_items = 0
    for conv in parsed.conversations:
        for t in corpus_mod.extract_triplets(conv):
            turn = conv.turns[t.turn_index - 1]
            filtered_items += len(turn.mentions) - len(t.masked_surfaces)
            triplets.append(t)
    n_dialogue = len(triplets)
    if not args.no_augment:
        triplets.extend(corpus_mod.augment_with_entities(graph))
    ratios = tuple(float(x) for x in args.ratios.split(","))
    if len(ratios) != 3:
        raise ConfigError("--ratios needs three comma-separated numbers")
    train, valid, test = corpus_mod.split_dataset(triplets, ratios, args.seed)

    out = _resolve(workdir, args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_triplets(train, out / "train.jsonl")
    corpus_mod.save_triplets(valid, out / "valid.jsonl")
    corpus_mod.save_triplets(test, out / "test.jsonl")
    summary = {
        "conversations": len(parsed.conversations),
        "dialogue_triplets": n_dialogue,
        "augmented_triplets": len(triplets) - n_dialogue,
        "filtered_items": filtered_items,
        "train": len(train),
        "valid": len(valid),
        "test": len(test),
        "unresolved_mentions": len(parsed.unresolved_mentions),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(json.dumps(summary, indent=2))
    return 0


def _load_train_config(args, workdir: Path) -> tuple[TrainConfig, str]:
    file_values = {}
    if args.config:
        file_values = json.loads(_resolve(workdir, args.config).read_text(encoding="utf-8"))
        unknown = set(file_values) - set(TrainConfig.__dataclass_fields__) - {"profile"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    profile = file_values.pop("profile", "desk")
    if args.profile is not None:
        profile = args.profile
    merged = dict(file_values)
    for key in ("epochs", "batch_size", "lr", "alpha", "beta", "seed",
                "no_node_loss", "no_data_aug", "no_node_init", "no_corg"):
        flag = getattr(args, key)
        if flag is not None:
            merged[key] = flag
    return TrainConfig(**merged), profile


def cmd_train(args, workdir: Path) -> int:
    from . import checkpoint as ckpt_mod
    from .model import ModelConfig
    from .training import save_epoch_logs, train

    graph = kg_mod.load_graph(_resolve(workdir, args.nodes), _resolve(workdir, args.edges))
    data_dir = _resolve(workdir, args.data)
    datasets = tuple(
        corpus_mod.load_triplets(data_dir / f"{split}.jsonl") for split in ("train", "valid", "test")
    )
    config, profile = _load_train_config(args, workdir)
    model_config = None if profile == "desk" else ModelConfig.for_profile(profile, vocab_size=0)
    result = train(config, model_config, datasets, graph, progress=True)

    out = _resolve(workdir, args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_epoch_logs(result.logs, out / "epoch_log.jsonl")
    ckpt_mod.save_checkpoint(out / "final", result.bundle)
    if result.best_state is not None:
        ckpt_mod.save_checkpoint(out / "best", result.bundle,
                                 seq2seq_state=result.best_state[0],
                                 graph_state=result.best_state[1])
    print(f"trained {len(result.logs)} epochs; checkpoints in {out}")
    if result.diverged:
        print("training diverged; last good checkpoint kept", file=sys.stderr)
        return 3
    return 0


def cmd_eval(args, workdir: Path) -> int:
    from . import checkpoint as ckpt_mod
    from .metrics import evaluate

    graph = kg_mod.load_graph(_resolve(workdir, args.nodes), _resolve(workdir, args.edges))
    bundle = ckpt_mod.load_checkpoint(_resolve(workdir, args.checkpoint), graph)
    data_path = _resolve(workdir, args.data)
    if data_path.is_dir():
        data_path = data_path / "test.jsonl"
    triplets = corpus_mod.load_triplets(data_path)
    k_list = tuple(int(x) for x in args.k.split(","))
    report = evaluate(bundle, triplets, k_list=k_list)
    print(report.to_table())
    if args.out:
        _resolve(workdir, args.out).write_text(report.to_json(), encoding="utf-8")
    return 0


def cmd_plot(args, workdir: Path) -> int:
    from .training import load_epoch_logs

    logs = load_epoch_logs(_resolve(workdir, args.log))
    out = _resolve(workdir, args.out)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("epoch,val_recall_at_5,val_rec_loss\n")
        for entry in logs:
            r5 = "" if entry.val_recall_at_5 is None else f"{entry.val_recall_at_5:.6f}"
            rl = "" if entry.val_rec_loss is None else f"{entry.val_rec_loss:.6f}"
            fh.write(f"{entry.epoch},{r5},{rl}\n")
    if args.png:
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            log.warning("matplotlib not installed; skipping image render")
        else:
            fig, axes = plt.subplots(1, 2, figsize=(10, 4))
            epochs = [e.epoch for e in logs]
            axes[0].plot(epochs, [e.val_recall_at_5 for e in logs], marker="o")
            axes[0].set_xlabel("epoch")
            axes[0].set_ylabel("validation R@5")
            axes[1].plot(epochs, [e.val_rec_loss for e in logs], marker="o", color="tab:red")
            axes[1].set_xlabel("epoch")
            axes[1].set_ylabel("validation rec loss")
            fig.tight_layout()
            fig.savefig(_resolve(workdir, args.png))
    print(f"wrote {len(logs)} points to {out}")
    return 0


def _load_bundle(args, workdir: Path):
    from . import checkpoint as ckpt_mod

    graph = kg_mod.load_graph(_resolve(workdir, args.nodes), _resolve(workdir, args.edges))
    ckpt_dir = _resolve(workdir, args.checkpoint)
    bundle = ckpt_mod.load_checkpoint(ckpt_dir, graph)
    return bundle, ckpt_mod.checkpoint_hash(ckpt_dir)


def cmd_serve(args, workdir: Path) -> int:
    import uvicorn

    from .service import create_app

    bundle, digest = _load_bundle(args, workdir)
    app = create_app(bundle, checkpoint_digest=digest, allow_cors=args.cors)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_chat(args, workdir: Path) -> int:
    bundle, digest = _load_bundle(args, workdir)
    history: list[corpus_mod.Utterance] = []
    print(f"loaded checkpoint {digest[:12]} | /reset clears, /quit exits")
    while True:
        try:
            line = input("you> ").strip()
        except EOFError:
            break
        if not line:
            continue
        if line == "/quit":
            break
        if line == "/reset":
            history.clear()
            print("(transcript cleared)")
            continue
        history.append(corpus_mod.Utterance(speaker="seeker", text=line))
        result = bundle.respond(history, top_k=args.top_k)
        print(f"bot> {result['filled_response']}")
        for i, rec in enumerate(result["recommendations"], start=1):
            year = f" ({rec['year']})" if rec["year"] is not None else ""
            print(f"     {i}. {rec['name']}{year}  p={rec['score']:.3f}")
        history.append(corpus_mod.Utterance(speaker="recommender", text=result["filled_response"]))
    return 0


_COMMANDS = {
    "make-demo": cmd_make_demo,
    "build-kg": cmd_build_kg,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "plot": cmd_plot,
    "serve": cmd_serve,
    "chat": cmd_chat,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("CONVREC_LOG", "WARNING").upper())
    parser = _build_parser()
    args = parser.parse_args(argv)
    workdir = Path(args.workdir)
    try:
        return _COMMANDS[args.command](args, workdir)
    except ConvRecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
