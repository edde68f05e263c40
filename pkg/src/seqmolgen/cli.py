"""Command-line pipeline: ingest, prep, train, generate, evaluate, inspect.

Every command reads one YAML config document (``--config``); command-line
flags override its values. All artifacts of a run live in one work directory
and each command records a manifest with the effective config, its hash, the
seed and the artifact format versions. No timestamps are written, so equal
configs give byte-identical outputs.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import chem, evaluator, generator, gnn, ingest, modules, sequencer
from .graph import GraphError

log = logging.getLogger("seqmolgen")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
MANIFEST_FORMAT = "seqmolgen-manifest"
PREP_FORMAT = "seqmolgen-prep"
FORMAT_VERSION = 1

DEFAULTS = {
    "mode": "QM9",
    "seed": None,
    "input": None,
    "workdir": None,
    "split": None,
    "batches": 20,
    "modules": {
        "m1": {"preset": "M1-I"},
        "m2": {"preset": "M2-I"},
        "m3": {"preset": "M3-I"},
    },
    "generate": {"n": 1000, "vmax": 29, "tau": 1.0, "traces": True},
}


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# --- config -----------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path: str | None, overrides: dict) -> dict:
    doc: dict = {}
    if path:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except yaml.YAMLError as e:
            raise ConfigError(f"config file is not valid YAML: {e}")
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a mapping")
    cfg = _merge(_merge(DEFAULTS, doc), overrides)
    if cfg["seed"] is None:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    cfg["mode"] = str(cfg["mode"]).upper()
    try:
        ingest.Mode(cfg["mode"])
    except ValueError:
        raise ConfigError(f"unknown dataset mode {cfg['mode']!r}")
    if cfg["workdir"] is None:
        env = os.environ.get("SEQMOLGEN_DATA")
        if not env:
            raise ConfigError("no work directory: set 'workdir', --workdir or SEQMOLGEN_DATA")
        cfg["workdir"] = env
    return cfg


def recorded_config(cfg: dict) -> dict:
    """The config as written to artifacts: the work directory is where a run
    lives, not part of what it computes, so it is left out."""
    return {k: v for k, v in cfg.items() if k != "workdir"}


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(ingest.dumps(recorded_config(cfg)).encode()).hexdigest()[:16]


def resolve_input(path: str) -> Path:
    p = Path(path)
    if not p.exists() and not p.is_absolute() and os.environ.get("SEQMOLGEN_DATA"):
        p = Path(os.environ["SEQMOLGEN_DATA"]) / path
    if not p.exists():
        raise ConfigError(f"input file not found: {path}")
    return p


def write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_manifest(work: Path, command: str, cfg: dict, artifacts: list[str], **extra) -> None:
    doc = {
        "format": MANIFEST_FORMAT,
        "version": FORMAT_VERSION,
        "command": command,
        "config": recorded_config(cfg),
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "formats": {
            ingest.CACHE_FORMAT: ingest.CACHE_VERSION,
            "seqmolgen-gnn": gnn.CHECKPOINT_VERSION,
            PREP_FORMAT: FORMAT_VERSION,
            generator.TRACE_FORMAT: generator.TRACE_VERSION,
            evaluator.REPORT_FORMAT: evaluator.REPORT_VERSION,
        },
        "artifacts": sorted(artifacts),
        **extra,
    }
    write_atomic(work / f"manifest-{command}.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _stage_rng(cfg: dict, stage: str) -> np.random.Generator:
    """Independent, reproducible stream per pipeline stage."""
    tag = int.from_bytes(hashlib.sha256(stage.encode()).digest()[:4], "little")
    return np.random.default_rng([cfg["seed"], tag])


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing {path.name}; run '{hint}' first")
    return path


def _read_cache(path: Path):
    try:
        return ingest.read_graph_cache(path)
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: {e}")


# --- commands ---------------------------------------------------------------

def _split_sizes(split, n: int) -> ingest.SplitSpec:
    if split is None:
        raise ConfigError("config needs 'split' with train/valid/test sizes")
    sizes = {k: split.get(k) for k in ("train", "valid", "test")}
    missing = [k for k, v in sizes.items() if v is None]
    if len(missing) > 1:
        raise ConfigError("at most one split size may be left empty")
    if missing:
        sizes[missing[0]] = n - sum(v for v in sizes.values() if v is not None)
    if any(v < 0 for v in sizes.values()) or sum(sizes.values()) != n:
        raise DataError(f"split sizes {sizes} do not add up to the {n} accepted molecules")
    return ingest.SplitSpec(sizes["train"], sizes["test"], sizes["valid"], seed=0)


def cmd_ingest(cfg: dict, work: Path) -> list[str]:
    if not cfg["input"]:
        raise ConfigError("ingest needs 'input' (SDF or SMILES file)")
    src = resolve_input(cfg["input"])
    spec = ingest.DatasetSpec.for_mode(cfg["mode"])
    try:
        if src.suffix.lower() in (".sdf", ".mol", ".sd"):
            res = ingest.read_sdf(src, spec)
        else:
            res = ingest.read_smiles_file(src, spec)
    except ingest.ParseError as e:
        raise DataError(f"{src}: {e}")
    if not res.graphs:
        raise DataError(f"{src}: no molecules accepted")
    split = _split_sizes(cfg["split"], len(res.graphs))
    perm = _stage_rng(cfg, "split").permutation(len(res.graphs))
    n_tr, n_va = split.train, split.valid
    parts = {"train": perm[:n_tr], "valid": perm[n_tr:n_tr + n_va], "test": perm[n_tr + n_va:]}
    h = config_hash(cfg)
    ingest.write_graph_cache(work / "dataset.jsonl", res.graphs, spec, config_hash=h)
    for name, idx in parts.items():
        ingest.write_graph_cache(work / f"{name}.jsonl", [res.graphs[k] for k in sorted(idx)], spec,
                                 extra=[{"source_index": int(k)} for k in sorted(idx)],
                                 split=name, config_hash=h)
    ingest.write_jsonl(work / "diagnostics.jsonl", {"format": "seqmolgen-diagnostics", "version": 1,
                                                    "raw_count": res.raw_count,
                                                    "accepted": res.accepted_count},
                       ({"record": d.record, "line": d.line, "reason": d.reason} for d in res.diagnostics))
    print(f"accepted {res.accepted_count} of {res.raw_count} molecules; "
          + ", ".join(f"{k} {len(v)}" for k, v in parts.items()))
    return ["dataset.jsonl", "train.jsonl", "valid.jsonl", "test.jsonl", "diagnostics.jsonl"]


def cmd_prep(cfg: dict, work: Path) -> list[str]:
    spec, train, _ = _read_cache(_need(work / "train.jsonl", "ingest"))
    _, valid, _ = _read_cache(_need(work / "valid.jsonl", "ingest"))
    rng = _stage_rng(cfg, "prep")
    prio = sequencer.type_priority_from_centrality(train, spec.n_vertex_types)
    train_o = [sequencer.reorder(g, prio, rng) for g in train]
    valid_o = [sequencer.reorder(g, prio, rng) for g in valid]
    ts = sequencer.build_training_set(train_o, spec.candidate_edge)
    batches = sequencer.make_batches(ts, min(cfg["batches"], len(train_o)), rng)
    d0 = generator.estimate_d0(train_o, spec.n_vertex_types)
    h = config_hash(cfg)
    ingest.write_graph_cache(work / "train_ordered.jsonl", train_o, spec, config_hash=h)
    ingest.write_graph_cache(work / "valid_ordered.jsonl", valid_o, spec, config_hash=h)
    doc = {
        "format": PREP_FORMAT, "version": FORMAT_VERSION, "config_hash": h, "mode": spec.mode.value,
        "ranks": list(prio.ranks), "centrality": list(prio.centrality),
        "d0": list(d0.probs), "batches": batches,
        "example_counts": {k: len(ts.examples(k)) for k in ("m1", "m2", "m3")},
    }
    write_atomic(work / "prep.json", ingest.dumps(doc) + "\n")
    cent = ", ".join(f"{s} {c:.3f}" for s, c in zip(spec.vertex_symbols, prio.centrality))
    print(f"mean betweenness: {cent}")
    print(f"{len(batches)} batches; examples {doc['example_counts']}")
    return ["train_ordered.jsonl", "valid_ordered.jsonl", "prep.json"]


def _module_config(cfg: dict, kind: str) -> modules.ModuleConfig:
    mc = dict(cfg["modules"].get(kind) or {})
    name = mc.pop("preset", None)
    if name is None:
        raise ConfigError(f"modules.{kind} needs a preset")
    try:
        conf = modules.preset(name, **mc)
    except KeyError as e:
        raise ConfigError(str(e.args[0]))
    except TypeError as e:
        raise ConfigError(f"modules.{kind}: {e}")
    if conf.kind.value != kind:
        raise ConfigError(f"preset {name} is not a {kind} preset")
    if "seed" not in mc:
        conf = conf.with_overrides(seed=int(_stage_rng(cfg, f"train-{kind}").integers(2**31)))
    return conf


def cmd_train(cfg: dict, work: Path, which: str) -> list[str]:
    spec, train_o, _ = _read_cache(_need(work / "train_ordered.jsonl", "prep"))
    _, valid_o, _ = _read_cache(_need(work / "valid_ordered.jsonl", "prep"))
    prep = json.loads(_need(work / "prep.json", "prep").read_text())
    ts = sequencer.build_training_set(train_o, spec.candidate_edge)
    vs = sequencer.build_training_set(valid_o, spec.candidate_edge)
    models_dir = work / "models"
    models_dir.mkdir(exist_ok=True)
    kinds = ["m1", "m2", "m3"] if which == "all" else [which]
    artifacts = []
    for kind in kinds:
        conf = _module_config(cfg, kind)
        batches = [ts.examples(kind, b) for b in prep["batches"]]
        module, tlog = modules.train_module(kind, batches, conf, spec, vs.examples(kind) or None)
        module.model.save(models_dir / f"{kind}.json", module=module.manifest(),
                          config=modules.config_dict(conf), config_hash=config_hash(cfg))
        ingest.write_jsonl(models_dir / f"{kind}.log.jsonl",
                           {"format": "seqmolgen-trainlog", "version": 1, "module": kind,
                            "best_epoch": tlog.best_epoch, "majority_baseline": tlog.majority_baseline,
                            "config_hash": config_hash(cfg)}, tlog.epochs)
        best = max((r.get("valid_accuracy", 0.0) for r in tlog.epochs), default=None)
        print(f"{kind}: {conf.epochs} epochs, best validation accuracy {best}, "
              f"majority baseline {tlog.majority_baseline}")
        artifacts += [f"models/{kind}.json", f"models/{kind}.log.jsonl"]
    return artifacts


def load_modules(work: Path) -> tuple:
    out = []
    for kind in ("m1", "m2", "m3"):
        p = _need(work / "models" / f"{kind}.json", f"train --module {kind}")
        try:
            out.append(modules.TrainedModule.load(p))
        except (KeyError, ValueError, json.JSONDecodeError) as e:
            raise DataError(f"{p}: {e}")
    return tuple(out)


def cmd_generate(cfg: dict, work: Path) -> list[str]:
    gen = cfg["generate"]
    prep = json.loads(_need(work / "prep.json", "prep").read_text())
    spec = ingest.DatasetSpec.for_mode(prep["mode"])
    mods = load_modules(work)
    d0 = generator.SeedDistribution(tuple(prep["d0"]))
    if gen["n"] < 1 or gen["vmax"] < 1 or gen["tau"] <= 0:
        raise ConfigError("generate needs n >= 1, vmax >= 1 and tau > 0")
    out = generator.generate_batch(gen["n"], mods, d0, gen["vmax"], gen["tau"], _stage_rng(cfg, "generate"))
    traces = work / "traces.jsonl" if gen.get("traces", True) else None
    generator.write_generated(work / "generated.jsonl", out, spec, traces,
                              config_hash=config_hash(cfg), vmax=gen["vmax"], tau=gen["tau"])
    done = sum(o.complete for o in out)
    print(f"generated {len(out)} graphs, {done} complete")
    return ["generated.jsonl"] + (["traces.jsonl"] if traces else [])


def read_generated(path: Path) -> tuple[ingest.DatasetSpec, list[generator.GenerationOutcome]]:
    spec, graphs, records = _read_cache(path)
    return spec, [generator.GenerationOutcome(g, bool(r.get("complete", True))) for g, r in zip(graphs, records)]


def cmd_evaluate(cfg: dict, work: Path, generated: str | None) -> list[str]:
    gpath = Path(generated) if generated else _need(work / "generated.jsonl", "generate")
    if not gpath.exists():
        raise ConfigError(f"generated batch not found: {gpath}")
    spec, batch = read_generated(gpath)
    if not batch:
        raise DataError(f"{gpath}: empty batch")
    ref_path = work / "dataset.jsonl"
    reference = _read_cache(ref_path)[1] if ref_path.exists() else []
    rep = evaluator.evaluate(batch, reference, spec)
    doc = rep.to_dict()
    doc["config_hash"] = config_hash(cfg)
    doc["reference_size"] = len(reference)
    doc["connected_fraction"] = evaluator.connected_fraction(batch)
    write_atomic(work / "report.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    artifacts = ["report.json"]
    if rep.descriptors is not None:
        write_atomic(work / "mw_hist.csv", rep.descriptors.mw_hist.to_csv())
        write_atomic(work / "log_mw_hist.csv", rep.descriptors.log_mw_hist.to_csv())
        artifacts += ["mw_hist.csv", "log_mw_hist.csv"]
    print(f"validity {rep.validity:.4f} uniqueness {rep.uniqueness:.4f} novelty {rep.novelty:.4f} "
          f"vun {rep.vun:.4f}" + (" (no valid molecules)" if rep.degenerate else ""))
    if rep.descriptors is not None:
        print(f"molecular weight {rep.descriptors.mw_mean:.1f} ({rep.descriptors.mw_std:.1f})")
    return artifacts


def describe_graph(g, spec: ingest.DatasetSpec) -> str:
    ok, problems = chem.check_valence(g, spec)
    lines = [f"{g.n_vertices} atoms, {g.n_edges} bonds, connected={g.is_connected()}, "
             f"valence {'ok' if ok else 'violated'}"]
    if ok:
        lines.append(f"molecular weight {chem.molecular_weight(g, spec):.3f}")
    names = spec.edge_names + ("candidate",)
    for v, t in enumerate(g.vertex_types):
        nb = ", ".join(f"{u}({names[g.edge_type(v, u)]})" for u in g.neighbors(v))
        lines.append(f"  {v:3d} {spec.vertex_symbols[t]:<2} -> {nb}")
    lines += [f"  ! atom {v}: {why}" for v, why in problems]
    return "\n".join(lines)


def cmd_inspect(path: str, index: int) -> None:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"file not found: {path}")
    header, records = ingest.read_jsonl(p)
    if not 0 <= index < len(records):
        raise ConfigError(f"index {index} out of range (0..{len(records) - 1})")
    rec = records[index]
    if header.get("format") == generator.TRACE_FORMAT:
        for step in rec["trace"]:
            extra = f" target {step['target']}" if "target" in step else ""
            print(f"{step['module']} |V|={step['n_vertices']} focus {step['focus']}{extra} -> {step['decision']}")
        return
    if header.get("format") != ingest.CACHE_FORMAT:
        raise DataError(f"{path}: unknown file format {header.get('format')!r}")
    spec = ingest.DatasetSpec.for_mode(header["mode"])
    g = ingest.graph_from_record(rec)
    if "complete" in rec:
        print(f"complete={rec['complete']}")
    print(describe_graph(g, spec))


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="seqmolgen", description="Sequential molecular graph generation pipeline.")
    ap.add_argument("--config", help="YAML config document")
    ap.add_argument("--workdir", help="run directory (default: config 'workdir' or $SEQMOLGEN_DATA)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("ingest", help="parse a molecule file, split it and cache the graphs")
    p.add_argument("--input")
    p.add_argument("--mode", type=str.upper, choices=[m.value for m in ingest.Mode])
    p.add_argument("--split", help="train,valid,test sizes; one may be '-' for the remainder")
    p = sub.add_parser("prep", help="reorder, decompose and batch the training set")
    p.add_argument("--batches", type=int)
    p = sub.add_parser("train", help="train decision modules")
    p.add_argument("--module", choices=["m1", "m2", "m3", "all"], required=True)
    p.add_argument("--preset")
    p.add_argument("--epochs", type=int)
    p = sub.add_parser("generate", help="generate a batch of molecules")
    p.add_argument("--n", type=int)
    p.add_argument("--vmax", type=int)
    p.add_argument("--tau", type=float)
    p = sub.add_parser("evaluate", help="score a generated batch")
    p.add_argument("--generated", help="generated batch (default: <workdir>/generated.jsonl)")
    p = sub.add_parser("inspect", help="pretty-print one molecule or trace")
    p.add_argument("file")
    p.add_argument("--index", type=int, default=0)
    return ap


def _overrides(args) -> dict:
    o: dict = {}
    for key in ("workdir", "seed", "input", "mode", "batches"):
        if getattr(args, key, None) is not None:
            o[key] = getattr(args, key)
    if getattr(args, "split", None):
        parts = args.split.split(",")
        if len(parts) != 3:
            raise ConfigError("--split takes three comma-separated sizes")
        try:
            o["split"] = {k: None if v.strip() == "-" else int(v)
                          for k, v in zip(("train", "valid", "test"), parts)}
        except ValueError:
            raise ConfigError(f"bad --split value {args.split!r}")
    if args.command == "train" and args.module != "all":
        mc = {}
        if args.preset:
            mc["preset"] = args.preset
        if args.epochs is not None:
            mc["epochs"] = args.epochs
        if mc:
            o["modules"] = {args.module: mc}
    elif args.command == "train" and (args.preset or args.epochs is not None):
        if args.preset:
            raise ConfigError("--preset needs a single --module")
        o["modules"] = {k: {"epochs": args.epochs} for k in ("m1", "m2", "m3")}
    if args.command == "generate":
        g = {k: getattr(args, k) for k in ("n", "vmax", "tau") if getattr(args, k) is not None}
        if g:
            o["generate"] = g
    return o


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "inspect":
            cmd_inspect(args.file, args.index)
            return EXIT_OK
        cfg = load_config(args.config, _overrides(args))
        work = Path(cfg["workdir"])
        work.mkdir(parents=True, exist_ok=True)
        if args.command == "ingest":
            arts = cmd_ingest(cfg, work)
        elif args.command == "prep":
            arts = cmd_prep(cfg, work)
        elif args.command == "train":
            arts = cmd_train(cfg, work, args.module)
        elif args.command == "generate":
            arts = cmd_generate(cfg, work)
        else:
            arts = cmd_evaluate(cfg, work, args.generated)
        command = args.command if args.command != "train" else f"train-{args.module}"
        write_manifest(work, command, cfg, arts)
        return EXIT_OK
    except ConfigError as e:
        print(f"seqmolgen: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ingest.ParseError, GraphError) as e:
        print(f"seqmolgen: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # invariant violations and bugs
        log.debug("internal error", exc_info=True)
        print(f"seqmolgen: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
