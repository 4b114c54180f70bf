"""Command-line entry point: ``semgraph-reg <subcommand>``.

Run directories use a fixed layout: ``configs/``, ``graphs/``, ``checkpoints/``,
``poses/`` and ``reports/``.
"""

from __future__ import annotations

import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import diffcore as dc
from .config import RunConfig, load_config
from .data_io import (
    PoseSE3,
    camera_poses_to_lidar,
    read_calib_tr,
    read_poses,
    relative_pose,
    remap_labels,
    write_poses,
)
from .dataset import ScanPair, load_dataset, read_scan, synthetic_dataset, write_dataset
from .errors import ContractViolation, DegenerateGeometryError, DegenerateWeightsError, MissingInputError, SemGraphError, UsageError
from .evaluate import aggregate_attention, export_heatmap, export_series, score_pose, smoothness, write_metrics_json
from .graph import edge_count_report, write_cross_graph
from .model import SemGatConfig, forward, init_params
from .pipeline import build_pair_graph
from .training import PairSample, estimate_pose, extract_gt_matches, split_dataset, train

log = logging.getLogger("semgraph_reg")

RUN_DIRS = ("configs", "graphs", "checkpoints", "poses", "reports")


def run_dirs(out) -> dict:
    out = Path(out)
    dirs = {name: out / name for name in RUN_DIRS}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def echo_config(cfg: RunConfig, dirs, name):
    cfg.dump(dirs["configs"] / f"{name}.yaml")


def _graph_job(args):
    pair, cfg, mode = args
    return build_pair_graph(pair.scan_k, pair.scan_l, cfg.features, cfg.graph, mode, cfg.label_map())


def build_graphs(pairs, cfg: RunConfig, mode):
    """Graphs in pair order; ``cfg.jobs`` worker processes unless deterministic mode is on."""
    jobs = [(p, cfg, mode) for p in pairs]
    if cfg.deterministic or cfg.jobs == 1 or len(jobs) < 2:
        return [_graph_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(_graph_job, jobs))


def select_split(pairs, cfg: RunConfig, split):
    if split == "all":
        return list(pairs)
    train_set, val_set = split_dataset(list(pairs), cfg.train.val_fraction, cfg.train.seed)
    return train_set if split == "train" else val_set


def load_model(path):
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"checkpoint not found: {path}")
    params, extra = dc.load_checkpoint(path)
    model_cfg = SemGatConfig(**extra["model"]) if "model" in extra else SemGatConfig()
    model_cfg.validate()
    expect = {name: p.data.shape for name, p in init_params(model_cfg)}
    got = {name: p.data.shape for name, p in params}
    if expect != got:
        bad = sorted(n for n in expect.keys() | got.keys() if expect.get(n) != got.get(n))
        raise ContractViolation(f"{path}: parameters do not fit the stored model config (first mismatch: {bad[0]})")
    return params, model_cfg


# --------------------------------------------------------------------------- click plumbing


class Ctx:
    def __init__(self, config, overrides, jobs, deterministic):
        extra = list(overrides)
        if jobs is not None:
            extra.append(f"jobs={jobs}")
        if deterministic is not None:
            extra.append(f"deterministic={'true' if deterministic else 'false'}")
        self.config_path = config
        self.overrides = extra

    def config(self, more=()) -> RunConfig:
        return load_config(self.config_path, [*self.overrides, *more])


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__)
@click.option("--config", "config", type=click.Path(dir_okay=False), default=None,
              help="YAML run config (default: $SEMGRAPH_REG_CONFIG, then built-in defaults).")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override a config field, e.g. --set train.epochs=5 (repeatable).")
@click.option("--jobs", type=int, default=None, help="Worker processes for graph building.")
@click.option("--deterministic/--no-deterministic", default=None,
              help="Force single-worker execution for bit-reproducible outputs (default on).")
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug logging.")
@click.pass_context
def main(ctx, config, overrides, jobs, deterministic, verbose):
    """Semantic graph attention registration of lidar scan pairs."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = Ctx(config, overrides, jobs, deterministic)


@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Dataset directory to create.")
@click.option("--pairs", "n_pairs", type=int, default=20, show_default=True, help="Number of scan pairs.")
@click.option("--seed", type=int, default=None, help="Scene seed (overrides scene.seed).")
@click.pass_obj
def synth(obj, out, n_pairs, seed):
    """Write a synthetic labelled dataset (pair i uses seed scene.seed + i)."""
    cfg = obj.config([f"scene.seed={seed}"] if seed is not None else [])
    if n_pairs < 1:
        raise UsageError("--pairs must be >= 1")
    write_dataset(out, synthetic_dataset(cfg.scene, n_pairs))
    dirs = {"configs": Path(out) / "configs"}
    dirs["configs"].mkdir(exist_ok=True)
    echo_config(cfg, dirs, "synth")
    click.echo(f"wrote {n_pairs} pairs to {out}")


@main.command()
@click.option("--sequence", required=True, type=click.Path(file_okay=False),
              help="SemanticKITTI sequence directory (velodyne/, labels/, poses.txt).")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Dataset directory to create.")
@click.option("--calib", type=click.Path(dir_okay=False), default=None,
              help="calib.txt whose Tr entry converts camera-frame poses to the lidar frame.")
@click.option("--start", type=int, default=0, show_default=True)
@click.option("--count", type=int, default=None, help="Number of consecutive pairs (default: all).")
@click.pass_obj
def ingest(obj, sequence, out, calib, start, count):
    """Validate a SemanticKITTI sequence and convert it to consecutive-scan pairs."""
    seq = Path(sequence)
    cfg = obj.config()
    poses_path = seq / "poses.txt"
    if not poses_path.is_file():
        raise MissingInputError(f"missing {poses_path}")
    poses = read_poses(poses_path)
    if calib:
        poses = camera_poses_to_lidar(poses, read_calib_tr(calib))
    stop = len(poses) - 1 if count is None else min(len(poses) - 1, start + count)
    if stop <= start:
        raise UsageError("sequence has fewer than two scans in the requested range")
    pairs = []
    for i in range(start, stop):
        k, l = read_scan(seq, i), read_scan(seq, i + 1)
        for s in (k, l):
            if cfg.apply_label_map:
                # raises on ids outside the taxonomy
                remap_labels(s, cfg.labels.dynamic_to_static, cfg.labels.discard, cfg.labels.static_ids)
        pairs.append(ScanPair(f"{i:06d}", k, l, relative_pose(poses[i], poses[i + 1])))
    write_dataset(out, pairs)
    click.echo(f"ingested {len(pairs)} pairs into {out}")


@main.command("build-graph")
@click.option("--data", required=True, type=click.Path(file_okay=False), help="Dataset directory.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Run directory.")
@click.option("--mode", type=click.Choice(["infer", "train"]), default="infer", show_default=True,
              help="Cross-edge threshold: graph.infer_thresh or graph.train_thresh.")
@click.pass_obj
def build_graph(obj, data, out, mode):
    """Serialize pruned cross-graphs and write the edge-count report."""
    cfg = obj.config()
    dirs = run_dirs(out)
    echo_config(cfg, dirs, "build-graph")
    pairs = load_dataset(data)
    graphs = build_graphs(pairs, cfg, mode)
    cols = ["nodes_k", "nodes_l", "edges_k", "edges_l", "edges_cross", "edges_total", "fc_reference", "ratio"]
    lines = ["pair\t" + "\t".join(cols)]
    for p, cg in zip(pairs, graphs):
        write_cross_graph(dirs["graphs"] / f"{p.pair_id}.graph", cg)
        rep = edge_count_report(cg)
        lines.append(p.pair_id + "\t" + "\t".join(str(rep[c]) for c in cols))
    (dirs["reports"] / "edge_counts.tsv").write_text("\n".join(lines) + "\n")
    click.echo(f"wrote {len(graphs)} graphs to {dirs['graphs']}")


def make_samples(pairs, cfg: RunConfig):
    missing = [p.pair_id for p in pairs if p.gt is None]
    if missing:
        raise MissingInputError(f"ground-truth poses required for pairs {missing[:3]}...")
    train_graphs = build_graphs(pairs, cfg, "train")
    eval_graphs = build_graphs(pairs, cfg, "infer")
    return [PairSample(p.pair_id, tg, eg, p.gt) for p, tg, eg in zip(pairs, train_graphs, eval_graphs)]


@main.command("train")
@click.option("--data", required=True, type=click.Path(file_okay=False), help="Dataset directory with gt_poses.txt.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Run directory.")
@click.pass_obj
def train_cmd(obj, data, out):
    """Train on the 80/20 split; writes checkpoints/best.ckpt and reports/metrics.tsv."""
    cfg = obj.config()
    dirs = run_dirs(out)
    echo_config(cfg, dirs, "train")
    samples = make_samples(load_dataset(data, require_gt=True), cfg)
    result = train(samples, cfg.train, cfg.model, out_dir=dirs["checkpoints"])
    (dirs["checkpoints"] / "metrics.tsv").replace(dirs["reports"] / "metrics.tsv")
    if not (dirs["checkpoints"] / "best.ckpt").exists():
        dc.save_checkpoint(dirs["checkpoints"] / "best.ckpt", result.params,
                           {"epoch": result.best_epoch, "model": cfg.model.to_dict()})
    click.echo(f"best epoch {result.best_epoch} val_total {result.best_val:.6g}; {result.steps} optimizer steps")


def infer_poses(pairs, graphs, cfg: RunConfig, params=None, model_cfg=None, gt_weights=False):
    """Predicted pose per pair; pairs that cannot be solved fall back to identity (flagged)."""
    preds, degenerate = [], []
    for p, cg in zip(pairs, graphs):
        try:
            if gt_weights:
                if p.gt is None:
                    raise MissingInputError(f"--gt-weights needs ground truth for pair {p.pair_id}")
                labels = extract_gt_matches(cg, p.gt, cfg.train.gt_radius).labels
                pose = estimate_pose(cg, labels.astype(np.float64), cfg.train.weighted_centroids,
                                     edges=np.flatnonzero(labels))
            else:
                w = forward(cg, params, model_cfg, training=False).weights.data
                pose = estimate_pose(cg, w, cfg.train.weighted_centroids)
            preds.append(pose)
            degenerate.append(False)
        except (DegenerateGeometryError, DegenerateWeightsError) as exc:
            log.warning("pair %s: %s; identity used", p.pair_id, exc)
            preds.append(PoseSE3.identity())
            degenerate.append(True)
    return preds, degenerate


@main.command()
@click.option("--data", required=True, type=click.Path(file_okay=False), help="Dataset directory.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Run directory.")
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None, help="Trained parameters.")
@click.option("--gt-weights", is_flag=True,
              help="Bypass the network: weight ground-truth matches 1 and solve the pose from them.")
@click.option("--split", type=click.Choice(["all", "train", "val"]), default="all", show_default=True)
@click.pass_obj
def infer(obj, data, out, checkpoint, gt_weights, split):
    """Estimate poses; writes poses/pred_poses.txt, poses/pairs.txt and poses/degenerate.txt."""
    cfg = obj.config()
    if not gt_weights and checkpoint is None:
        raise UsageError("infer needs --checkpoint (or --gt-weights)")
    dirs = run_dirs(out)
    echo_config(cfg, dirs, "infer")
    pairs = select_split(load_dataset(data, require_gt=gt_weights), cfg, split)
    params, model_cfg = load_model(checkpoint) if not gt_weights else (None, None)
    graphs = build_graphs(pairs, cfg, "infer")
    preds, degenerate = infer_poses(pairs, graphs, cfg, params, model_cfg, gt_weights)
    write_poses(dirs["poses"] / "pred_poses.txt", preds)
    (dirs["poses"] / "pair_ids.txt").write_text("".join(f"{p.pair_id}\n" for p in pairs))
    (dirs["poses"] / "degenerate.txt").write_text("".join(f"{p.pair_id}\n" for p, d in zip(pairs, degenerate) if d))
    click.echo(f"wrote {len(preds)} poses to {dirs['poses'] / 'pred_poses.txt'}")


@main.command("eval")
@click.option("--data", required=True, type=click.Path(file_okay=False), help="Dataset directory with gt_poses.txt.")
@click.option("--poses", "poses_path", required=True, type=click.Path(dir_okay=False),
              help="Predicted poses, one line per evaluated pair.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Run directory.")
@click.pass_obj
def eval_cmd(obj, data, poses_path, out):
    """Score predictions; writes reports/metrics.json and reports/series.tsv."""
    cfg = obj.config()
    dirs = run_dirs(out)
    all_pairs = load_dataset(data, require_gt=True)
    if not Path(poses_path).is_file():
        raise MissingInputError(f"missing {poses_path}")
    preds = read_poses(poses_path)
    ids_path = Path(poses_path).with_name("pair_ids.txt")
    if ids_path.is_file():
        wanted = ids_path.read_text().split()
        by_id = {p.pair_id: p for p in all_pairs}
        unknown = [i for i in wanted if i not in by_id]
        if unknown:
            raise UsageError(f"pair ids {unknown[:3]} are not in {data}")
        pairs = [by_id[i] for i in wanted]
    else:
        pairs = all_pairs
    if len(preds) != len(pairs):
        raise UsageError(f"{len(preds)} predicted poses for {len(pairs)} pairs")
    deg_path = Path(poses_path).with_name("degenerate.txt")
    degenerate = set(deg_path.read_text().split()) if deg_path.is_file() else set()
    results = [
        score_pose(pr, p.gt, cfg.eval.success_rte, cfg.eval.success_rre, p.pair_id in degenerate)
        for pr, p in zip(preds, pairs)
    ]
    summary = write_metrics_json(
        dirs["reports"] / "metrics.json", results, [p.pair_id for p in pairs],
        extra={"smoothness_std_of_differences": {"pred": smoothness(preds), "gt": smoothness([p.gt for p in pairs])}},
    )
    export_series(preds, [p.gt for p in pairs], dirs["reports"] / "series.tsv")
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"
    click.echo(f"RR {summary.recall:.1f}% ({summary.n_success}/{summary.n_total}) "
               f"RTE {fmt(summary.mean_rte)} m RRE {fmt(summary.mean_rre)} deg")


@main.command()
@click.option("--data", required=True, type=click.Path(file_okay=False), help="Dataset directory.")
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False), help="Trained parameters.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Run directory.")
@click.option("--heatmaps", type=int, default=3, show_default=True, help="Heatmap PLYs for the first N pairs.")
@click.option("--side", type=click.Choice(["l", "k", "both"]), default="l", show_default=True)
@click.option("--split", type=click.Choice(["all", "train", "val"]), default="all", show_default=True)
@click.pass_obj
def explain(obj, data, checkpoint, out, heatmaps, side, split):
    """Attention by semantic and geometric class (reports/attention.tsv) plus heatmaps."""
    cfg = obj.config()
    dirs = run_dirs(out)
    echo_config(cfg, dirs, "explain")
    params, model_cfg = load_model(checkpoint)
    pairs = select_split(load_dataset(data), cfg, split)
    graphs = build_graphs(pairs, cfg, "infer")
    scored = [(cg, forward(cg, params, model_cfg, training=False).weights.data) for cg in graphs]
    report = aggregate_attention(scored)
    (dirs["reports"] / "attention.tsv").write_text(report.to_tsv(cfg.labels.names))
    for p, (cg, w) in list(zip(pairs, scored))[: max(heatmaps, 0)]:
        export_heatmap(cg, w, dirs["reports"] / f"heatmap_{p.pair_id}.ply", side=side)
    click.echo(report.to_tsv(cfg.labels.names), nl=False)


def run(argv=None):
    """Console entry point: one-line diagnostics and distinct exit codes."""
    try:
        main.main(args=argv, prog_name="semgraph-reg", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 130
    except click.ClickException as exc:
        exc.show()
        return 2
    except SemGraphError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        click.echo(f"error: {exc}", err=True)
        return MissingInputError.exit_code
    return 0


def entry():
    sys.exit(run())


if __name__ == "__main__":
    entry()
