"""``belink`` command line: index, link, evaluate, export-training, transfer-matrix.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 total backend failure.
"""

import functools
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import click

from .config import PipelineConfig, build_linker, config_from_dict, load_config
from .evaluation import AnnotatedMention, EvalReport, evaluate, format_table, load_dataset, measure_throughput, transfer_matrix
from .exceptions import BackendError, ContractError, DataError
from .index import load_index, save_index
from .kb import load_kb
from .mocks import ORACLE_BEHAVIORS
from .training import export_training

logger = logging.getLogger("belink")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3

# flag name -> config key
_OVERRIDES = {
    "kb": "kb_path",
    "kb_format": "kb_format",
    "dataset": "dataset_path",
    "index": "index_path",
    "cache": "cache_path",
    "k": "k",
    "alpha": "alpha",
    "genqr": "genqr_enabled",
    "rerank": "rerank_mode",
    "nil_sensitive": "nil_sensitive",
    "threshold": "pointwise_threshold",
    "seed": "seed",
    "max_inflight": "max_inflight",
    "mock_backends": "mock_backends",
}
_MOCK_OVERRIDES = {"oracle": "oracle", "mock_delay": "delay", "mock_dim": "dim", "mock_letter": "letter"}


def pipeline_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML/JSON config file."),
        click.option("--kb", type=click.Path(dir_okay=False), help="Knowledge base file."),
        click.option("--kb-format", type=click.Choice(["jsonl", "two_column_tsv"]), default=None),
        click.option("--dataset", type=click.Path(dir_okay=False), help="Annotated mention JSONL."),
        click.option("--index", type=click.Path(dir_okay=False), help="Index snapshot path."),
        click.option("--cache", type=click.Path(dir_okay=False), help="Embedding cache file."),
        click.option("--k", type=int, default=None, help="Aliases retrieved per mention (default 20)."),
        click.option("--alpha", type=float, default=None, help="Mention weight in the fused query (default 0.6)."),
        click.option("--genqr/--no-genqr", default=None, help="Toggle generative query reformulation."),
        click.option("--rerank", type=click.Choice(["setwise", "pointwise", "none"]), default=None),
        click.option("--nil-sensitive/--plain", "nil_sensitive", default=None,
                     help="Allow NIL predictions instead of forcing a candidate."),
        click.option("--threshold", type=float, default=None, help="Point-wise NIL threshold (default 0.5)."),
        click.option("--seed", type=int, default=None),
        click.option("--max-inflight", type=int, default=None, help="Concurrent backend calls."),
        click.option("--mock-backends", is_flag=True, default=None, help="Use deterministic offline backends."),
        click.option("--oracle", type=click.Choice(ORACLE_BEHAVIORS), default=None, help="Mock LLM behavior."),
        click.option("--mock-delay", type=float, default=None, help="Seconds slept per mock LLM call."),
        click.option("--mock-dim", type=int, default=None),
        click.option("--mock-letter", default=None, help="Answer of the fixed_letter oracle."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)

    @functools.wraps(fn)
    def wrapper(**kwargs):
        config = load_config(kwargs.pop("config_path"))
        overrides: Dict[str, Any] = {}
        mock: Dict[str, Any] = {}
        for flag, key in _OVERRIDES.items():
            if kwargs.get(flag) is not None:
                overrides[key] = kwargs[flag]
        for flag, key in _MOCK_OVERRIDES.items():
            if kwargs.get(flag) is not None:
                mock[key] = kwargs[flag]
        if mock.get("delay") and "oracle" not in mock:
            mock["oracle"] = "delay_injected"
        if mock:
            overrides["mock"] = mock
        for flag in list(_OVERRIDES) + list(_MOCK_OVERRIDES):
            kwargs.pop(flag, None)
        return fn(config=config_from_dict(overrides, config).validate(), **kwargs)

    return wrapper


def _fit_linker(config: PipelineConfig, prefer_snapshot: bool = True):
    linker = build_linker(config)
    if prefer_snapshot and config.index_path and Path(config.index_path).exists():
        linker.fit(load_index(config.index_path))
        if config.kb_path:
            linker.kb_ = load_kb(config.kb_path, config.kb_format)
        return linker
    if not config.kb_path:
        raise click.UsageError("--kb (or an existing --index snapshot) is required")
    return linker.fit(load_kb(config.kb_path, config.kb_format))


def _write(path: Optional[str], text: str) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging on stderr.")
def cli(verbose):
    """Biomedical entity linking: dense retrieval + generative re-ranking."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


@cli.command("index")
@pipeline_options
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None, help="Snapshot path (else --index).")
def cmd_index(config: PipelineConfig, output):
    """Embed the KB aliases and write an index snapshot."""
    out = output or config.index_path
    if not out:
        raise click.UsageError("give the snapshot path with --output or --index")
    linker = _fit_linker(config, prefer_snapshot=False)
    save_index(linker.index_, out)
    Path(str(out) + ".config.json").write_text(_dump(config.to_dict()), encoding="utf-8")
    click.echo(f"indexed {len(linker.index_)} aliases (dim {linker.index_.dim}) -> {out}", err=True)


def _read_mentions(dataset: Optional[str]) -> List[AnnotatedMention]:
    if dataset and dataset != "-":
        return load_dataset(dataset)
    import tempfile

    data = sys.stdin.read()
    with tempfile.NamedTemporaryFile("w", suffix=".jsonl", delete=False, encoding="utf-8") as tmp:
        tmp.write(data)
    try:
        return load_dataset(tmp.name)
    finally:
        Path(tmp.name).unlink()


@cli.command("link")
@pipeline_options
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None, help="Trace JSONL (else stdout).")
def cmd_link(config: PipelineConfig, output):
    """Link mentions from --dataset (or stdin) and emit one JSON trace per mention."""
    mentions = _read_mentions(config.dataset_path)
    if not mentions:
        _write(output, "")
        return
    linker = _fit_linker(config)
    golds = [m.gold for m in mentions] if config.mock_backends else None
    results = linker.link([m.query for m in mentions], golds=golds, n_jobs=config.max_inflight)
    lines = [json.dumps(r.to_trace(config.nil_sensitive), ensure_ascii=False) + "\n" for r in results]
    _write(output, "".join(lines))
    if output:
        Path(str(output) + ".config.json").write_text(_dump(config.to_dict()), encoding="utf-8")
    if config.rerank_mode != "none" and all(r.decision.error for r in results):
        raise BackendError("re-ranker failed for every mention")


@cli.command("evaluate")
@pipeline_options
@click.option("--throughput", is_flag=True, help="Also time a serial, unbatched pass (Q/s).")
@click.option("-o", "--output", default="belink_report", show_default=True,
              help="Path prefix for PREFIX.json and PREFIX.txt.")
def cmd_evaluate(config: PipelineConfig, throughput, output):
    """Acc@1, NIL-sensitive Acc@1, paired t-test vs the top-1 baseline, optional throughput."""
    if not config.dataset_path:
        raise click.UsageError("--dataset is required")
    mentions = load_dataset(config.dataset_path)
    if not mentions:
        raise DataError("dataset is empty", path=config.dataset_path)
    linker = _fit_linker(config)
    report = evaluate(linker, mentions, n_jobs=config.max_inflight, config=config.to_dict())
    if config.rerank_mode != "none" and all(o.decision.error for o in report.outcomes):
        raise BackendError("re-ranker failed for every mention")
    if throughput:
        report.throughput_qps = measure_throughput(linker, mentions, warmup=config.throughput_warmup)
    _write(output + ".json", report.to_json())
    table = format_table(report, label=f"{config.rerank_mode}")
    _write(output + ".txt", table)
    click.echo(table, nl=False)


@cli.command("export-training")
@pipeline_options
@click.option("--shuffle/--no-shuffle", default=True, show_default=True, help="Shuffle option order.")
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True, help="Training JSONL path.")
def cmd_export_training(config: PipelineConfig, shuffle, output):
    """Write chat-format training examples with sampled aliases and gold letters."""
    if not config.dataset_path:
        raise click.UsageError("--dataset is required")
    mentions = load_dataset(config.dataset_path)
    linker = _fit_linker(config)
    export = export_training(linker, mentions, seed=config.seed, shuffle=shuffle)
    _write(output, export.to_jsonl())
    meta = {"config": config.to_dict(), "n": len(export.records), "n_nil": export.n_nil,
            "gold_not_retrieved": export.gold_not_retrieved, "shuffle": shuffle}
    Path(str(output) + ".meta.json").write_text(_dump(meta), encoding="utf-8")
    click.echo(f"wrote {len(export.records)} examples ({len(export.gold_not_retrieved)} gold not retrieved)",
               err=True)


@cli.command("transfer-matrix")
@click.option("--run", "runs", nargs=3, multiple=True, required=True, metavar="SRC TRG REPORT",
              help="Evaluation report for a model tuned on SRC and tested on TRG.")
@click.option("-o", "--output", default=None, help="Prefix for PREFIX.acc.csv, PREFIX.delta.csv, PREFIX.pvalues.csv.")
def cmd_transfer_matrix(runs, output):
    """Cross-domain Acc@1 matrix with significance against each target's diagonal cell."""
    reports = {}
    for src, trg, path in runs:
        try:
            reports[(src, trg)] = EvalReport.load(path)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise DataError(f"cannot read report: {exc}", path=path) from None
    tm = transfer_matrix(reports)
    if output:
        _write(output + ".acc.csv", tm.acc_csv())
        _write(output + ".delta.csv", tm.delta_csv())
        _write(output + ".pvalues.csv", tm.p_value_csv())
    click.echo(tm.acc_csv(), nl=False)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cli.main(args=argv, prog_name="belink", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except BackendError as exc:
        click.echo(f"backend failure: {exc}", err=True)
        return EXIT_BACKEND
    except (ContractError, ValueError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
