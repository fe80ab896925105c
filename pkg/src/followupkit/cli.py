"""Command-line interface: one binary, one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage or configuration problem, 2 data validation
problem, 3 provider failure. Every command writes a RunManifest with content
digests of what it read and wrote. Secrets never ride on flags: provider
credentials come from the environment variable named in the gateway config.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from . import augmentor, corpus, grammarfilter, infogain, metrics, prompts
from .annotation.store import AnnotationStore
from .gateway import (
    Gateway,
    GatewayConfig,
    GatewayError,
    MockProvider,
    load_mock_script,
)
from .manifest import RunManifest, file_digest
from .tables import fmt, render_table

logger = logging.getLogger("followupkit")


@dataclass
class CliContext:
    config_path: str | None = None
    jobs: int = 1
    seed: int = 0
    mock_path: str | None = None
    strict: bool = False
    verbose: bool = False

    def gateway_config(self) -> GatewayConfig:
        if self.config_path:
            return GatewayConfig.from_file(self.config_path)
        return GatewayConfig()

    def build_gateway(self, out_dir: Path | None = None, need_endpoint: bool = True) -> Gateway:
        """Mock provider if --mock was given, otherwise the configured endpoint.

        Mock runs skip the disk response cache: the script is an ordered,
        consumable resource and replaying a partial exchange from the fresh
        script is what keeps resumed runs deterministic.
        """
        config = self.gateway_config()
        transcript = out_dir / "transcript.jsonl" if out_dir else None
        if self.mock_path:
            provider = MockProvider(load_mock_script(self.mock_path))
            return Gateway.from_config(config, provider, transcript_path=transcript)
        if not config.endpoint:
            if need_endpoint:
                raise click.UsageError(
                    "no provider: pass --mock SCRIPT or a --config with an endpoint"
                )
            logger.info("no provider configured; using the deterministic offline embedder")
            return Gateway.from_config(config, MockProvider([]), transcript_path=transcript)
        cache = out_dir / "cache" if out_dir else None
        return Gateway.from_config(
            config, cache_dir=cache, transcript_path=transcript
        )

    def settings(self) -> dict:
        return {
            "config": self.config_path,
            "config_digest": file_digest(self.config_path) if self.config_path else None,
            "jobs": self.jobs,
            "seed": self.seed,
            "mock": self.mock_path,
            "strict": self.strict,
        }


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Gateway config JSON (endpoint, models, limits).")
@click.option("--jobs", default=1, show_default=True, help="Parallel exchanges for augment.")
@click.option("--seed", default=0, show_default=True, help="Seed for sampling commands.")
@click.option("--mock", "mock_path", type=click.Path(exists=True), default=None,
              help="Scripted mock provider instead of the network.")
@click.option("--strict", is_flag=True, help="Treat recoverable anomalies as fatal.")
@click.option("--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def cli(ctx, config_path, jobs, seed, mock_path, strict, verbose):
    """Follow-up question dataset toolkit."""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if jobs < 1:
        raise click.UsageError("--jobs must be >= 1")
    ctx.obj = CliContext(config_path, jobs, seed, mock_path, strict, verbose)


def _json_dump(obj, path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def _round_floats(obj, places: int = 6):
    if isinstance(obj, float):
        return round(obj, places)
    if isinstance(obj, dict):
        return {k: _round_floats(v, places) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, places) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# clean
# ---------------------------------------------------------------------------


@cli.command("clean")
@click.argument("input_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path(), help="Cleaned triplets JSONL.")
@click.option("--report", "report_path", required=True, type=click.Path(), help="Cleaning report JSON.")
@click.option("--dup-out", type=click.Path(), default=None, help="Removed duplicate ids, one per line.")
@click.option("--quality-list", "quality_lists", multiple=True, type=click.Path(exists=True))
@click.option("--sensitive-list", "sensitive_lists", multiple=True, type=click.Path(exists=True))
@click.pass_obj
def cmd_clean(ctx: CliContext, input_path, out_path, report_path, dup_out, quality_lists, sensitive_lists):
    """Deduplicate a triplets file and apply removal lists."""
    manifest = RunManifest("clean", ctx.settings())
    manifest.add_input(input_path)
    dataset = corpus.load_dataset(input_path, "triplets")
    quality_ids: list[str] = []
    for p in quality_lists:
        manifest.add_input(p)
        quality_ids.extend(corpus.load_removal_list(p))
    sensitive_ids: list[str] = []
    for p in sensitive_lists:
        manifest.add_input(p)
        sensitive_ids.extend(corpus.load_removal_list(p))

    cleaned, report = corpus.clean_dataset(dataset, quality_ids, sensitive_ids)
    out_path = Path(out_path)
    corpus.serialize(cleaned, out_path)
    _json_dump(report.to_dict(), Path(report_path))
    if dup_out:
        dup_ids = [rid for rid, reason in report.removed_ids if reason == "duplicate"]
        Path(dup_out).write_text("\n".join(dup_ids) + ("\n" if dup_ids else ""), encoding="utf-8")

    stats = corpus.stats(cleaned)
    click.echo(render_table(
        ["stage", "count"],
        [
            ["input", report.input_count],
            ["duplicates removed", report.duplicates_removed],
            ["quality removed", report.quality_removed],
            ["sensitive removed", report.sensitive_removed],
            ["retained", report.retained],
        ],
        title="Cleaning",
    ))
    click.echo(render_table(
        ["triplets", "unique pairs", "mean FQs per pair"],
        [[stats.triplet_count, stats.unique_pair_count, fmt(stats.fq_per_pair_mean, 4)]],
        title="Cleaned corpus",
    ))
    manifest.add_output(out_path)
    manifest.add_output(report_path)
    if dup_out:
        manifest.add_output(dup_out)
    manifest.write(Path(str(out_path) + ".manifest.json"))


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------


@cli.command("augment")
@click.argument("exchanges_path", type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path(), help="Output directory.")
@click.option("--perspectives", default=3, show_default=True, help="Perspective answers per exchange.")
@click.option("--max-candidates", default=15, show_default=True, help="Candidate cap per exchange.")
@click.option("--no-validate", is_flag=True, help="Skip the three-judge candidate validation.")
@click.option("--templates", "templates_path", type=click.Path(exists=True), default=None,
              help="JSON overrides for prompt templates.")
@click.option("--resume/--fresh", default=True, show_default=True,
              help="Skip exchanges already in the checkpoint.")
@click.pass_obj
def cmd_augment(ctx: CliContext, exchanges_path, out_dir, perspectives, max_candidates,
                no_validate, templates_path, resume):
    """Run the teacher pipeline over an exchanges file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("augment", ctx.settings())
    manifest.add_input(exchanges_path)
    if templates_path:
        manifest.add_input(templates_path)

    exchanges = corpus.load_dataset(exchanges_path, "exchanges")
    config = augmentor.AugmentationConfig(
        num_perspectives=perspectives,
        max_candidates_per_exchange=max_candidates,
        validate_candidates=not no_validate,
        prompt_templates=prompts.load_templates(templates_path),
    )
    gw = ctx.build_gateway(out_dir=out)
    result = augmentor.augment_dataset(
        exchanges,
        config,
        gw,
        checkpoint_path=out / "checkpoint.jsonl",
        resume=resume,
        strict=ctx.strict,
        jobs=ctx.jobs,
    )

    synthetic_path = out / "synthetic.jsonl"
    corpus.serialize(result.synthetic, synthetic_path)
    ca_path = out / "ca_store.jsonl"
    augmentor.write_ca_store(result.ca_store, ca_path)
    report_json = out / "report.json"
    _json_dump(result.report.to_dict(), report_json)
    report_csv = out / "report.csv"
    report_csv.write_text(result.report.to_csv(), encoding="utf-8")

    totals = result.report.totals
    click.echo(render_table(
        ["exchanges", "completed", "failed", "candidates", "accepted", "refusals"],
        [[totals["exchanges"], totals["completed"], totals["failed"],
          totals["candidates"], totals["accepted"], totals["refusals"]]],
        title="Augmentation",
    ))
    for path in (synthetic_path, ca_path, report_json, report_csv):
        manifest.add_output(path)
    manifest.write(out / "manifest.json")


# ---------------------------------------------------------------------------
# filter
# ---------------------------------------------------------------------------


def _load_pair_map(path: str, from_triplets: bool) -> dict[str, tuple[str, str]]:
    if from_triplets:
        return corpus.load_dataset(path, "triplets").pair_map()
    return corpus.load_dataset(path, "exchanges").pair_map()


@cli.command("filter")
@click.argument("generations_path", type=click.Path(exists=True))
@click.option("--exchanges", "exchanges_path", required=True, type=click.Path(exists=True),
              help="Exchange text for the duplicated-span clause.")
@click.option("--from-triplets", is_flag=True, help="The --exchanges file is a triplets file.")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--ngram-n", default=8, show_default=True, help="Window size for duplicated spans.")
@click.option("--invalid-token", "invalid_tokens", multiple=True,
              help="Override the invalid-token list (repeatable).")
@click.pass_obj
def cmd_filter(ctx: CliContext, generations_path, exchanges_path, from_triplets, out_dir,
               ngram_n, invalid_tokens):
    """Grammar-filter a generations file and summarize per model."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("filter", ctx.settings())
    manifest.add_input(generations_path)
    manifest.add_input(exchanges_path)

    gens = corpus.load_dataset(generations_path, "generations")
    pair_map = _load_pair_map(exchanges_path, from_triplets)
    config = grammarfilter.FilterConfig(
        invalid_tokens=tuple(invalid_tokens) if invalid_tokens else ("<QUS>", "<EQT>"),
        dup_ngram_n=ngram_n,
    )
    report = grammarfilter.filter_report(gens.records, pair_map, config)

    verdicts_path = out / "verdicts.jsonl"
    with verdicts_path.open("w", encoding="utf-8") as fh:
        for v in report.verdicts:
            fh.write(json.dumps(v, ensure_ascii=False) + "\n")
    summary_path = out / "filter_summary.json"
    _json_dump(report.to_dict(), summary_path)

    click.echo(render_table(
        ["model", "FQs", "ungrammatical", "% ungrammatical"],
        [[r.model, r.total, r.ungrammatical, fmt(r.pct_ungrammatical)] for r in report.rows],
        title="Grammar filter",
    ))
    manifest.add_output(verdicts_path)
    manifest.add_output(summary_path)
    manifest.write(out / "manifest.json")


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


@cli.command("eval")
@click.argument("generations_path", type=click.Path(exists=True))
@click.option("--references", "references_path", required=True, type=click.Path(exists=True),
              help="Triplets file with human reference questions.")
@click.option("--out-dir", required=True, type=click.Path())
@click.pass_obj
def cmd_eval(ctx: CliContext, generations_path, references_path, out_dir):
    """Diversity and reference metrics per model."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("eval", ctx.settings())
    manifest.add_input(generations_path)
    manifest.add_input(references_path)

    gens = corpus.load_dataset(generations_path, "generations")
    references = corpus.load_dataset(references_path, "triplets")
    gw = ctx.build_gateway(out_dir=out, need_endpoint=False)
    result = metrics.evaluate(gens.records, references, gw.embed_values)

    diversity_doc = {
        "models": {
            m: {
                "distinct1": d.distinct1,
                "distinct2": d.distinct2,
                "clusters_per_fq": d.clusters_per_fq,
                "length": {
                    "mean": d.length.mean,
                    "shortest": d.length.shortest,
                    "longest": d.length.longest,
                    "stddev": d.length.stddev,
                },
                "n_exchanges": d.n_exchanges,
                "n_fqs": d.n_fqs,
            }
            for m, d in result.diversity.items()
        },
        "skipped": result.skipped,
    }
    reference_doc = {
        "models": {
            m: {
                "embed_sim": r.embed_sim,
                "bleu": {str(k): v for k, v in r.bleu.items()},
                "meteor": r.meteor,
                "rouge_l": r.rouge_l,
                "n_exchanges": r.n_exchanges,
            }
            for m, r in result.reference.items()
        },
        "note": "semantic similarity is sentence-embedding cosine, clamped to [0, 100]",
    }
    diversity_path = out / "diversity.json"
    reference_path = out / "reference.json"
    _json_dump(_round_floats(diversity_doc), diversity_path)
    _json_dump(_round_floats(reference_doc), reference_path)

    csv_path = out / "per_exchange.csv"
    cols = ["model", "exchange_id", "n_fqs", "distinct1", "distinct2", "clusters_per_fq",
            "embed_sim", "bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l"]
    with csv_path.open("w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in result.per_exchange:
            fh.write(",".join(
                f"{row[c]:.6f}" if isinstance(row[c], float) else str(row[c]) for c in cols
            ) + "\n")

    click.echo(render_table(
        ["model", "distinct-1", "distinct-2", "clusters/FQ", "avg len", "shortest", "longest", "sd"],
        [[m, fmt(d.distinct1), fmt(d.distinct2), fmt(d.clusters_per_fq, 3),
          fmt(d.length.mean), d.length.shortest, d.length.longest, fmt(d.length.stddev)]
         for m, d in result.diversity.items()],
        title="Diversity",
    ))
    click.echo(render_table(
        ["model", "emb sim", "B-1", "B-2", "B-3", "B-4", "METEOR", "ROUGE-L"],
        [[m, fmt(r.embed_sim), fmt(r.bleu[1]), fmt(r.bleu[2]), fmt(r.bleu[3]), fmt(r.bleu[4]),
          fmt(r.meteor), fmt(r.rouge_l)] for m, r in result.reference.items()],
        title="Against human references",
    ))
    if result.skipped:
        click.echo(f"skipped {len(result.skipped)} generation sets with no references")
    for path in (diversity_path, reference_path, csv_path):
        manifest.add_output(path)
    manifest.write(out / "manifest.json")


# ---------------------------------------------------------------------------
# judge
# ---------------------------------------------------------------------------


@cli.command("judge")
@click.argument("generations_path", type=click.Path(exists=True))
@click.option("--exchanges", "exchanges_path", required=True, type=click.Path(exists=True))
@click.option("--from-triplets", is_flag=True, help="The --exchanges file is a triplets file.")
@click.option("--ca-store", "ca_store_path", required=True, type=click.Path(exists=True),
              help="Comprehensive answers JSONL from augment.")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--scores", "scores_path", type=click.Path(exists=True), default=None,
              help="Human scores JSONL ({exchange_id, fq, score}) for the significance test.")
@click.pass_obj
def cmd_judge(ctx: CliContext, generations_path, exchanges_path, from_triplets,
              ca_store_path, out_dir, scores_path):
    """Model-judged informativeness of generated questions."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("judge", ctx.settings())
    for p in (generations_path, exchanges_path, ca_store_path):
        manifest.add_input(p)

    gens = corpus.load_dataset(generations_path, "generations")
    pair_map = _load_pair_map(exchanges_path, from_triplets)
    ca_store = augmentor.load_ca_store(ca_store_path)
    gw = ctx.build_gateway(out_dir=out)

    per_model: dict[str, list] = {}
    all_verdicts = []
    for gen in gens.records:
        verdicts = infogain.judge_generation_sets([gen], pair_map, ca_store, gw)
        per_model.setdefault(gen.model, []).extend(verdicts)
        all_verdicts.extend(verdicts)

    verdicts_path = out / "verdicts.jsonl"
    with verdicts_path.open("w", encoding="utf-8") as fh:
        for v in all_verdicts:
            fh.write(json.dumps(v.to_dict(), ensure_ascii=False) + "\n")

    summary = {
        "overall": {
            "informative_rate": infogain.informative_rate(all_verdicts),
            "n": len(all_verdicts),
        },
        "models": {
            m: {"informative_rate": infogain.informative_rate(vs), "n": len(vs)}
            for m, vs in sorted(per_model.items())
        },
    }
    summary_path = out / "judge_summary.json"
    _json_dump(summary, summary_path)

    click.echo(render_table(
        ["model", "questions", "informative %"],
        [[m, s["n"], fmt(s["informative_rate"])] for m, s in summary["models"].items()]
        + [["(overall)", summary["overall"]["n"], fmt(summary["overall"]["informative_rate"])]],
        title="Judged informativeness",
    ))

    manifest.add_output(verdicts_path)
    manifest.add_output(summary_path)

    if scores_path:
        manifest.add_input(scores_path)
        scores: dict[tuple[str, str], float] = {}
        with Path(scores_path).open("r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    scores[(obj["exchange_id"], obj["fq"])] = float(obj["score"])
        informative, rest = [], []
        for v in all_verdicts:
            key = (v.exchange_id, v.fq)
            if key not in scores:
                logger.warning("no human score for %s / %.40s", v.exchange_id, v.fq)
                continue
            (informative if v.informative else rest).append(scores[key])
        if len(informative) >= 2 and len(rest) >= 2:
            sig = infogain.significance_report(informative, rest)
            sig_path = out / "judge_significance.json"
            _json_dump(_round_floats(sig.to_dict()), sig_path)
            manifest.add_output(sig_path)
            click.echo(render_table(
                ["group", "n", "mean"],
                [["judged informative", sig.n_a, fmt(sig.mean_a, 4)],
                 ["judged not informative", sig.n_b, fmt(sig.mean_b, 4)]],
                title=f"t = {sig.t_statistic:.4f}, p = {sig.p_value:.4f}, d = {sig.cohens_d:.4f}",
            ))
        else:
            click.echo("not enough scored questions in both groups for a significance test")
    manifest.write(out / "manifest.json")


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


@cli.command("serve")
@click.option("--store", "store_dir", required=True, type=click.Path(), help="State directory.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8400, show_default=True)
@click.option("--ui", "ui_dir", type=click.Path(exists=True), default=None,
              help="Static directory with the browser client.")
@click.pass_obj
def cmd_serve(ctx: CliContext, store_dir, host, port, ui_dir):
    """Run the annotation HTTP service."""
    import uvicorn

    from .annotation.service import create_app

    store = AnnotationStore(store_dir)
    app = create_app(store, static_dir=ui_dir)
    click.echo(f"annotation service on http://{host}:{port} (store: {store_dir})")
    uvicorn.run(app, host=host, port=port, log_level="warning")


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@cli.command("report")
@click.option("--dir", "artifacts_dir", required=True, type=click.Path(exists=True),
              help="Directory holding JSON outputs of other commands.")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Write the text report here too.")
@click.pass_obj
def cmd_report(ctx: CliContext, artifacts_dir, out_path):
    """Render every known report JSON in a directory as aligned tables."""
    root = Path(artifacts_dir)
    sections: list[str] = []

    cleaning = root / "cleaning_report.json"
    if cleaning.exists():
        doc = json.loads(cleaning.read_text(encoding="utf-8"))
        sections.append(render_table(
            ["stage", "count"],
            [["input", doc["input_count"]],
             ["duplicates removed", doc["duplicates_removed"]],
             ["quality removed", doc["quality_removed"]],
             ["sensitive removed", doc["sensitive_removed"]],
             ["retained", doc["retained"]]],
            title="Cleaning",
        ))

    filter_summary = root / "filter_summary.json"
    if filter_summary.exists():
        doc = json.loads(filter_summary.read_text(encoding="utf-8"))
        sections.append(render_table(
            ["model", "FQs", "ungrammatical", "% ungrammatical"],
            [[r["model"], r["total"], r["ungrammatical"], fmt(r["pct_ungrammatical"])]
             for r in doc["rows"]],
            title="Grammar filter",
        ))

    diversity = root / "diversity.json"
    if diversity.exists():
        doc = json.loads(diversity.read_text(encoding="utf-8"))
        sections.append(render_table(
            ["model", "distinct-1", "distinct-2", "clusters/FQ", "avg len", "shortest", "longest", "sd"],
            [[m, fmt(d["distinct1"]), fmt(d["distinct2"]), fmt(d["clusters_per_fq"], 3),
              fmt(d["length"]["mean"]), d["length"]["shortest"], d["length"]["longest"],
              fmt(d["length"]["stddev"])]
             for m, d in sorted(doc["models"].items())],
            title="Diversity",
        ))

    reference = root / "reference.json"
    if reference.exists():
        doc = json.loads(reference.read_text(encoding="utf-8"))
        sections.append(render_table(
            ["model", "emb sim", "B-1", "B-2", "B-3", "B-4", "METEOR", "ROUGE-L"],
            [[m, fmt(r["embed_sim"]), fmt(r["bleu"]["1"]), fmt(r["bleu"]["2"]),
              fmt(r["bleu"]["3"]), fmt(r["bleu"]["4"]), fmt(r["meteor"]), fmt(r["rouge_l"])]
             for m, r in sorted(doc["models"].items())],
            title="Against human references",
        ))

    judge_summary = root / "judge_summary.json"
    if judge_summary.exists():
        doc = json.loads(judge_summary.read_text(encoding="utf-8"))
        sections.append(render_table(
            ["model", "questions", "informative %"],
            [[m, s["n"], fmt(s["informative_rate"])] for m, s in sorted(doc["models"].items())]
            + [["(overall)", doc["overall"]["n"], fmt(doc["overall"]["informative_rate"])]],
            title="Judged informativeness",
        ))

    annotation_summary = root / "annotation_summary.json"
    if annotation_summary.exists():
        doc = json.loads(annotation_summary.read_text(encoding="utf-8"))
        rows = []
        for label, aspects in sorted(doc.items()):
            for key, cell in aspects.items():
                if cell["n"]:
                    rows.append([label, key, fmt(float(cell["mean"]), 4),
                                 fmt(float(cell["variance"]), 4), cell["n"]])
        sections.append(render_table(
            ["model", "aspect", "mean", "variance", "n"], rows, title="Human evaluation",
        ))

    if not sections:
        raise click.UsageError(f"no report JSON files found under {artifacts_dir}")
    text = "\n".join(sections)
    click.echo(text, nl=False)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def run(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False, obj=None)
        return 0
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except corpus.CorpusError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except (FileNotFoundError, KeyError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except GatewayError as exc:
        click.echo(f"provider error: {exc}", err=True)
        return 3
    except (prompts.TemplateError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
