"""Operator commands: run pipelines, evaluate, inspect prompts, serve mocks, report costs.

Exit codes: 0 clean, 1 when clips failed during a run, 2 for configuration or
input errors. Reports go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from openavs import dataio, metrics
from openavs.config import build_config, load_config_file
from openavs.costs import Ledger, PriceTable, format_usd
from openavs.errors import OpenAVSError, UnknownModelError
from openavs.mockserver import MockAgentServer, MockMode
from openavs.model import KnowledgeBank
from openavs.orchestrator import run_dataset
from openavs.prompting import (
    TranslatorMode,
    assemble_clip_request,
    assemble_frame_request,
)

_MODE_NAMES = {m.value: m for m in TranslatorMode}


@click.group()
@click.option("--verbose", is_flag=True, help="debug logging on stderr")
def main(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_run_config(config_path, **overrides):
    payload = load_config_file(config_path) if config_path else None
    return build_config(payload, **overrides)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--variant", type=click.Choice(["lite", "standard", "large"]), default=None)
@click.option("--prompt-consistency/--no-prompt-consistency", default=None)
@click.option("--frame-consistency/--no-frame-consistency", default=None)
@click.option("--endpoint", default=None, help="route every service to this base URL")
@click.option("--workers", type=int, default=None)
@click.option("--overlays", is_flag=True, help="also write tinted mask overlays")
def run(
    config_path,
    manifest_path,
    out_dir,
    variant,
    prompt_consistency,
    frame_consistency,
    endpoint,
    workers,
    overlays,
):
    """Run the full pipeline over a manifest and write prediction masks."""
    try:
        loaded = _load_run_config(
            config_path,
            variant=variant,
            prompt_consistency=prompt_consistency,
            frame_consistency=frame_consistency,
            endpoint_override=endpoint,
            workers=workers,
        )
        loaded.pipeline.validate_endpoints()
        samples, warnings = dataio.load_manifest(manifest_path)
    except OpenAVSError as e:
        click.echo(f"error: {e}", err=True)
        raise SystemExit(2)
    for warning in warnings:
        click.echo(f"warning: {warning}", err=True)

    ledger = Ledger()
    outcomes = run_dataset(
        samples,
        loaded.pipeline,
        out_dir=out_dir,
        ledger=ledger,
        workers=loaded.workers,
        overlays=overlays,
    )
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "ledger.json").write_text(
        json.dumps(ledger.to_json(loaded.prices), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )

    failed = [o for o in outcomes if not o.ok]
    for outcome in failed:
        click.echo(f"clip {outcome.video_id} failed: {outcome.error}", err=True)
    click.echo(f"{len(outcomes) - len(failed)}/{len(outcomes)} clips succeeded")
    raise SystemExit(1 if failed else 0)


@main.command("eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--pred", "pred_dir", required=True, type=click.Path())
@click.option("--out", "report_path", type=click.Path(), default=None)
def evaluate(manifest_path, pred_dir, report_path):
    """Score predictions against binarized ground truth and print the table."""
    try:
        samples, _ = dataio.load_manifest(manifest_path)
    except OpenAVSError as e:
        click.echo(f"error: {e}", err=True)
        raise SystemExit(2)

    pairs = []
    grouping: dict[str, list[int]] = {}
    for sample in samples:
        grouping[sample.id] = []
        if sample.gt_masks is None:
            for i in range(sample.n_frames):
                grouping[sample.id].append(len(pairs))
                pairs.append((None, None))
            continue
        for i in range(sample.n_frames):
            pred_grid = dataio.load_prediction_mask(pred_dir, sample.id, i)
            pred = metrics.binarize_prediction(pred_grid) if pred_grid is not None else None
            gt = metrics.binarize_semantic(dataio.load_mask(sample.gt_masks[i]))
            grouping[sample.id].append(len(pairs))
            pairs.append((pred, gt))

    report = metrics.aggregate(
        pairs,
        grouping,
        dataset_name=dataio.dataset_name(manifest_path),
        config_echo={"manifest": str(manifest_path), "predictions": str(pred_dir)},
    )
    if report.evaluated == 0:
        click.echo("error: no frames could be evaluated", err=True)
        raise SystemExit(2)

    click.echo(report.to_table())
    target = Path(report_path) if report_path else Path(pred_dir) / "report.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(f"report written to {target}", err=True)


@main.command()
@click.option("--bank", "bank_path", required=True, type=click.Path())
@click.option("--mode", required=True, type=click.Choice(sorted(_MODE_NAMES)))
@click.option("--frame", "frame_index", type=int, default=None)
def assemble(bank_path, mode, frame_index):
    """Print the exact translator request a recorded knowledge bank would produce."""
    p = Path(bank_path)
    if not p.is_file():
        click.echo(f"error: bank file not found: {p}", err=True)
        raise SystemExit(2)
    payload = json.loads(p.read_text(encoding="utf-8"))
    if "bank" in payload and isinstance(payload["bank"], dict):
        payload = payload["bank"]
    try:
        bank = KnowledgeBank.from_json(payload)
        translator_mode = _MODE_NAMES[mode]
        if translator_mode is TranslatorMode.MODEL_CONSISTENCY:
            if frame_index is None:
                click.echo("error: --frame is required for model mode", err=True)
                raise SystemExit(2)
            request = assemble_frame_request(bank, frame_index)
        else:
            request = assemble_clip_request(bank, translator_mode)
    except (OpenAVSError, KeyError) as e:
        click.echo(f"error: {e}", err=True)
        raise SystemExit(2)
    click.echo("=== system ===")
    click.echo(request.system_prompt)
    click.echo("=== user ===")
    click.echo(request.user_input)


@main.command("mock-serve")
@click.option("--port", type=int, default=8089)
@click.option("--host", default="127.0.0.1")
@click.option("--mode", type=click.Choice(["scripted", "derived"]), default="derived")
@click.option("--fixtures", "fixtures_path", type=click.Path(), default=None)
def mock_serve(port, host, mode, fixtures_path):
    """Serve both wire protocols deterministically until interrupted."""
    fixtures = None
    if fixtures_path:
        fixtures = json.loads(Path(fixtures_path).read_text(encoding="utf-8"))
    if mode == "scripted" and fixtures is None:
        click.echo("error: scripted mode requires --fixtures", err=True)
        raise SystemExit(2)
    try:
        server = MockAgentServer(MockMode(mode), fixtures=fixtures, host=host, port=port)
    except OSError as e:
        click.echo(f"error: cannot bind {host}:{port}: {e}", err=True)
        raise SystemExit(2)
    click.echo(f"mock server listening on {server.url} (mode={mode})", err=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


@main.command()
@click.option("--ledger", "ledger_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "report_path", type=click.Path(), default=None,
              help="also write the cost report as JSON")
def cost(ledger_path, config_path, report_path):
    """Per-video and total USD from a recorded ledger."""
    p = Path(ledger_path)
    if not p.is_file():
        click.echo(f"error: ledger file not found: {p}", err=True)
        raise SystemExit(2)
    ledger, prices = Ledger.from_json(json.loads(p.read_text(encoding="utf-8")))
    if prices is None:
        prices = PriceTable.default()
    if config_path:
        payload = load_config_file(config_path)
        for model_id, rates in payload.get("pricing", {}).items():
            prices.set(model_id, rates["input_per_1m"], rates["output_per_1m"])
    try:
        by_video, mean = ledger.per_video_cost(prices)
        total = ledger.total_usd(prices)
    except UnknownModelError as e:
        click.echo(f"error: {e}", err=True)
        raise SystemExit(2)
    width = max([len(v) for v in by_video] + [len("mean/video")])
    click.echo(f"{'video':<{width}}  cost_usd")
    for video_id in sorted(by_video):
        click.echo(f"{video_id:<{width}}  {format_usd(by_video[video_id])}")
    click.echo(f"{'total':<{width}}  {format_usd(total)}")
    if mean is not None:
        click.echo(f"{'mean/video':<{width}}  {format_usd(mean)}")
    if report_path:
        report = {
            "videos": {vid: format_usd(amount) for vid, amount in sorted(by_video.items())},
            "total_usd": format_usd(total),
            "mean_per_video_usd": format_usd(mean) if mean is not None else None,
            "records": len(ledger.records()),
        }
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        click.echo(f"cost report written to {report_path}", err=True)


@main.command("convert-dataset")
@click.option("--root", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--dataset", default="")
def convert_dataset(root, out_path, dataset):
    """Turn a clip directory tree into a manifest file."""
    try:
        manifest = dataio.convert_dataset_tree(root, dataset)
    except OpenAVSError as e:
        click.echo(f"error: {e}", err=True)
        raise SystemExit(2)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    click.echo(f"{len(manifest['samples'])} samples written to {out_path}", err=True)


if __name__ == "__main__":
    main()
