# /ucsl/main.py
import functools
import logging
import os
import sys
from typing import Annotated, Optional

import click
import typer
from pythonjsonlogger.json import JsonFormatter
from rich.console import Console

import mot_io
import synthetic_world
import workflows
from config import echo_config, load_run_config
from exceptions import InvalidParameter, UcslError
from metrics import format_report, summary_line
from models import MotKind, ScenarioSpec
from utils import ensure_output_dir, json_line, write_json_lines

logger = logging.getLogger(__name__)

# --- CLI Application ---

app = typer.Typer(
    name="ucsl",
    help="Unsupervised contrast losses for identity embeddings, with a synthetic world, tracker and metrics.",
    add_completion=False,
    no_args_is_help=True,
    pretty_exceptions_enable=False,
)


def configure_logging(level: str) -> None:
    """Structured JSON logs on stderr; stdout is reserved for results."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    logging.basicConfig(level=level.upper(), handlers=[handler], force=True)


@app.callback()
def cli(
    log_level: Annotated[str, typer.Option("--log-level", help="DEBUG, INFO, WARNING or ERROR.")] = "WARNING",
):
    configure_logging(log_level)


def handle_errors(command):
    """Turns library errors into exit codes: 1 for config/usage, 2 for data."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except UcslError as e:
            logger.error(e.detail, extra={"error": type(e).__name__, "detail": e.detail})
            raise typer.Exit(code=e.exit_code)
        except OSError as e:
            logger.error(f"I/O error: {e}", extra={"error": type(e).__name__, "detail": str(e)})
            raise typer.Exit(code=2)
        except Exception as e:
            logger.error(f"Unexpected error: {e}", exc_info=True, extra={"error": type(e).__name__})
            raise typer.Exit(code=2)

    return wrapper


def _int_list(text: Optional[str], name: str) -> Optional[list[int]]:
    if text is None:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise InvalidParameter(f"--{name} must be a comma-separated list of integers, got {text!r}.")


# --- Shared options ---

ConfigOpt = Annotated[Optional[str], typer.Option("--config", help="Flat YAML file of run config keys.")]
OutputDirOpt = Annotated[Optional[str], typer.Option("--output-dir", help="Directory for written files.")]
SeedOpt = Annotated[Optional[int], typer.Option("--seed", help="Scenario seed.")]
SpecOpt = Annotated[Optional[str], typer.Option("--spec", help="YAML scenario document.")]
DetOpt = Annotated[Optional[str], typer.Option("--det", help="MOT detection file.")]
EmbOpt = Annotated[Optional[str], typer.Option("--emb", help="Embedding sidecar of the detection file.")]

TauOpt = Annotated[Optional[float], typer.Option("--tau", help="Softmax temperature.")]
ThetaOpt = Annotated[Optional[float], typer.Option("--theta", help="Ambiguity cosine threshold.")]
EpsilonOpt = Annotated[Optional[float], typer.Option("--epsilon", help="Log clamp.")]
IntervalOpt = Annotated[Optional[int], typer.Option("--interval", help="Frame gap g of a triple.")]
WDscOpt = Annotated[Optional[float], typer.Option("--w-dsc", help="Weight of direct self-contrast.")]
WIscOpt = Annotated[Optional[float], typer.Option("--w-isc", help="Weight of indirect self-contrast.")]
WCcOpt = Annotated[Optional[float], typer.Option("--w-cc", help="Weight of cross-contrast.")]
WAcOpt = Annotated[Optional[float], typer.Option("--w-ac", help="Weight of ambiguity contrast.")]
PairsOpt = Annotated[Optional[str], typer.Option("--indirect-pairs", help="adjacent or all.")]

EmbedGateOpt = Annotated[Optional[float], typer.Option("--embed-gate", help="Max stage-1 embedding distance.")]
IouGateOpt = Annotated[Optional[float], typer.Option("--iou-gate", help="Min stage-2 IoU.")]
BufferOpt = Annotated[Optional[int], typer.Option("--buffer", help="Frames a lost track is kept.")]
EmaOpt = Annotated[Optional[float], typer.Option("--ema-alpha", help="Track embedding smoothing.")]
MinConfOpt = Annotated[Optional[float], typer.Option("--min-confidence", help="Detection confidence filter.")]
MotionGateOpt = Annotated[Optional[bool], typer.Option("--motion-gate/--no-motion-gate", help="Mahalanobis gate in stage 1.")]
LostIouOpt = Annotated[
    Optional[bool], typer.Option("--lost-iou-matching/--no-lost-iou-matching", help="Lost tracks join stage 2.")
]
IouThresholdOpt = Annotated[Optional[float], typer.Option("--iou-threshold", help="Evaluation IoU threshold.")]

StepsOpt = Annotated[Optional[int], typer.Option("--steps", help="Gradient descent steps.")]
LrOpt = Annotated[Optional[float], typer.Option("--lr", help="Learning rate in (0, 1].")]
WorkersOpt = Annotated[Optional[int], typer.Option("--workers", help="Threads for independent ablation runs.")]


def _detections(cfg, det: Optional[str], emb: Optional[str]):
    if det and emb:
        return mot_io.read_detections(det, emb)
    if det or emb:
        raise InvalidParameter("--det and --emb must be given together.")
    if cfg.scenario:
        _, detections = synthetic_world.generate(synthetic_world.load_spec(cfg.scenario))
        return detections
    raise InvalidParameter("Pass --det and --emb, or a scenario with --spec.")


# --- Commands ---


@app.command()
@handle_errors
def simulate(
    spec: SpecOpt = None,
    seed: SeedOpt = None,
    config: ConfigOpt = None,
    output_dir: OutputDirOpt = None,
):
    """Generate a synthetic scenario: gt.txt, det.txt, det.emb and scenario.yaml."""
    cfg = load_run_config(config, scenario=spec, seed=seed, output_dir=output_dir)
    scenario = synthetic_world.load_spec(cfg.scenario) if cfg.scenario else ScenarioSpec(seed=cfg.seed)
    if seed is not None:
        scenario = scenario.model_copy(update={"seed": seed})
    paths = workflows.simulate(scenario, cfg.output_dir)
    paths["run_config.yaml"] = echo_config(cfg)
    typer.echo(json_line(paths))


@app.command()
@handle_errors
def losses(
    det: DetOpt = None,
    emb: EmbOpt = None,
    spec: SpecOpt = None,
    tau: TauOpt = None,
    theta: ThetaOpt = None,
    epsilon: EpsilonOpt = None,
    interval: IntervalOpt = None,
    w_dsc: WDscOpt = None,
    w_isc: WIscOpt = None,
    w_cc: WCcOpt = None,
    w_ac: WAcOpt = None,
    indirect_pairs: PairsOpt = None,
    config: ConfigOpt = None,
    output_dir: OutputDirOpt = None,
):
    """Evaluate the contrast losses on every frame triple; one JSON line per triple."""
    cfg = load_run_config(
        config,
        scenario=spec,
        tau=tau,
        theta=theta,
        epsilon=epsilon,
        interval=interval,
        w_dsc=w_dsc,
        w_isc=w_isc,
        w_cc=w_cc,
        w_ac=w_ac,
        indirect_pairs=indirect_pairs,
        output_dir=output_dir,
    )
    rows = workflows.loss_rows(_detections(cfg, det, emb), cfg.loss_config())
    write_json_lines(rows, cfg.output_dir, workflows.LOSSES_FILENAME)
    echo_config(cfg)
    for row in rows:
        typer.echo(json_line(row))


@app.command()
@handle_errors
def optimize(
    det: DetOpt = None,
    emb: EmbOpt = None,
    spec: SpecOpt = None,
    steps: StepsOpt = None,
    lr: LrOpt = None,
    variant: Annotated[
        Optional[str], typer.Option("--variant", help="Loss subset: dsc, isc, sc, sc+cc or sc+cc+ac.")
    ] = None,
    tau: TauOpt = None,
    theta: ThetaOpt = None,
    interval: IntervalOpt = None,
    w_dsc: WDscOpt = None,
    w_isc: WIscOpt = None,
    w_cc: WCcOpt = None,
    w_ac: WAcOpt = None,
    indirect_pairs: PairsOpt = None,
    config: ConfigOpt = None,
    output_dir: OutputDirOpt = None,
):
    """Descend on the sequence loss; writes trace.jsonl plus det.opt.txt / det.opt.emb for tracking."""
    cfg = load_run_config(
        config,
        scenario=spec,
        steps=steps,
        lr=lr,
        tau=tau,
        theta=theta,
        interval=interval,
        w_dsc=w_dsc,
        w_isc=w_isc,
        w_cc=w_cc,
        w_ac=w_ac,
        indirect_pairs=indirect_pairs,
        output_dir=output_dir,
    )
    loss_cfg = cfg.loss_config()
    if variant is not None:
        if variant not in workflows.VARIANT_WEIGHTS or variant == "raw":
            raise InvalidParameter(f"Unknown loss variant {variant!r}.")
        loss_cfg = workflows.with_variant(loss_cfg, variant)
    trace, optimized = workflows.optimize_embeddings(_detections(cfg, det, emb), loss_cfg, cfg.steps, cfg.lr)

    out = ensure_output_dir(cfg.output_dir)
    rows = [{"step": t.step, "mean_self_diag": t.mean_self_diag, **t.loss_report.model_dump()} for t in trace]
    write_json_lines(rows, out, workflows.TRACE_FILENAME)
    mot_io.write_detections(
        optimized, os.path.join(out, workflows.OPTIMIZED_DET_FILENAME), os.path.join(out, workflows.OPTIMIZED_EMB_FILENAME)
    )
    echo_config(cfg)
    typer.echo(json_line(rows[-1]))


@app.command()
@handle_errors
def track(
    det: DetOpt = None,
    emb: EmbOpt = None,
    spec: SpecOpt = None,
    embed_gate: EmbedGateOpt = None,
    iou_gate: IouGateOpt = None,
    buffer: BufferOpt = None,
    ema_alpha: EmaOpt = None,
    min_confidence: MinConfOpt = None,
    motion_gate: MotionGateOpt = None,
    lost_iou_matching: LostIouOpt = None,
    config: ConfigOpt = None,
    output_dir: OutputDirOpt = None,
):
    """Run the tracker over a detection sequence; writes result.txt."""
    cfg = load_run_config(
        config,
        scenario=spec,
        embed_gate=embed_gate,
        iou_gate=iou_gate,
        buffer=buffer,
        ema_alpha=ema_alpha,
        min_confidence=min_confidence,
        motion_gate=motion_gate,
        lost_iou_matching=lost_iou_matching,
        output_dir=output_dir,
    )
    records = workflows.track(_detections(cfg, det, emb), cfg.tracker_config())
    path = os.path.join(ensure_output_dir(cfg.output_dir), workflows.RESULT_FILENAME)
    mot_io.write(records, path)
    echo_config(cfg)
    typer.echo(json_line({"result": path, "records": len(records), "tracks": len({r.id for r in records})}))


@app.command(name="eval")
@handle_errors
def evaluate(
    gt: Annotated[str, typer.Option("--gt", help="Ground-truth MOT file.")],
    result: Annotated[str, typer.Option("--result", help="Tracker result MOT file.")],
    iou_threshold: IouThresholdOpt = None,
    as_json: Annotated[bool, typer.Option("--json", help="Print only the JSON summary line.")] = False,
    config: ConfigOpt = None,
):
    """Score a result file against ground truth (MOTA, IDF1, FP, FN, IDS, MT, ML)."""
    cfg = load_run_config(config, iou_threshold=iou_threshold)
    report = workflows.evaluate(mot_io.read(gt, MotKind.GT), mot_io.read(result, MotKind.RESULT), cfg.iou_threshold)
    if not as_json:
        Console().print(format_report(report))
    typer.echo(summary_line(report))


@app.command()
@handle_errors
def ablate(
    seeds: Annotated[int, typer.Option("--seeds", help="Number of seeds, starting at --seed.")] = 5,
    seed: SeedOpt = None,
    variants: Annotated[Optional[str], typer.Option("--variants", help="Comma-separated loss variants.")] = None,
    intervals: Annotated[Optional[str], typer.Option("--intervals", help="Comma-separated frame gaps.")] = None,
    dims: Annotated[Optional[str], typer.Option("--dims", help="Comma-separated embedding dimensions.")] = None,
    steps: StepsOpt = None,
    lr: LrOpt = None,
    workers: WorkersOpt = None,
    tau: TauOpt = None,
    theta: ThetaOpt = None,
    embed_gate: EmbedGateOpt = None,
    iou_gate: IouGateOpt = None,
    buffer: BufferOpt = None,
    iou_threshold: IouThresholdOpt = None,
    as_json: Annotated[bool, typer.Option("--json", help="Print JSON lines instead of a table.")] = False,
    config: ConfigOpt = None,
    output_dir: OutputDirOpt = None,
):
    """Compare loss variants on the occlusion benchmark; writes ablation.jsonl."""
    if seeds < 1:
        raise InvalidParameter(f"--seeds must be >= 1, got {seeds}.")
    cfg = load_run_config(
        config,
        seed=seed,
        steps=steps,
        lr=lr,
        workers=workers,
        tau=tau,
        theta=theta,
        embed_gate=embed_gate,
        iou_gate=iou_gate,
        buffer=buffer,
        iou_threshold=iou_threshold,
        output_dir=output_dir,
    )
    variant_list = [v.strip() for v in variants.split(",")] if variants else list(workflows.VARIANT_WEIGHTS)
    rows = workflows.ablate(
        seeds=range(cfg.seed, cfg.seed + seeds),
        loss_cfg=cfg.loss_config(),
        tracker_cfg=cfg.tracker_config(),
        steps=cfg.steps,
        lr=cfg.lr,
        iou_threshold=cfg.iou_threshold,
        variants=variant_list,
        intervals=_int_list(intervals, "intervals"),
        dims=_int_list(dims, "dims") or [128],
        workers=cfg.workers,
    )
    write_json_lines([r.model_dump() for r in rows], cfg.output_dir, workflows.ABLATION_FILENAME)
    echo_config(cfg)
    if as_json:
        for r in rows:
            typer.echo(json_line(r.model_dump()))
    else:
        Console().print(workflows.ablation_table(rows))


def main() -> None:
    """Console entry point; usage errors exit with 1 like config errors."""
    try:
        code = app(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as e:
        e.show()
        sys.exit(1)
    sys.exit(code or 0)


if __name__ == "__main__":
    main()
