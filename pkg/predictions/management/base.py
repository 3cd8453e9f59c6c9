"""
Shared plumbing for the simulation commands: config layering, exit codes and
the run registry.

Config precedence is preset < ``--config`` file (JSON or TOML) < ``--set``.
Bad flags or config exit with status 2, runtime failures with status 1.
"""
import copy
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError

from predictions import __version__
from predictions.models import ExperimentRun, TrainingEpoch
from predictions.utils import make_json_safe
from predictions.services import storage
from predictions.services.analytics import pilot_slots_per_block
from predictions.services.errors import RisPredictError
from predictions.services.numerics import Rng
from predictions.services.pilots import block_pilot_slots, stage2_mode
from predictions.services.schemas import PRESETS, ExperimentConfig, RunManifest
from predictions.services.training import load_checkpoint

logger = logging.getLogger(__name__)

USAGE = 2
RUNTIME = 1


def deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def parse_override(item: str) -> Dict[str, Any]:
    """``a.b=value`` -> {"a": {"b": value}}; values are JSON when they parse, else strings."""
    if "=" not in item:
        raise CommandError(f"--set expects key=value, got {item!r}", returncode=USAGE)
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise CommandError(f"empty key in --set {item!r}", returncode=USAGE)
    doc: Dict[str, Any] = {parts[-1]: value}
    for part in reversed(parts[:-1]):
        doc = {part: doc}
    return doc


def read_config_file(path: str) -> Dict[str, Any]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise CommandError(f"cannot read config {path}: {e}", returncode=USAGE)
    try:
        if p.suffix == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise CommandError(f"invalid config {path}: {e}", returncode=USAGE)


class SimulationCommand(BaseCommand):
    subcommand = ""

    def add_arguments(self, parser):
        parser.add_argument("--config", help="JSON or TOML experiment config")
        parser.add_argument("--preset", choices=sorted(PRESETS), help="named parameter set")
        parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                            help="override a config value, dotted keys reach nested blocks")
        parser.add_argument("--seed", type=int, help="shortcut for --set system.seed=N")
        parser.add_argument("--out", help="output directory (default: <RIS_PREDICT_OUTPUT_DIR>/<cmd>-<hash>)")
        parser.add_argument("--threads", type=int, help="parallel cells (default RIS_PREDICT_THREADS)")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def extra_overrides(self, options) -> Dict[str, Any]:
        return {}

    def load_config(self, options) -> ExperimentConfig:
        doc: Dict[str, Any] = {}
        if options.get("preset"):
            doc = deep_merge(doc, PRESETS[options["preset"]])
        if options.get("config"):
            doc = deep_merge(doc, read_config_file(options["config"]))
        for item in options.get("overrides") or []:
            doc = deep_merge(doc, parse_override(item))
        if options.get("seed") is not None:
            doc = deep_merge(doc, {"system": {"seed": options["seed"]}})
        doc = deep_merge(doc, self.extra_overrides(options))
        try:
            return ExperimentConfig.model_validate(doc)
        except ValidationError as e:
            raise CommandError(f"invalid configuration:\n{e}", returncode=USAGE)

    def handle(self, *args, **options):
        cfg = self.load_config(options)
        self.threads = options.get("threads")
        try:
            self.run(cfg, options)
        except CommandError:
            raise
        except ValidationError as e:
            raise CommandError(f"invalid configuration:\n{e}", returncode=USAGE)
        except RisPredictError as e:
            logger.debug("%s failed", self.subcommand, exc_info=True)
            raise CommandError(f"{type(e).__name__}: {e}", returncode=RUNTIME)

    def run(self, cfg: ExperimentConfig, options) -> None:
        raise NotImplementedError

    def rng(self, cfg: ExperimentConfig) -> Rng:
        return Rng(cfg.system.seed)

    def output_dir(self, cfg: ExperimentConfig, options) -> Path:
        return storage.run_dir(self.subcommand, storage.config_hash(cfg.model_dump()), options.get("out"))

    def load_model(self, path: Optional[str], cfg: ExperimentConfig):
        """Checkpoint params and its sha256; a missing path is a usage error."""
        if not path:
            raise CommandError("--checkpoint is required", returncode=USAGE)
        if not Path(path).is_file():
            raise CommandError(f"checkpoint {path} not found", returncode=USAGE)
        params, _ = load_checkpoint(path, cfg.system)
        return params, storage.file_sha256(path)

    def record(self, cfg: ExperimentConfig, directory: Path, outputs: List[str],
               checkpoint_hash: Optional[str] = None, history: Optional[List[dict]] = None) -> ExperimentRun:
        """Write manifest.json next to the outputs and register the run."""
        config = cfg.model_dump()
        digest = storage.config_hash(config)
        manifest = RunManifest(subcommand=self.subcommand, config=config, config_hash=digest,
                               seeds=[cfg.system.seed], checkpoint_hash=checkpoint_hash, version=__version__,
                               outputs=sorted(outputs))
        storage.write_manifest(manifest, directory)
        run = ExperimentRun.objects.create(
            subcommand=self.subcommand, config=make_json_safe(config), config_hash=digest,
            seeds=[cfg.system.seed], checkpoint_hash=checkpoint_hash or "", output_dir=str(directory),
            csv_files=sorted(outputs), version=__version__,
        )
        if history:
            TrainingEpoch.objects.bulk_create([
                TrainingEpoch(run=run, epoch=h["epoch"], train_loss=h["train_loss"], val_loss=h["val_loss"], lr=h["lr"])
                for h in history
            ])
        self.stdout.write(self.style.SUCCESS(f"{self.subcommand}: wrote {', '.join(sorted(outputs))} to {directory}"))
        self.stdout.write(f"Run UUID: {run.id}")
        return run

    def usage_error(self, message: str) -> CommandError:
        return CommandError(message, returncode=USAGE)

    def report_stage2(self, system) -> None:
        """Print the stage-2 estimator simulated blocks use, warning when its cost is not the closed-form P_L."""
        mode = stage2_mode(system)
        used = block_pilot_slots(system, mode)
        self.stdout.write(f"stage 2: {mode}, {used} pilot slots per block")
        P_L = pilot_slots_per_block(system.N, system.K, system.M, system.S)
        if used != P_L:
            self.stdout.write(self.style.WARNING(
                f"P_L={P_L} assumes the reduced stage-2 estimator; simulated blocks spend {used} slots"))
