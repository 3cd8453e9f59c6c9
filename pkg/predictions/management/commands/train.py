from pathlib import Path

from predictions.management.base import SimulationCommand
from predictions.services import storage
from predictions.services.errors import CheckpointIncompatibleError
from predictions.services.training import build_dataset, load_dataset, save_checkpoint, train

HISTORY_COLUMNS = ["epoch", "train_loss", "val_loss", "lr"]


class Command(SimulationCommand):
    help = "Train the SCLSTM and write the best-validation checkpoint"
    subcommand = "train"

    def add_command_arguments(self, parser):
        parser.add_argument("--dataset", help="dataset.npz from `gen` (built on the fly when omitted)")
        parser.add_argument("--epochs", type=int, help="shortcut for --set hyper.max_epochs=N")

    def extra_overrides(self, options):
        return {"hyper": {"max_epochs": options["epochs"]}} if options.get("epochs") is not None else {}

    def run(self, cfg, options):
        directory = self.output_dir(cfg, options)
        rng = self.rng(cfg)
        if options.get("dataset"):
            if not Path(options["dataset"]).is_file():
                raise self.usage_error(f"dataset {options['dataset']} not found")
            ds = load_dataset(options["dataset"])
            s = cfg.system
            if (ds.M, ds.N, ds.K, ds.S) != (s.M, s.N, s.K, s.S):
                raise CheckpointIncompatibleError(
                    f"dataset is M={ds.M} N={ds.N} K={ds.K} S={ds.S}, config is M={s.M} N={s.N} K={s.K} S={s.S}")
        else:
            ds = build_dataset(cfg.system, cfg.hyper, rng.child(0))
        result = train(ds, cfg.hyper, rng.child(1))
        digest = save_checkpoint(result.params, ds.K, ds.S, directory / "checkpoint.scls")
        storage.write_csv(result.history, HISTORY_COLUMNS, directory / "history.csv")
        self.stdout.write(f"best epoch {result.best_epoch}, val loss {result.history[result.best_epoch]['val_loss']:.6g}")
        self.record(cfg, directory, ["history.csv"], checkpoint_hash=digest, history=result.history)
