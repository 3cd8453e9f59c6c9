from predictions.management.base import SimulationCommand
from predictions.services import experiments, storage


class Command(SimulationCommand):
    help = "Average downlink sum rate versus T_S for each CSI acquisition method"
    subcommand = "sumrate"

    def add_command_arguments(self, parser):
        parser.add_argument("--checkpoint", help="predict SCLSTM CSI with this model (else a fixed-NMSE model)")
        parser.add_argument("--trials", type=int, help="shortcut for --set sweep.trials=N")

    def extra_overrides(self, options):
        return {"sweep": {"trials": options["trials"]}} if options.get("trials") is not None else {}

    def run(self, cfg, options):
        params, digest = None, None
        if options.get("checkpoint"):
            params, digest = self.load_model(options["checkpoint"], cfg)
        self.report_stage2(cfg.system)
        rows = experiments.sumrate_sweep(params, cfg.system, cfg.sweep, self.rng(cfg), self.threads)
        directory = self.output_dir(cfg, options)
        storage.write_csv(rows, experiments.RATE_COLUMNS, directory / "sumrate.csv")
        self.record(cfg, directory, ["sumrate.csv"], checkpoint_hash=digest)
