from predictions.management.base import SimulationCommand
from predictions.services import experiments, storage
from predictions.services.sclstm import init_params

SWEEPS = {
    "snr": experiments.ESTIMATION_COLUMNS,
    "t": experiments.T_COLUMNS,
    "N": experiments.N_COLUMNS,
    "S": experiments.WINDOW_COLUMNS,
    "g1err": experiments.G1_COLUMNS,
}
NEEDS_MODEL = ("t", "g1err")


class Command(SimulationCommand):
    help = "NMSE curves versus SNR, time step, RIS size, window length or g1 error"
    subcommand = "eval"

    def add_command_arguments(self, parser):
        parser.add_argument("--sweep", choices=sorted(SWEEPS), default="snr")
        parser.add_argument("--checkpoint", action="append", default=[],
                            help="model checkpoint; the snr sweep takes one per SNR point, in sweep order, "
                                 "and trains its own models when none is given")
        parser.add_argument("--init", choices=["zero", "random"],
                            help="evaluate an untrained network instead of a checkpoint")
        parser.add_argument("--trials", type=int, help="shortcut for --set sweep.trials=N")

    def extra_overrides(self, options):
        return {"sweep": {"trials": options["trials"]}} if options.get("trials") is not None else {}

    def snr_models(self, cfg, options):
        """Per-SNR models for the snr sweep (None: train them) and the checkpoint digest."""
        paths = options.get("checkpoint") or []
        if not paths:
            return None, None
        points = len(cfg.sweep.snr_db)
        if len(paths) != points:
            raise self.usage_error(f"--sweep snr needs one --checkpoint per SNR point ({points}), got {len(paths)}")
        loaded = [self.load_model(path, cfg) for path in paths]
        digests = [digest for _, digest in loaded]
        digest = digests[0] if len(digests) == 1 else storage.config_hash({"checkpoints": digests})
        return [params for params, _ in loaded], digest

    def run(self, cfg, options):
        sweep = options["sweep"]
        rng = self.rng(cfg)
        threads = self.threads
        params, digest = None, None
        if options.get("init"):
            params = init_params(cfg.system.M, cfg.system.N, rng.child(9), zero=options["init"] == "zero")
        elif sweep in NEEDS_MODEL:
            paths = options.get("checkpoint") or []
            if len(paths) > 1:
                raise self.usage_error(f"--sweep {sweep} takes a single --checkpoint")
            params, digest = self.load_model(paths[0] if paths else None, cfg)

        if sweep == "snr":
            if params is not None:
                models = [params] * len(cfg.sweep.snr_db)
            else:
                models, digest = self.snr_models(cfg, options)
            rows = experiments.eval_snr(cfg.system, cfg.hyper, cfg.sweep, rng, threads, models=models)
        elif sweep == "t":
            rows = experiments.eval_over_time(params, cfg.system, cfg.sweep, rng, threads)
        elif sweep == "N":
            rows = experiments.eval_ris_size(cfg.system, cfg.sweep, rng, threads)
        elif sweep == "S":
            rows = experiments.eval_window(cfg.system, cfg.hyper, cfg.sweep, rng, threads)
        else:
            rows = experiments.eval_g1_error(params, cfg.system, cfg.sweep, rng, threads)

        directory = self.output_dir(cfg, options)
        name = f"eval_{sweep}.csv"
        storage.write_csv(rows, SWEEPS[sweep], directory / name)
        self.record(cfg, directory, [name], checkpoint_hash=digest)
