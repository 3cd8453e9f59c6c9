from predictions.management.base import SimulationCommand
from predictions.services import experiments, storage
from predictions.services.schemas import ris_grid

TABLES = {
    "overhead": ["quantity", "value"],
    "complexity": ["method", "complexity"],
    "lambda_curve": ["T_S", "tau", "method", "P_a", "lambda_d", "feasible"],
    "intersections": ["against", "tau", "T_S", "lambda_d"],
}


class Command(SimulationCommand):
    help = "Pilot overhead, feasibility thresholds, complexity counts and data-coefficient curves"
    subcommand = "overhead"

    def add_command_arguments(self, parser):
        parser.add_argument("--M", type=int)
        parser.add_argument("--K", type=int)
        parser.add_argument("--S", type=int)
        parser.add_argument("--N", type=int, help="RIS elements (factored into an Nx x Ny grid)")
        parser.add_argument("--TL", type=int, help="large-timescale block length in slots for the T_S curve")

    def extra_overrides(self, options):
        system = {k: options[k] for k in ("M", "K", "S") if options.get(k) is not None}
        if options.get("N") is not None:
            if options["N"] < 1:
                raise self.usage_error("--N must be >= 1")
            system["Nx"], system["Ny"] = ris_grid(options["N"])
        return {"system": system} if system else {}

    def run(self, cfg, options):
        T_L = options.get("TL")
        if T_L is not None and T_L < 1:
            raise self.usage_error("--TL must be >= 1")
        self.report_stage2(cfg.system)
        tables = experiments.overhead_tables(cfg.system, cfg.sweep, T_L)
        directory = self.output_dir(cfg, options)
        outputs = []
        for name, columns in TABLES.items():
            storage.write_csv(tables[name], columns, directory / f"{name}.csv")
            outputs.append(f"{name}.csv")
        for point in tables["intersections"]:
            self.stdout.write(f"intersection vs {point['against']}: tau={point['tau']:.6g} "
                              f"T_S={point['T_S']:.6g} lambda_d={point['lambda_d']:.6g}")
        self.record(cfg, directory, outputs)
