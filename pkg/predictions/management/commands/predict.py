from predictions.management.base import SimulationCommand
from predictions.services import storage
from predictions.services.channel_sim import gen_stream
from predictions.services.pilots import nmse
from predictions.services.pipeline import predict_online

BLOCK_COLUMNS = ["block", "start", "mode", "pilot_slots", "nmse_G"]


class Command(SimulationCommand):
    help = "Online continuous prediction over T_C steps with re-estimation every T_L steps"
    subcommand = "predict"

    def add_command_arguments(self, parser):
        parser.add_argument("--checkpoint", required=True)
        parser.add_argument("--TC", type=int, help="shortcut for --set sweep.T_C=N")
        parser.add_argument("--TL", type=int, help="shortcut for --set sweep.T_L=N")

    def extra_overrides(self, options):
        sweep = {}
        if options.get("TC") is not None:
            sweep["T_C"] = options["TC"]
        if options.get("TL") is not None:
            sweep["T_L"] = options["TL"]
        return {"sweep": sweep} if sweep else {}

    def run(self, cfg, options):
        params, digest = self.load_model(options["checkpoint"], cfg)
        directory = self.output_dir(cfg, options)
        rng = self.rng(cfg)
        sw = cfg.sweep
        blocks = gen_stream(cfg.system, sw.T_C, sw.T_L, rng.child(0))
        trace = predict_online(params, blocks, cfg.system, sw.T_C, sw.T_L, rng.child(1), g1_source=sw.g1_source,
                               g1_nmse=sw.g1_nmse, stage2_source=sw.stage2_source, refine=sw.refine,
                               data_symbols=sw.data_symbols, reflection=sw.reflection)
        storage.write_frame(trace.to_frame(), directory / "trace.csv")
        block_rows = [{"block": b.index + 1, "start": b.start, "mode": b.report.mode,
                       "pilot_slots": b.report.pilot_slots,
                       "nmse_G": float("nan") if b.G_hat is None else nmse(b.G_hat, blocks[b.index].G)}
                      for b in trace.blocks]
        storage.write_csv(block_rows, BLOCK_COLUMNS, directory / "blocks.csv")
        self.stdout.write(f"{trace.stage_runs} stage-1/2 run(s), {trace.pilots} pilot slots")
        self.record(cfg, directory, ["trace.csv", "blocks.csv"], checkpoint_hash=digest)