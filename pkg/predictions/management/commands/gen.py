from predictions.management.base import SimulationCommand
from predictions.services import storage
from predictions.services.channel_sim import gen_episode
from predictions.services.episode_io import save_episode
from predictions.services.training import build_dataset, save_dataset


class Command(SimulationCommand):
    help = "Generate a training/validation/test dataset (and optionally sample episodes)"
    subcommand = "gen"

    def add_command_arguments(self, parser):
        parser.add_argument("--episodes", type=int, default=0, help="also write this many raw sample episodes")
        parser.add_argument("--text", action="store_true", help="write sample episodes as JSON text")

    def run(self, cfg, options):
        if options["episodes"] < 0:
            raise self.usage_error("--episodes must be >= 0")
        directory = self.output_dir(cfg, options)
        rng = self.rng(cfg)
        ds = build_dataset(cfg.system, cfg.hyper, rng.child(0))
        save_dataset(ds, directory / "dataset.npz")
        storage.write_json({"M": ds.M, "N": ds.N, "K": ds.K, "S": ds.S, "scale": ds.scale, "meta": ds.meta,
                            "system": cfg.system.model_dump()}, directory / "dataset.json")

        suffix = ".json" if options["text"] else ".rise"
        for i in range(options["episodes"]):
            ep = gen_episode(cfg.system, cfg.system.S + 1, rng.child(1, i))
            save_episode(ep, directory / f"episode_{i:04d}{suffix}")

        rows = [
            {"split": "train", "samples": len(ds.y_train), "scale": ds.scale},
            {"split": "val", "samples": len(ds.y_val), "scale": ds.scale},
            {"split": "test", "samples": len(ds.y_test), "scale": ds.scale},
        ]
        storage.write_csv(rows, ["split", "samples", "scale"], directory / "dataset_summary.csv")
        self.record(cfg, directory, ["dataset_summary.csv"])
