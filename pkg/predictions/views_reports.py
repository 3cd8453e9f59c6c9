# predictions/views_reports.py
from django.http import JsonResponse, HttpResponseBadRequest
from django.views.decorators.http import require_http_methods
from django.db.models import Avg, Min
from .models import ExperimentRun, TrainingEpoch
from .utils import make_json_safe


@require_http_methods(["GET"])
def run_list(request):
    runs = ExperimentRun.objects.all()
    subcommand = request.GET.get("subcommand")
    if subcommand:
        runs = runs.filter(subcommand=subcommand)
    out = [{
        "run_id": run.id,
        "subcommand": run.subcommand,
        "config_hash": run.config_hash,
        "created_at": run.created_at,
    } for run in runs]
    return JsonResponse(make_json_safe({"ok": True, "runs": out}))


@require_http_methods(["GET"])
def run_report(request, run_id):
    try:
        run = ExperimentRun.objects.get(id=run_id)
    except ExperimentRun.DoesNotExist:
        return HttpResponseBadRequest("Invalid run id")

    epochs = TrainingEpoch.objects.filter(run=run)
    stats = epochs.aggregate(avg_train=Avg("train_loss"), avg_val=Avg("val_loss"), best_val=Min("val_loss"))

    report = {
        "ok": True,
        "run_id": run.id,
        "manifest": {
            "subcommand": run.subcommand,
            "config": run.config,
            "config_hash": run.config_hash,
            "seeds": run.seeds,
            "checkpoint_hash": run.checkpoint_hash or None,
            "version": run.version,
            "outputs": run.csv_files,
        },
        "output_dir": run.output_dir,
        "average_train_loss": stats["avg_train"],
        "average_val_loss": stats["avg_val"],
        "best_val_loss": stats["best_val"],
        "history": [
            {"epoch": e.epoch, "train_loss": e.train_loss, "val_loss": e.val_loss, "lr": e.lr}
            for e in epochs
        ],
        "created_at": run.created_at,
    }
    return JsonResponse(make_json_safe(report))
