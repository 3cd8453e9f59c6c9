from django.contrib import admin
from .models import ExperimentRun, TrainingEpoch


class TrainingEpochInline(admin.TabularInline):
    model = TrainingEpoch
    extra = 0
    readonly_fields = ("epoch", "train_loss", "val_loss", "lr")


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ("id", "subcommand", "config_hash", "version", "created_at")
    list_filter = ("subcommand", "version")
    search_fields = ("config_hash", "checkpoint_hash")
    inlines = (TrainingEpochInline,)


@admin.register(TrainingEpoch)
class TrainingEpochAdmin(admin.ModelAdmin):
    list_display = ("id", "run", "epoch", "train_loss", "val_loss", "lr")
