from django.db import models
from django.utils import timezone
from django.core.validators import MinValueValidator
import uuid


class ExperimentRun(models.Model):
    """One invocation of a simulation command and the artifacts it wrote."""
    SUBCOMMAND_CHOICES = (
        ("gen", "Generate dataset"),
        ("train", "Train"),
        ("predict", "Online prediction"),
        ("eval", "Evaluate"),
        ("overhead", "Overhead"),
        ("sumrate", "Sum rate"),
    )
    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    subcommand = models.CharField(max_length=16, choices=SUBCOMMAND_CHOICES)
    config = models.JSONField(default=dict)
    config_hash = models.CharField(max_length=64, db_index=True)
    seeds = models.JSONField(default=list)
    checkpoint_hash = models.CharField(max_length=64, blank=True, default="")
    output_dir = models.TextField()
    csv_files = models.JSONField(default=list)
    version = models.CharField(max_length=32)
    created_at = models.DateTimeField(default=timezone.now)

    class Meta:
        ordering = ("-created_at",)

    def __str__(self):
        return f"{self.subcommand} {self.config_hash[:12]} @ {self.created_at:%Y-%m-%d %H:%M}"


class TrainingEpoch(models.Model):
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name="epochs")
    epoch = models.IntegerField(validators=[MinValueValidator(0)])
    train_loss = models.FloatField()
    val_loss = models.FloatField()
    lr = models.FloatField()

    class Meta:
        ordering = ("epoch",)
        constraints = [models.UniqueConstraint(fields=("run", "epoch"), name="unique_run_epoch")]
