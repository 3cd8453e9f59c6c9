# Generated by Django 5.2.6

import django.core.validators
import django.db.models.deletion
import django.utils.timezone
import uuid
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('subcommand', models.CharField(choices=[('gen', 'Generate dataset'), ('train', 'Train'), ('predict', 'Online prediction'), ('eval', 'Evaluate'), ('overhead', 'Overhead'), ('sumrate', 'Sum rate')], max_length=16)),
                ('config', models.JSONField(default=dict)),
                ('config_hash', models.CharField(db_index=True, max_length=64)),
                ('seeds', models.JSONField(default=list)),
                ('checkpoint_hash', models.CharField(blank=True, default='', max_length=64)),
                ('output_dir', models.TextField()),
                ('csv_files', models.JSONField(default=list)),
                ('version', models.CharField(max_length=32)),
                ('created_at', models.DateTimeField(default=django.utils.timezone.now)),
            ],
            options={
                'ordering': ('-created_at',),
            },
        ),
        migrations.CreateModel(
            name='TrainingEpoch',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('epoch', models.IntegerField(validators=[django.core.validators.MinValueValidator(0)])),
                ('train_loss', models.FloatField()),
                ('val_loss', models.FloatField()),
                ('lr', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='epochs', to='predictions.experimentrun')),
            ],
            options={
                'ordering': ('epoch',),
                'constraints': [models.UniqueConstraint(fields=('run', 'epoch'), name='unique_run_epoch')],
            },
        ),
    ]
