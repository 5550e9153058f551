# Generated by Django 5.2.7 on 2026-10-18 09:00

import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('code', models.CharField(max_length=128)),
                ('kind', models.CharField(choices=[('error_curve', 'Error Curve'), ('dither_comparison', 'Dither Comparison'), ('lasso_vs_ols', 'Lasso vs OLS'), ('real_data', 'Real Data Study'), ('calibration', 'Lambda Calibration')], max_length=32)),
                ('model', models.CharField(max_length=32)),
                ('schema_version', models.PositiveIntegerField(default=1)),
                ('config', models.JSONField(help_text='Fully resolved experiment configuration.')),
                ('base_seed', models.BigIntegerField(default=0)),
                ('output_dir', models.CharField(max_length=255)),
                ('record_count', models.PositiveIntegerField(default=0)),
                ('failed_count', models.PositiveIntegerField(default=0)),
                ('status', models.CharField(choices=[('running', 'Running'), ('finished', 'Finished'), ('failed', 'Failed')], default='running', max_length=16)),
                ('message', models.TextField(blank=True)),
                ('started_at', models.DateTimeField(default=django.utils.timezone.now)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ['-started_at'],
            },
        ),
    ]
