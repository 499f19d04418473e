# Generated by Django 5.2.7 on 2026-10-19 10:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='SimulationRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(max_length=32)),
                ('scenario_name', models.CharField(blank=True, default='', max_length=128)),
                ('scenario_digest', models.CharField(blank=True, default='', max_length=64)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('status', models.CharField(choices=[('ok', 'ok'), ('breach', 'funnel breach'), ('invalid', 'invalid input')], default='ok', max_length=16)),
                ('summary', models.JSONField(blank=True, default=dict)),
                ('output_dir', models.CharField(blank=True, default='', max_length=512)),
                ('message', models.TextField(blank=True, default='')),
            ],
            options={
                'ordering': ('-created_at',),
            },
        ),
    ]
