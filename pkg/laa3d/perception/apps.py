# -*- coding: utf-8 -*-
from django.apps import AppConfig


class PerceptionConfig(AppConfig):
    name = 'perception'
    verbose_name = 'Low-altitude aerial 3D perception evaluation'
