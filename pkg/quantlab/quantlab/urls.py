"""
URL configuration for quantlab project.

Only the admin is served; it lists the experiment run registry.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
