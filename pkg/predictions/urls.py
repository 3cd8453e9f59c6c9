# predictions/urls.py
from django.urls import path
from . import views_reports

urlpatterns = [
    path("api/runs", views_reports.run_list),
    path("api/runs/<uuid:run_id>/report", views_reports.run_report),
]
