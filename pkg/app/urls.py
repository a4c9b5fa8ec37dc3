"""
URL configuration for the reBandit project.

The decision service lives under /api/study/; simulation is driven from
management commands and has no routes.
"""
from django.conf import settings
from django.urls import path, include
# swagger imports
from drf_yasg import openapi
from drf_yasg.views import get_schema_view
from rest_framework import permissions

schema_view = get_schema_view(
    openapi.Info(
        title="reBandit decision service",
        default_version='v1',
        description="Per-request treatment decisions, reward ingestion and scheduled posterior updates",
    ),
    public=True,
    permission_classes=[permissions.AllowAny],
)
urlpatterns = [
    # App URLs
    path('api/study/', include('app.study.urls')),
]

if settings.DEBUG:
    # Documentation
    urlpatterns += [path('swagger/', schema_view.with_ui('swagger', cache_timeout=0), name='schema-swagger-ui')]
