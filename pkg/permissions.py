import hmac

from django.conf import settings
from rest_framework.exceptions import NotAuthenticated
from rest_framework.permissions import BasePermission

BEARER = 'Bearer '


class IsStudyAdmin(BasePermission):
    """
    Allows access only to requests carrying the shared admin token
    (``Authorization: Bearer <STUDY_ADMIN_TOKEN>``).
    """
    def has_permission(self, request, view):
        header = request.META.get('HTTP_AUTHORIZATION', '')
        if not header.startswith(BEARER):
            raise NotAuthenticated()
        expected = settings.STUDY_ADMIN_TOKEN
        return bool(expected) and hmac.compare_digest(header[len(BEARER):].encode(), expected.encode())
