import logging

from rest_framework import status
from rest_framework.views import exception_handler
from rest_framework.exceptions import PermissionDenied, NotAuthenticated, ValidationError, ParseError
from django.conf import settings

from app.bandit.exceptions import (BanditError, ConfigError, IllConditionedError, InvalidHyperparametersError,
                                   InvalidInputError)
from app.global_constants import ErrorMessage
from app.study.exceptions import (DuplicateRegistrationError, ReplayMismatchError, RewardConflictError,
                                  StudyFullError, UnknownDecisionError, UnknownUserError)
from app.utils import get_response_schema

logger = logging.getLogger(__name__)

# domain error -> (message, status)
DOMAIN_ERRORS = (
    ((UnknownUserError, UnknownDecisionError), ErrorMessage.NOT_FOUND, status.HTTP_404_NOT_FOUND),
    (StudyFullError, ErrorMessage.STUDY_FULL, status.HTTP_409_CONFLICT),
    (DuplicateRegistrationError, ErrorMessage.ALREADY_REGISTERED, status.HTTP_409_CONFLICT),
    (RewardConflictError, ErrorMessage.REWARD_CONFLICT, status.HTTP_409_CONFLICT),
    ((InvalidInputError, ConfigError), ErrorMessage.INVALID_PAYLOAD, status.HTTP_422_UNPROCESSABLE_ENTITY),
    ((IllConditionedError, InvalidHyperparametersError, ReplayMismatchError), ErrorMessage.NUMERICAL_FAILURE,
     status.HTTP_500_INTERNAL_SERVER_ERROR),
)


def _detail(exc):
    return {settings.REST_FRAMEWORK['NON_FIELD_ERRORS_KEY']: [str(exc)]}


def custom_exception_handler(exc, context):
    if isinstance(exc, PermissionDenied):
        return get_response_schema({}, ErrorMessage.FORBIDDEN, PermissionDenied.status_code)

    if isinstance(exc, NotAuthenticated):
        return get_response_schema(
            {},
            ErrorMessage.UNAUTHORIZED,
            NotAuthenticated.status_code
        )

    if isinstance(exc, (ValidationError, ParseError)):
        return get_response_schema(exc.detail if isinstance(exc, ValidationError) else _detail(exc.detail),
                                   ErrorMessage.INVALID_PAYLOAD, status.HTTP_422_UNPROCESSABLE_ENTITY)

    if isinstance(exc, BanditError):
        for kinds, message, status_code in DOMAIN_ERRORS:
            if isinstance(exc, kinds):
                if status_code >= 500:
                    logger.error(f"{type(exc).__name__} in {context['view'].__class__.__name__}: {exc}")
                return get_response_schema(_detail(exc), message, status_code)
        logger.exception('Unmapped domain error')
        return get_response_schema(_detail(exc), ErrorMessage.SOMETHING_WENT_WRONG,
                                   status.HTTP_500_INTERNAL_SERVER_ERROR)

    return exception_handler(exc, context)
